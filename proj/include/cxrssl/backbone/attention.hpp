#pragma once

#include "cxrssl/autograd/tape.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/tensor.hpp"

#include <cmath>
#include <vector>

namespace cxrssl {

namespace detail {

// In-place stabilized softmax over each row.
template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto m = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - m).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace detail

// softmax(Q K^T / sqrt(d_k)) V. Also returns the attention map when `probs`
// is non-null.
template <typename T>
Mat<T> attention(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, Mat<T>* probs = nullptr) {
  if (q.cols() != k.cols()) {
    throw ShapeMismatch("attention: Q has d_k=" + std::to_string(q.cols()) + " but K has " +
                        std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw ShapeMismatch("attention: K has " + std::to_string(k.rows()) + " rows but V has " +
                        std::to_string(v.rows()));
  }
  if (q.cols() == 0 || q.rows() == 0 || k.rows() == 0) {
    throw ShapeMismatch("attention: empty input");
  }
  if (!all_finite(q) || !all_finite(k) || !all_finite(v)) {
    throw NonFiniteError("attention: non-finite input");
  }
  Mat<T> s = (q * k.transpose()) / std::sqrt(static_cast<T>(q.cols()));
  detail::softmax_rows_inplace(s);
  Mat<T> out = s * v;
  if (probs) *probs = std::move(s);
  return out;
}

namespace ag {

// Multi-head self-attention over a batch packed as rows. `qkv` is
// (batch*tokens) x (3*dim) holding [Q | K | V]; head h uses columns
// [h*d_k, (h+1)*d_k) of each third. Output is (batch*tokens) x dim.
template <typename T>
Var multi_head_attention(Tape<T>& t, Var qkv, int batch, int tokens, int heads) {
  const Mat<T>& x = t.value(qkv);
  if (x.rows() != static_cast<Eigen::Index>(batch) * tokens || x.cols() % (3 * heads) != 0) {
    throw ShapeMismatch("multi_head_attention: qkv " + shape_str(x) + " for batch " +
                        std::to_string(batch) + " x " + std::to_string(tokens) + " tokens, " +
                        std::to_string(heads) + " heads");
  }
  const Eigen::Index dim = x.cols() / 3;
  const Eigen::Index dk = dim / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));
  Mat<T> out(x.rows(), dim);
  std::vector<Mat<T>> probs(static_cast<std::size_t>(batch) * heads);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * tokens;
    for (int h = 0; h < heads; ++h) {
      const auto q = x.block(r0, h * dk, tokens, dk);
      const auto k = x.block(r0, dim + h * dk, tokens, dk);
      const auto v = x.block(r0, 2 * dim + h * dk, tokens, dk);
      Mat<T> s = (q * k.transpose()) * scale;
      cxrssl::detail::softmax_rows_inplace(s);
      out.block(r0, h * dk, tokens, dk).noalias() = s * v;
      probs[static_cast<std::size_t>(b) * heads + h] = std::move(s);
    }
  }
  return t.push(
      std::move(out), t.requires_grad(qkv),
      [qkv, batch, tokens, heads, dim, dk, scale, probs = std::move(probs)](Tape<T>& tp,
                                                                          const Mat<T>& g) {
        const Mat<T>& x = tp.value(qkv);
        tp.accumulate_with(qkv, [&](Mat<T>& gx) {
          for (int b = 0; b < batch; ++b) {
            const Eigen::Index r0 = static_cast<Eigen::Index>(b) * tokens;
            for (int h = 0; h < heads; ++h) {
              const Mat<T>& p = probs[static_cast<std::size_t>(b) * heads + h];
              const auto q = x.block(r0, h * dk, tokens, dk);
              const auto k = x.block(r0, dim + h * dk, tokens, dk);
              const auto v = x.block(r0, 2 * dim + h * dk, tokens, dk);
              const auto go = g.block(r0, h * dk, tokens, dk);
              gx.block(r0, 2 * dim + h * dk, tokens, dk).noalias() += p.transpose() * go;
              Mat<T> gp = go * v.transpose();
              // d softmax: dS = P * (dP - rowsum(dP * P))
              for (Eigen::Index i = 0; i < gp.rows(); ++i) {
                const T dot = gp.row(i).dot(p.row(i));
                gp.row(i) = (p.row(i).array() * (gp.row(i).array() - dot)).matrix();
              }
              gp *= scale;
              gx.block(r0, h * dk, tokens, dk).noalias() += gp * k;
              gx.block(r0, dim + h * dk, tokens, dk).noalias() += gp.transpose() * q;
            }
          }
        });
      });
}

}  // namespace ag
}  // namespace cxrssl
