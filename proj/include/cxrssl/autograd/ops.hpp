#pragma once

#include "cxrssl/autograd/tape.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/tensor.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace cxrssl::ag {

namespace detail {

template <typename T>
void require_same_shape(const Mat<T>& a, const Mat<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <typename T>
bool any_grad(const Tape<T>& t, Var a) {
  return t.requires_grad(a);
}

template <typename T>
bool any_grad(const Tape<T>& t, Var a, Var b) {
  return t.requires_grad(a) || t.requires_grad(b);
}

}  // namespace detail

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const Mat<T>& av = t.value(a);
  const Mat<T>& bv = t.value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeMismatch("matmul: " + shape_str(av) + " * " + shape_str(bv));
  }
  Mat<T> out = av * bv;
  return t.push(std::move(out), detail::any_grad(t, a, b), [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b).transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

// a * b^T
template <typename T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const Mat<T>& av = t.value(a);
  const Mat<T>& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeMismatch("matmul_nt: " + shape_str(av) + " * T(" + shape_str(bv) + ")");
  }
  Mat<T> out = av * bv.transpose();
  return t.push(std::move(out), detail::any_grad(t, a, b), [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * tp.value(b));
    if (tp.requires_grad(b)) tp.accumulate(b, g.transpose() * tp.value(a));
  });
}

// x * W + b, with W stored (in x out) and b a 1 x out row.
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const Mat<T>& xv = t.value(x);
  const Mat<T>& wv = t.value(w);
  const Mat<T>& bv = t.value(b);
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeMismatch("linear: x " + shape_str(xv) + ", W " + shape_str(wv) + ", b " +
                        shape_str(bv));
  }
  Mat<T> out = xv * wv;
  out.rowwise() += bv.row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  return t.push(std::move(out), rg, [x, w, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(w).transpose());
    if (tp.requires_grad(w)) tp.accumulate(w, tp.value(x).transpose() * g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum());
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  detail::require_same_shape(t.value(a), t.value(b), "add");
  Mat<T> out = t.value(a) + t.value(b);
  return t.push(std::move(out), detail::any_grad(t, a, b), [a, b](Tape<T>& tp, const Mat<T>& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  detail::require_same_shape(t.value(a), t.value(b), "sub");
  Mat<T> out = t.value(a) - t.value(b);
  return t.push(std::move(out), detail::any_grad(t, a, b), [a, b](Tape<T>& tp, const Mat<T>& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(b)) tp.accumulate(b, -g);
  });
}

// Elementwise product.
template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  detail::require_same_shape(t.value(a), t.value(b), "mul");
  Mat<T> out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), detail::any_grad(t, a, b), [a, b](Tape<T>& tp, const Mat<T>& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, g.cwiseProduct(tp.value(a)));
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Mat<T> out = t.value(a) * s;
  return t.push(std::move(out), t.requires_grad(a),
                [a, s](Tape<T>& tp, const Mat<T>& g) { tp.accumulate(a, g * s); });
}

template <typename T>
Var square(Tape<T>& t, Var a) {
  Mat<T> out = t.value(a).array().square().matrix();
  return t.push(std::move(out), t.requires_grad(a), [a](Tape<T>& tp, const Mat<T>& g) {
    tp.accumulate(a, (g.array() * tp.value(a).array() * T(2)).matrix());
  });
}

// Adds `pattern` (r x c) to every consecutive block of r rows of x.
template <typename T>
Var add_tiled(Tape<T>& t, Var x, Var pattern) {
  const Mat<T>& xv = t.value(x);
  const Mat<T>& pv = t.value(pattern);
  if (pv.rows() == 0 || xv.cols() != pv.cols() || xv.rows() % pv.rows() != 0) {
    throw ShapeMismatch("add_tiled: " + shape_str(xv) + " with pattern " + shape_str(pv));
  }
  const Eigen::Index r = pv.rows();
  const Eigen::Index blocks = xv.rows() / r;
  Mat<T> out = xv;
  for (Eigen::Index k = 0; k < blocks; ++k) out.middleRows(k * r, r) += pv;
  return t.push(std::move(out), detail::any_grad(t, x, pattern),
                [x, pattern, r, blocks](Tape<T>& tp, const Mat<T>& g) {
                  tp.accumulate(x, g);
                  if (tp.requires_grad(pattern)) {
                    Mat<T> gp = Mat<T>::Zero(r, g.cols());
                    for (Eigen::Index k = 0; k < blocks; ++k) gp += g.middleRows(k * r, r);
                    tp.accumulate(pattern, gp);
                  }
                });
}

// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
template <typename T>
Var gelu(Tape<T>& t, Var x) {
  const Mat<T>& xv = t.value(x);
  Mat<T> out(xv.rows(), xv.cols());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (Eigen::Index i = 0; i < xv.size(); ++i) {
    const T v = xv.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  return t.push(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>& xv = tp.value(x);
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    Mat<T> gx(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.size(); ++i) {
      const T v = xv.data()[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      gx.data()[i] = g.data()[i] * (cdf + v * pdf);
    }
    tp.accumulate(x, gx);
  });
}

// Row-wise layer normalization with affine gamma/beta (1 x cols each).
template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta, T eps = T(1e-6)) {
  const Mat<T>& xv = t.value(x);
  const Mat<T>& gv = t.value(gamma);
  const Mat<T>& bv = t.value(beta);
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d) {
    throw ShapeMismatch("layer_norm: x " + shape_str(xv) + ", gamma " + shape_str(gv));
  }
  Mat<T> xhat(n, d);
  std::vector<T> inv_std(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = xv.row(i).mean();
    const T var = (xv.row(i).array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    xhat.row(i) = (xv.row(i).array() - mean) * is;
  }
  Mat<T> out = xhat.array().rowwise() * gv.row(0).array();
  out.rowwise() += bv.row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  return t.push(std::move(out), rg,
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape<T>& tp, const Mat<T>& g) {
                  const Mat<T>& gv = tp.value(gamma);
                  if (tp.requires_grad(gamma)) tp.accumulate(gamma, (g.cwiseProduct(xhat)).colwise().sum());
                  if (tp.requires_grad(beta)) tp.accumulate(beta, g.colwise().sum());
                  if (tp.requires_grad(x)) {
                    const Mat<T> gxhat = g.array().rowwise() * gv.row(0).array();
                    Mat<T> gx(g.rows(), g.cols());
                    for (Eigen::Index i = 0; i < g.rows(); ++i) {
                      const T m1 = gxhat.row(i).mean();
                      const T m2 = gxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                      gx.row(i) = (gxhat.row(i).array() - m1 - xhat.row(i).array() * m2) *
                                  inv_std[static_cast<std::size_t>(i)];
                    }
                    tp.accumulate(x, gx);
                  }
                });
}

// Selects rows of x in the given order; indices may repeat.
template <typename T>
Var gather_rows(Tape<T>& t, Var x, std::vector<Eigen::Index> idx) {
  const Mat<T>& xv = t.value(x);
  Mat<T> out(static_cast<Eigen::Index>(idx.size()), xv.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= xv.rows()) {
      throw OutOfRange("gather_rows: index " + std::to_string(idx[i]) + " outside " +
                       shape_str(xv));
    }
    out.row(static_cast<Eigen::Index>(i)) = xv.row(idx[i]);
  }
  return t.push(std::move(out), t.requires_grad(x),
                [x, idx = std::move(idx)](Tape<T>& tp, const Mat<T>& g) {
                  tp.accumulate_with(x, [&](Mat<T>& gx) {
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                    }
                  });
                });
}

template <typename T>
Var concat_rows(Tape<T>& t, Var a, Var b) {
  const Mat<T>& av = t.value(a);
  const Mat<T>& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeMismatch("concat_rows: " + shape_str(av) + " and " + shape_str(bv));
  }
  Mat<T> out(av.rows() + bv.rows(), av.cols());
  out.topRows(av.rows()) = av;
  out.bottomRows(bv.rows()) = bv;
  const Eigen::Index ra = av.rows();
  const Eigen::Index rb = bv.rows();
  return t.push(std::move(out), detail::any_grad(t, a, b),
                [a, b, ra, rb](Tape<T>& tp, const Mat<T>& g) {
                  if (tp.requires_grad(a)) tp.accumulate(a, g.topRows(ra));
                  if (tp.requires_grad(b)) tp.accumulate(b, g.bottomRows(rb));
                });
}

// Mean over each consecutive block of `rows_per_group` rows.
template <typename T>
Var mean_pool(Tape<T>& t, Var x, Eigen::Index rows_per_group) {
  const Mat<T>& xv = t.value(x);
  if (rows_per_group <= 0 || xv.rows() % rows_per_group != 0) {
    throw ShapeMismatch("mean_pool: " + shape_str(xv) + " not divisible into groups of " +
                        std::to_string(rows_per_group));
  }
  const Eigen::Index groups = xv.rows() / rows_per_group;
  Mat<T> out(groups, xv.cols());
  for (Eigen::Index k = 0; k < groups; ++k) {
    out.row(k) = xv.middleRows(k * rows_per_group, rows_per_group).colwise().mean();
  }
  return t.push(std::move(out), t.requires_grad(x),
                [x, rows_per_group, groups](Tape<T>& tp, const Mat<T>& g) {
                  Mat<T> gx(groups * rows_per_group, g.cols());
                  const T inv = T(1) / static_cast<T>(rows_per_group);
                  for (Eigen::Index k = 0; k < groups; ++k) {
                    for (Eigen::Index r = 0; r < rows_per_group; ++r) {
                      gx.row(k * rows_per_group + r) = g.row(k) * inv;
                    }
                  }
                  tp.accumulate(x, gx);
                });
}

// y = x / max(||x||, eps), row-wise.
template <typename T>
Var l2_normalize_rows(Tape<T>& t, Var x, T eps = T(1e-12)) {
  const Mat<T>& xv = t.value(x);
  Mat<T> out(xv.rows(), xv.cols());
  std::vector<T> norms(static_cast<std::size_t>(xv.rows()));
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const T nrm = std::max(xv.row(i).norm(), eps);
    norms[static_cast<std::size_t>(i)] = nrm;
    out.row(i) = xv.row(i) / nrm;
  }
  return t.push(std::move(out), t.requires_grad(x),
                [x, eps, norms = std::move(norms)](Tape<T>& tp, const Mat<T>& g) {
                  const Mat<T>& xv = tp.value(x);
                  Mat<T> gx(xv.rows(), xv.cols());
                  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
                    const T nrm = norms[static_cast<std::size_t>(i)];
                    if (xv.row(i).norm() < eps) {
                      gx.row(i) = g.row(i) / nrm;
                    } else {
                      const auto y = xv.row(i) / nrm;
                      gx.row(i) = (g.row(i) - y * g.row(i).dot(y)) / nrm;
                    }
                  }
                  tp.accumulate(x, gx);
                });
}

// Numerically stable row-wise log-softmax.
template <typename T>
Mat<T> log_softmax_rows_value(const Mat<T>& x) {
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).maxCoeff();
    const T lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return out;
}

template <typename T>
Mat<T> softmax_rows_value(const Mat<T>& x) {
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

template <typename T>
Var log_softmax_rows(Tape<T>& t, Var x) {
  Mat<T> out = log_softmax_rows_value(t.value(x));
  return t.push(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T> p = softmax_rows_value(tp.value(x));
    Mat<T> gx = g;
    for (Eigen::Index i = 0; i < g.rows(); ++i) gx.row(i) -= p.row(i) * g.row(i).sum();
    tp.accumulate(x, gx);
  });
}

template <typename T>
Var sum(Tape<T>& t, Var x) {
  Mat<T> out(1, 1);
  out(0, 0) = t.value(x).sum();
  return t.push(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, const Mat<T>& g) {
    const Mat<T>& xv = tp.value(x);
    tp.accumulate(x, Mat<T>::Constant(xv.rows(), xv.cols(), g(0, 0)));
  });
}

template <typename T>
Var mean(Tape<T>& t, Var x) {
  const auto n = static_cast<T>(t.value(x).size());
  return scale(t, sum(t, x), T(1) / n);
}

// Mean binary cross-entropy on logits z (n x 1) against constant targets y.
template <typename T>
Var bce_with_logits(Tape<T>& t, Var z, Mat<T> y) {
  const Mat<T>& zv = t.value(z);
  detail::require_same_shape(zv, y, "bce_with_logits");
  T acc = 0;
  for (Eigen::Index i = 0; i < zv.size(); ++i) {
    const T v = zv.data()[i];
    acc += std::max(v, T(0)) - v * y.data()[i] + std::log1p(std::exp(-std::abs(v)));
  }
  Mat<T> out(1, 1);
  out(0, 0) = acc / static_cast<T>(zv.size());
  return t.push(std::move(out), t.requires_grad(z),
                [z, y = std::move(y)](Tape<T>& tp, const Mat<T>& g) {
                  const Mat<T>& zv = tp.value(z);
                  Mat<T> gz(zv.rows(), zv.cols());
                  const T inv_n = T(1) / static_cast<T>(zv.size());
                  for (Eigen::Index i = 0; i < zv.size(); ++i) {
                    const T s = T(1) / (T(1) + std::exp(-zv.data()[i]));
                    gz.data()[i] = g(0, 0) * (s - y.data()[i]) * inv_n;
                  }
                  tp.accumulate(z, gz);
                });
}

// Mean over rows of -sum_j y_ij * log_softmax(x)_ij with constant targets y.
template <typename T>
Var soft_cross_entropy(Tape<T>& t, Var x, Mat<T> y) {
  const Mat<T>& xv = t.value(x);
  detail::require_same_shape(xv, y, "soft_cross_entropy");
  const Mat<T> lp = log_softmax_rows_value(xv);
  Mat<T> out(1, 1);
  out(0, 0) = -(y.array() * lp.array()).sum() / static_cast<T>(xv.rows());
  return t.push(std::move(out), t.requires_grad(x),
                [x, y = std::move(y)](Tape<T>& tp, const Mat<T>& g) {
                  const Mat<T> p = softmax_rows_value(tp.value(x));
                  Mat<T> gx(p.rows(), p.cols());
                  const T c = g(0, 0) / static_cast<T>(p.rows());
                  for (Eigen::Index i = 0; i < p.rows(); ++i) {
                    gx.row(i) = (p.row(i) * y.row(i).sum() - y.row(i)) * c;
                  }
                  tp.accumulate(x, gx);
                });
}

}  // namespace cxrssl::ag
