#include "cxrssl/autograd/ops.hpp"
#include "cxrssl/backbone/attention.hpp"
#include "cxrssl/core/rng.hpp"

#include <gtest/gtest.h>

#include <functional>

using cxrssl::Mat;
using cxrssl::Rng;
namespace ag = cxrssl::ag;

namespace {

Mat<double> random_mat(long r, long c, Rng& rng) {
  Mat<double> m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Builds f(inputs) -> scalar via `build`, then compares the tape gradient of
// every input with central differences.
void expect_gradients(std::vector<Mat<double>> inputs,
                      const std::function<ag::Var(ag::Tape<double>&, const std::vector<ag::Var>&)>& build,
                      double tol = 1e-6) {
  auto eval = [&](const std::vector<Mat<double>>& xs, std::vector<Mat<double>>* grads) {
    ag::Tape<double> t;
    std::vector<ag::Var> vars;
    for (const auto& x : xs) vars.push_back(t.leaf(x, true));
    ag::Var out = build(t, vars);
    if (grads) {
      t.backward(out);
      for (auto v : vars) grads->push_back(t.grad(v));
    }
    return t.value(out)(0, 0);
  };
  std::vector<Mat<double>> grads;
  eval(inputs, &grads);
  const double h = 1e-5;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (long i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double numeric = (eval(plus, nullptr) - eval(minus, nullptr)) / (2 * h);
      EXPECT_NEAR(grads[k].data()[i], numeric, tol * std::max(1.0, std::abs(numeric)))
          << "input " << k << " element " << i;
    }
  }
}

// Weighted sum with fixed random weights turns any output into a scalar.
ag::Var probe(ag::Tape<double>& t, ag::Var x, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Mat<double>& v = t.value(x);
  return ag::sum(t, ag::mul(t, x, t.constant(random_mat(v.rows(), v.cols(), rng))));
}

}  // namespace

TEST(Autograd, LinearAndMatmul) {
  Rng rng(1);
  expect_gradients({random_mat(3, 4, rng), random_mat(4, 5, rng), random_mat(1, 5, rng)},
                   [](auto& t, const auto& v) { return probe(t, ag::linear(t, v[0], v[1], v[2])); });
  expect_gradients({random_mat(3, 4, rng), random_mat(5, 4, rng)},
                   [](auto& t, const auto& v) { return probe(t, ag::matmul_nt(t, v[0], v[1])); });
}

TEST(Autograd, ElementwiseOps) {
  Rng rng(2);
  expect_gradients({random_mat(3, 4, rng), random_mat(3, 4, rng)}, [](auto& t, const auto& v) {
    return probe(t, ag::mul(t, ag::sub(t, v[0], v[1]), ag::add(t, v[0], ag::scale(t, v[1], 0.3))));
  });
  expect_gradients({random_mat(2, 5, rng)}, [](auto& t, const auto& v) {
    return probe(t, ag::gelu(t, ag::square(t, v[0])));
  });
}

TEST(Autograd, LayerNorm) {
  Rng rng(3);
  expect_gradients({random_mat(4, 6, rng), random_mat(1, 6, rng), random_mat(1, 6, rng)},
                   [](auto& t, const auto& v) { return probe(t, ag::layer_norm(t, v[0], v[1], v[2])); });
}

TEST(Autograd, RowRearrangement) {
  Rng rng(4);
  expect_gradients({random_mat(3, 4, rng), random_mat(2, 4, rng)}, [](auto& t, const auto& v) {
    ag::Var c = ag::concat_rows(t, v[0], v[1]);
    ag::Var g = ag::gather_rows(t, c, {4, 0, 0, 2, 3});
    return probe(t, ag::mean_pool(t, ag::add_tiled(t, g, ag::gather_rows(t, v[0], {1})), 5));
  });
  expect_gradients({random_mat(5, 3, rng)}, [](auto& t, const auto& v) {
    return probe(t, ag::gather_rows(t, v[0], {4, 0, 0, 2}));
  });
}

TEST(Autograd, NormalizeAndSoftmax) {
  Rng rng(5);
  expect_gradients({random_mat(3, 4, rng)}, [](auto& t, const auto& v) {
    return probe(t, ag::log_softmax_rows(t, ag::l2_normalize_rows(t, v[0])));
  });
}

TEST(Autograd, BceWithLogits) {
  Rng rng(6);
  Mat<double> y(4, 1);
  y << 1, 0, 1, 0;
  expect_gradients({random_mat(4, 1, rng) * 3.0}, [y](auto& t, const auto& v) {
    return ag::bce_with_logits(t, v[0], y);
  });
}

TEST(Autograd, BceIsStableForLargeLogits) {
  ag::Tape<double> t;
  Mat<double> z(2, 1);
  z << 800.0, -800.0;
  Mat<double> y(2, 1);
  y << 1, 0;
  ag::Var l = ag::bce_with_logits(t, t.leaf(z, true), y);
  EXPECT_NEAR(t.value(l)(0, 0), 0.0, 1e-12);
}

TEST(Autograd, MultiHeadAttention) {
  Rng rng(7);
  // batch 2, 3 tokens, 2 heads of width 2 -> qkv is 6 x 12
  expect_gradients({random_mat(6, 12, rng)}, [](auto& t, const auto& v) {
    return probe(t, ag::multi_head_attention(t, v[0], 2, 3, 2));
  });
}

TEST(Autograd, MultiHeadAttentionMatchesPerHeadKernel) {
  Rng rng(8);
  const Mat<double> qkv = random_mat(4, 12, rng);
  ag::Tape<double> t;
  const Mat<double> out = t.value(ag::multi_head_attention(t, t.constant(qkv), 1, 4, 2));
  for (int h = 0; h < 2; ++h) {
    Mat<double> q = qkv.block(0, 2 * h, 4, 2), k = qkv.block(0, 4 + 2 * h, 4, 2), v = qkv.block(0, 8 + 2 * h, 4, 2);
    EXPECT_LT((out.block(0, 2 * h, 4, 2) - cxrssl::attention(q, k, v)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Autograd, BackwardRequiresScalar) {
  ag::Tape<double> t;
  ag::Var x = t.leaf(Mat<double>::Ones(2, 2), true);
  EXPECT_THROW(t.backward(x), cxrssl::ShapeMismatch);
}

TEST(Autograd, GradientAccumulatesOverReuse) {
  ag::Tape<double> t;
  ag::Var x = t.leaf(Mat<double>::Constant(1, 1, 3.0), true);
  ag::Var y = ag::add(t, x, ag::mul(t, x, x));  // x + x^2
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}
