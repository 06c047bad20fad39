#pragma once

#include "cxrssl/backbone/params.hpp"
#include "cxrssl/core/error.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

namespace cxrssl::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  ParameterSet<T> m;
  ParameterSet<T> v;
  std::int64_t t = 0;

  bool operator==(const AdamState&) const = default;
};

// Weight matrices decay; biases, norm gains, tokens and position tables do
// not.
inline bool decays(const std::string& name) {
  if (name == "dino.prototypes") return true;
  const std::string suffix = ".weight";
  if (name.size() < suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
  const std::string layer = name.substr(0, name.size() - suffix.size());
  const std::size_t dot = layer.rfind('.');
  const std::string last = dot == std::string::npos ? layer : layer.substr(dot + 1);
  return last.find("norm") == std::string::npos;
}

template <typename T>
T global_norm(const ParameterSet<T>& grads) {
  T s = 0;
  for (const auto& [_, g] : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

// Rescales gradients so their global norm is at most `max_norm`. Returns
// the norm before clipping.
template <typename T>
T clip_grad_norm(ParameterSet<T>& grads, T max_norm) {
  const T n = global_norm(grads);
  if (max_norm > 0 && n > max_norm) {
    const T c = max_norm / (n + T(1e-6));
    for (auto& [_, g] : grads) g *= c;
  }
  return n;
}

// One AdamW step for every parameter that has a gradient:
//   p <- p * (1 - lr * wd)                     (decoupled decay, if decays)
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
// Gradients are checked for finiteness before anything is modified.
template <typename T>
void adamw_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& st, double lr, double wd,
                const AdamWConfig& cfg, const std::function<bool(const std::string&)>& decay = decays) {
  for (const auto& [name, g] : grads) {
    const Mat<T>& p = params.at(name);
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeMismatch("adamw: gradient of '" + name + "' is " + shape_str(g) + ", parameter " + shape_str(p));
    }
    if (!all_finite(g)) throw NonFiniteError("adamw: non-finite gradient for '" + name + "'; step aborted");
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (const auto& [name, g] : grads) {
    Mat<T>& p = params.at(name);
    if (!st.m.contains(name)) {
      st.m.set(name, Mat<T>::Zero(p.rows(), p.cols()));
      st.v.set(name, Mat<T>::Zero(p.rows(), p.cols()));
    }
    Mat<T>& m = st.m.at(name);
    Mat<T>& v = st.v.at(name);
    if (wd != 0.0 && decay(name)) p *= static_cast<T>(1.0 - lr * wd);
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    const T step = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    p.array() -= step * m.array() / (v.array().sqrt() * inv_bc2 + static_cast<T>(cfg.eps));
  }
}

}  // namespace cxrssl::train
