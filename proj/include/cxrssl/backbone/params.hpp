#pragma once

#include "cxrssl/backbone/config.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"
#include "cxrssl/core/tensor.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cxrssl {

// Named, shaped learnable arrays. Paths are kept sorted so iteration order is
// stable across save/load.
template <typename T>
class ParameterSet {
 public:
  using Map = std::map<std::string, Mat<T>>;

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Mat<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("missing parameter '" + name + "'");
    return it->second;
  }
  Mat<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("missing parameter '" + name + "'");
    return it->second;
  }

  void set(const std::string& name, Mat<T> value) { params_[name] = std::move(value); }
  void erase(const std::string& name) { params_.erase(name); }

  // Drops every parameter whose path does not satisfy `keep`.
  void filter(const std::function<bool(const std::string&)>& keep) {
    for (auto it = params_.begin(); it != params_.end();) {
      it = keep(it->first) ? std::next(it) : params_.erase(it);
    }
  }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : params_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    for (const auto& [k, m] : params_) out.set(k, Mat<T>::Zero(m.rows(), m.cols()));
    return out;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [k, m] : params_) out.set(k, m.template cast<U>());
    return out;
  }

  void validate_finite() const {
    for (const auto& [k, m] : params_) {
      if (!all_finite(m)) throw NonFiniteError("parameter '" + k + "' has non-finite entries");
    }
  }

  bool operator==(const ParameterSet& o) const {
    if (params_.size() != o.params_.size()) return false;
    auto a = params_.begin();
    auto b = o.params_.begin();
    for (; a != params_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.rows() != b->second.rows() ||
          a->second.cols() != b->second.cols() || a->second != b->second) {
        return false;
      }
    }
    return true;
  }

 private:
  Map params_;
};

namespace init {

template <typename T>
Mat<T> trunc_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 0.02) {
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.truncated_normal(stddev));
  return m;
}

template <typename T>
void add_linear(ParameterSet<T>& p, const std::string& prefix, int in, int out, Rng& rng) {
  p.set(prefix + ".weight", trunc_normal<T>(in, out, rng));
  p.set(prefix + ".bias", Mat<T>::Zero(1, out));
}

template <typename T>
void add_norm(ParameterSet<T>& p, const std::string& prefix, int dim) {
  p.set(prefix + ".weight", Mat<T>::Ones(1, dim));
  p.set(prefix + ".bias", Mat<T>::Zero(1, dim));
}

// Pre-norm transformer blocks under `prefix`.{i}.
template <typename T>
void add_blocks(ParameterSet<T>& p, const std::string& prefix, int depth, int dim, int hidden,
                Rng& rng) {
  for (int i = 0; i < depth; ++i) {
    const std::string b = prefix + "." + std::to_string(i);
    add_norm(p, b + ".norm1", dim);
    add_linear(p, b + ".attn.qkv", dim, 3 * dim, rng);
    add_linear(p, b + ".attn.proj", dim, dim, rng);
    add_norm(p, b + ".norm2", dim);
    add_linear(p, b + ".mlp.fc1", dim, hidden, rng);
    add_linear(p, b + ".mlp.fc2", hidden, dim, rng);
  }
}

}  // namespace init

// 1-D sinusoidal table, one row per sequence position.
template <typename T>
Mat<T> sinusoidal_positions(int length, int dim) {
  Mat<T> pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      const double a = pos * freq;
      pe(pos, i) = static_cast<T>((i % 2 == 0) ? std::sin(a) : std::cos(a));
    }
  }
  return pe;
}

// Backbone parameters (plus a zero-initialized classification head when
// requested):
//   patch_embed.{weight,bias}, pos_embed, special_token,
//   blocks.{i}.{norm1,attn.qkv,attn.proj,norm2,mlp.fc1,mlp.fc2}.{weight,bias},
//   norm.{weight,bias}, head.{weight,bias}
template <typename T>
ParameterSet<T> init_backbone(const ModelConfig& cfg, Rng& rng, bool with_head) {
  cfg.validate();
  ParameterSet<T> p;
  init::add_linear(p, "patch_embed", cfg.patch_dim(), cfg.dim, rng);
  if (cfg.position_embedding == PositionEmbedding::learnable) {
    p.set("pos_embed", init::trunc_normal<T>(cfg.sequence_length(), cfg.dim, rng));
  }
  if (cfg.has_special_token()) p.set("special_token", init::trunc_normal<T>(1, cfg.dim, rng));
  init::add_blocks(p, "blocks", cfg.depth, cfg.dim, cfg.mlp_hidden(), rng);
  init::add_norm(p, "norm", cfg.dim);
  if (with_head) {
    p.set("head.weight", Mat<T>::Zero(cfg.dim, 1));
    p.set("head.bias", Mat<T>::Zero(1, 1));
  }
  return p;
}

inline bool is_backbone_param(const std::string& name) {
  return name == "patch_embed.weight" || name == "patch_embed.bias" || name == "pos_embed" ||
         name == "special_token" || name.rfind("blocks.", 0) == 0 || name == "norm.weight" ||
         name == "norm.bias";
}

inline bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

// Shape contract of every backbone parameter for `cfg`.
template <typename T>
void check_backbone_shapes(const ParameterSet<T>& p, const ModelConfig& cfg) {
  auto expect = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    const Mat<T>& m = p.at(name);
    if (m.rows() != r || m.cols() != c) {
      throw ShapeMismatch("parameter '" + name + "' is " + shape_str(m) + ", expected " +
                          std::to_string(r) + "x" + std::to_string(c));
    }
  };
  expect("patch_embed.weight", cfg.patch_dim(), cfg.dim);
  expect("patch_embed.bias", 1, cfg.dim);
  if (cfg.position_embedding == PositionEmbedding::learnable) {
    expect("pos_embed", cfg.sequence_length(), cfg.dim);
  }
  if (cfg.has_special_token()) expect("special_token", 1, cfg.dim);
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    expect(b + ".attn.qkv.weight", cfg.dim, 3 * cfg.dim);
    expect(b + ".attn.proj.weight", cfg.dim, cfg.dim);
    expect(b + ".mlp.fc1.weight", cfg.dim, cfg.mlp_hidden());
    expect(b + ".mlp.fc2.weight", cfg.mlp_hidden(), cfg.dim);
  }
}

}  // namespace cxrssl
