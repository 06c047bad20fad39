#pragma once

#include "cxrssl/autograd/ops.hpp"
#include "cxrssl/autograd/tape.hpp"
#include "cxrssl/backbone/attention.hpp"
#include "cxrssl/backbone/config.hpp"
#include "cxrssl/backbone/image.hpp"
#include "cxrssl/backbone/params.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cxrssl {

// Binds named parameters onto a tape on first use. Parameters rejected by the
// `trainable` predicate enter as constants and never receive gradients.
template <typename T>
class Binder {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  Binder(ag::Tape<T>& tape, const ParameterSet<T>& params, Predicate trainable = nullptr)
      : tape_(tape), params_(params), trainable_(std::move(trainable)) {}

  ag::Var operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    const bool rg = trainable_ ? trainable_(name) : false;
    ag::Var v = tape_.leaf(params_.at(name), rg);
    vars_.emplace(name, v);
    return v;
  }

  ag::Tape<T>& tape() { return tape_; }
  const ParameterSet<T>& params() const { return params_; }

  // Gradients of every bound trainable parameter after tape.backward().
  ParameterSet<T> gradients() const {
    ParameterSet<T> g;
    for (const auto& [name, v] : vars_) {
      if (tape_.requires_grad(v)) g.set(name, tape_.grad(v));
    }
    return g;
  }

 private:
  ag::Tape<T>& tape_;
  const ParameterSet<T>& params_;
  Predicate trainable_;
  std::map<std::string, ag::Var> vars_;
};

// Pre-norm residual block: x + MSA(LN(x)), then x + MLP(LN(x)) with GELU.
template <typename T>
ag::Var transformer_block(Binder<T>& p, ag::Var x, int batch, int tokens, int heads,
                          const std::string& prefix) {
  auto& t = p.tape();
  ag::Var h = ag::layer_norm(t, x, p(prefix + ".norm1.weight"), p(prefix + ".norm1.bias"));
  h = ag::linear(t, h, p(prefix + ".attn.qkv.weight"), p(prefix + ".attn.qkv.bias"));
  h = ag::multi_head_attention(t, h, batch, tokens, heads);
  h = ag::linear(t, h, p(prefix + ".attn.proj.weight"), p(prefix + ".attn.proj.bias"));
  x = ag::add(t, x, h);
  h = ag::layer_norm(t, x, p(prefix + ".norm2.weight"), p(prefix + ".norm2.bias"));
  h = ag::linear(t, h, p(prefix + ".mlp.fc1.weight"), p(prefix + ".mlp.fc1.bias"));
  h = ag::gelu(t, h);
  h = ag::linear(t, h, p(prefix + ".mlp.fc2.weight"), p(prefix + ".mlp.fc2.bias"));
  return ag::add(t, x, h);
}

template <typename T>
ag::Var transformer_blocks(Binder<T>& p, ag::Var x, int batch, int tokens, int depth, int heads,
                           const std::string& prefix = "blocks") {
  for (int i = 0; i < depth; ++i) {
    x = transformer_block(p, x, batch, tokens, heads, prefix + "." + std::to_string(i));
  }
  return x;
}

// Token embeddings produced by the backbone for a packed batch.
struct EncodedBatch {
  ag::Var tokens;         // (batch * per_sample) x dim, after the final norm
  int batch = 0;
  int per_sample = 0;     // tokens per sample including the special token
  bool has_special = false;
};

// Embeds flattened patches ((batch*n) x patch_dim), adds position
// embeddings, optionally keeps only the `visible` patch indices of each
// sample, prepends the special token and runs the encoder plus final norm.
template <typename T>
EncodedBatch encode_patches(Binder<T>& p, const ModelConfig& cfg, const Mat<T>& patches, int batch,
                            const std::vector<std::vector<int>>* visible = nullptr) {
  auto& t = p.tape();
  const int n = cfg.patch_count();
  if (patches.rows() != static_cast<Eigen::Index>(batch) * n || patches.cols() != cfg.patch_dim()) {
    throw ShapeMismatch("encode_patches: patches " + shape_str(patches) + " for batch " +
                        std::to_string(batch) + " of " + std::to_string(n) + " patches of " +
                        std::to_string(cfg.patch_dim()));
  }
  const bool special = cfg.has_special_token();
  const int offset = special ? 1 : 0;

  ag::Var pos = cfg.position_embedding == PositionEmbedding::learnable
                    ? p("pos_embed")
                    : t.constant(sinusoidal_positions<T>(cfg.sequence_length(), cfg.dim));
  std::vector<Eigen::Index> patch_rows(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) patch_rows[static_cast<std::size_t>(i)] = offset + i;
  ag::Var patch_pos = ag::gather_rows(t, pos, patch_rows);

  ag::Var x = ag::linear(t, t.constant(patches), p("patch_embed.weight"), p("patch_embed.bias"));
  x = ag::add_tiled(t, x, patch_pos);

  int kept = n;
  if (visible) {
    if (static_cast<int>(visible->size()) != batch) {
      throw ShapeMismatch("encode_patches: visible index lists do not match the batch");
    }
    kept = static_cast<int>((*visible)[0].size());
    std::vector<Eigen::Index> rows;
    rows.reserve(static_cast<std::size_t>(batch) * kept);
    for (int b = 0; b < batch; ++b) {
      const auto& vis = (*visible)[static_cast<std::size_t>(b)];
      if (static_cast<int>(vis.size()) != kept) {
        throw ShapeMismatch("encode_patches: samples keep different numbers of patches");
      }
      for (int i : vis) rows.push_back(static_cast<Eigen::Index>(b) * n + i);
    }
    x = ag::gather_rows(t, x, std::move(rows));
  }

  const int per_sample = kept + offset;
  if (special) {
    ag::Var tok = ag::add(t, p("special_token"), ag::gather_rows(t, pos, {0}));
    ag::Var both = ag::concat_rows(t, x, tok);
    const Eigen::Index tok_row = static_cast<Eigen::Index>(batch) * kept;
    std::vector<Eigen::Index> order;
    order.reserve(static_cast<std::size_t>(batch) * per_sample);
    for (int b = 0; b < batch; ++b) {
      order.push_back(tok_row);
      for (int i = 0; i < kept; ++i) order.push_back(static_cast<Eigen::Index>(b) * kept + i);
    }
    x = ag::gather_rows(t, both, std::move(order));
  }

  x = transformer_blocks(p, x, batch, per_sample, cfg.depth, cfg.heads);
  x = ag::layer_norm(t, x, p("norm.weight"), p("norm.bias"));
  return {x, batch, per_sample, special};
}

// Rows holding the special token of each sample (batch x dim).
template <typename T>
ag::Var special_token_rows(ag::Tape<T>& t, const EncodedBatch& enc) {
  if (!enc.has_special) throw InvalidArgument("model has no special token");
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(enc.batch));
  for (int b = 0; b < enc.batch; ++b) rows[static_cast<std::size_t>(b)] = static_cast<Eigen::Index>(b) * enc.per_sample;
  return ag::gather_rows(t, enc.tokens, std::move(rows));
}

// Per-sample embedding used by heads: the special token when the model has
// one, the mean of the patch tokens otherwise.
template <typename T>
ag::Var pooled_features(ag::Tape<T>& t, const EncodedBatch& enc) {
  if (enc.has_special) return special_token_rows(t, enc);
  return ag::mean_pool(t, enc.tokens, enc.per_sample);
}

// Runs the encoder blocks on an already embedded sequence (position
// embeddings added, special token prepended). The output has the input's
// shape; no final norm is applied.
template <typename T>
TokenSequence<T> encoder_forward(const TokenSequence<T>& tokens, const ParameterSet<T>& params,
                                 const EncoderConfig& cfg) {
  if (cfg.depth < 0 || cfg.head_count <= 0) throw InvalidArgument("encoder: bad config");
  if (tokens.tokens.cols() != cfg.dim()) {
    throw ShapeMismatch("encoder: tokens have width " + std::to_string(tokens.tokens.cols()) +
                        ", config dim is " + std::to_string(cfg.dim()));
  }
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    const Mat<T>& w = params.at(b + ".attn.qkv.weight");
    if (w.rows() != cfg.dim() || w.cols() != 3 * cfg.dim()) {
      throw ShapeMismatch("encoder: '" + b + ".attn.qkv.weight' is " + shape_str(w));
    }
    const Mat<T>& f1 = params.at(b + ".mlp.fc1.weight");
    if (f1.rows() != cfg.dim()) throw ShapeMismatch("encoder: '" + b + ".mlp.fc1.weight' is " + shape_str(f1));
  }
  ag::Tape<T> tape;
  Binder<T> p(tape, params);
  ag::Var x = tape.constant(tokens.tokens);
  x = transformer_blocks(p, x, 1, static_cast<int>(tokens.tokens.rows()), cfg.depth, cfg.head_count);
  return {tape.value(x), tokens.has_special_token};
}

// Final-norm pooled features for a list of images, computed in
// chunks of `chunk` images. Output is (images x dim).
template <typename T>
Mat<T> extract_features(const ParameterSet<T>& params, const ModelConfig& cfg,
                        const std::vector<const ImageTensor<T>*>& images, int chunk = 64) {
  Mat<T> out(static_cast<Eigen::Index>(images.size()), cfg.dim);
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const ImageTensor<T>*> part(images.begin() + static_cast<std::ptrdiff_t>(start),
                                            images.begin() + static_cast<std::ptrdiff_t>(end));
    ag::Tape<T> tape;
    Binder<T> p(tape, params);
    const Mat<T> patches = patchify_batch(part, cfg.patch());
    const EncodedBatch enc = encode_patches(p, cfg, patches, static_cast<int>(part.size()));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        tape.value(pooled_features(tape, enc));
  }
  return out;
}

template <typename T>
void require_classification_head(const ParameterSet<T>& params, const ModelConfig& cfg) {
  if (!params.contains("head.weight") || !params.contains("head.bias")) {
    throw MissingHead("parameters have no classification head");
  }
  if (params.at("head.weight").rows() != cfg.dim || params.at("head.weight").cols() != 1) {
    throw ShapeMismatch("head.weight is " + shape_str(params.at("head.weight")));
  }
}

template <typename T>
T sigmoid(T z) {
  return z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

// Head logits for a batch of feature rows.
template <typename T>
Mat<T> head_logits(const ParameterSet<T>& params, const Mat<T>& features) {
  Mat<T> z = features * params.at("head.weight");
  z.array() += params.at("head.bias")(0, 0);
  return z;
}

// Probability that `image` is positive: sigmoid of the linear head applied
// to the final class-token embedding.
template <typename T>
T classify(const ImageTensor<T>& image, const ParameterSet<T>& params, const ModelConfig& cfg) {
  if (cfg.token_mode != TokenMode::class_token) {
    throw InvalidArgument("classify needs token_mode=class_token, got " + to_string(cfg.token_mode));
  }
  require_classification_head(params, cfg);
  const Mat<T> f = extract_features<T>(params, cfg, {&image});
  return sigmoid(head_logits(params, f)(0, 0));
}

// Batched scoring in chunks of `chunk` images.
template <typename T>
std::vector<T> classify_batch(const std::vector<const ImageTensor<T>*>& images,
                              const ParameterSet<T>& params, const ModelConfig& cfg, int chunk = 64) {
  if (cfg.token_mode != TokenMode::class_token) {
    throw InvalidArgument("classify needs token_mode=class_token, got " + to_string(cfg.token_mode));
  }
  require_classification_head(params, cfg);
  const Mat<T> z = head_logits(params, extract_features(params, cfg, images, chunk));
  std::vector<T> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) out[static_cast<std::size_t>(i)] = sigmoid(z(i, 0));
  return out;
}

}  // namespace cxrssl
