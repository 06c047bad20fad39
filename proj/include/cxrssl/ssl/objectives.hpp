#pragma once

#include "cxrssl/autograd/ops.hpp"
#include "cxrssl/backbone/encoder.hpp"
#include "cxrssl/backbone/params.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"
#include "cxrssl/ssl/config.hpp"
#include "cxrssl/ssl/losses.hpp"
#include "cxrssl/ssl/mask.hpp"
#include "cxrssl/ssl/views.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

namespace cxrssl::ssl {

// Images of one optimization step. Labels are 0/1, or -1 when unknown.
template <typename T>
struct Batch {
  std::vector<const ImageTensor<T>*> images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(images.size()); }
};

// Momentum ramped from `base` to 1 on a half cosine over training progress.
inline double cosine_momentum(double base, double progress) {
  return 1.0 - (1.0 - base) * (std::cos(std::numbers::pi * progress) + 1.0) / 2.0;
}

// Common contract of every training objective: batch in, scalar loss and
// gradients out, plus an optional state update after each optimizer step.
template <typename T>
class Objective {
 public:
  virtual ~Objective() = default;

  virtual ObjectiveKind kind() const = 0;

  // Adds objective-owned trainable parameters to `student` and builds any
  // internal state from it.
  virtual void init(ParameterSet<T>& student, Rng& rng) = 0;

  // Loss on `batch`. Randomness (views, masks) comes from `seed` only. When
  // `grads` is non-null it receives the gradient of every trainable
  // student parameter the loss touched.
  virtual T loss(const ParameterSet<T>& student, const Batch<T>& batch, std::uint64_t seed,
                 ParameterSet<T>* grads) = 0;

  // Called after each optimizer step with progress in [0, 1].
  virtual void after_step(const ParameterSet<T>& /*student*/, double /*progress*/) {}

  // Non-trainable state, under "teacher/" and "aux/" prefixes.
  virtual ParameterSet<T> state() const { return {}; }
  virtual void load_state(const ParameterSet<T>& /*state*/) {}

  // Paths of `student` that belong to the objective rather than the backbone.
  virtual bool owns(const std::string& name) const = 0;
};

namespace detail {

// Stacks augmented views of each image: view-major, so rows [v*B, (v+1)*B)
// hold view v of every image.
template <typename T>
std::vector<ImageTensor<T>> batch_views(const Batch<T>& batch, const ViewRecipe& recipe, std::uint64_t seed) {
  const std::size_t nv = recipe.views.size();
  std::vector<ImageTensor<T>> out(nv * batch.images.size());
  for (std::size_t b = 0; b < batch.images.size(); ++b) {
    auto views = make_views(*batch.images[b], recipe, mix_seed(seed, b));
    for (std::size_t v = 0; v < nv; ++v) out[v * batch.images.size() + b] = std::move(views[v]);
  }
  return out;
}

template <typename T>
Mat<T> patches_of(const std::vector<ImageTensor<T>>& images, const ModelConfig& cfg) {
  std::vector<const ImageTensor<T>*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& im : images) ptrs.push_back(&im);
  return patchify_batch(ptrs, cfg.patch());
}

// Linear layers prefix.{i}; hidden layers optionally layer-normalized and
// GELU-activated. `dims` lists the widths from input to output.
template <typename T>
void add_mlp(ParameterSet<T>& p, const std::string& prefix, const std::vector<int>& dims, bool norm, Rng& rng) {
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string l = prefix + "." + std::to_string(i);
    init::add_linear(p, l, dims[i], dims[i + 1], rng);
    if (norm && i + 2 < dims.size()) init::add_norm(p, l + ".norm", dims[i + 1]);
  }
}

template <typename T>
ag::Var mlp(Binder<T>& p, ag::Var x, const std::string& prefix, std::size_t layers, bool norm) {
  auto& t = p.tape();
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string l = prefix + "." + std::to_string(i);
    x = ag::linear(t, x, p(l + ".weight"), p(l + ".bias"));
    if (i + 1 < layers) {
      if (norm) x = ag::layer_norm(t, x, p(l + ".norm.weight"), p(l + ".norm.bias"));
      x = ag::gelu(t, x);
    }
  }
  return x;
}

template <typename T>
bool all_trainable(const std::string&) {
  return true;
}

template <typename T>
ParameterSet<T> subset(const ParameterSet<T>& src, const std::function<bool(const std::string&)>& keep,
                       const std::string& prefix = "") {
  ParameterSet<T> out;
  for (const auto& [k, v] : src) {
    if (keep(k)) out.set(prefix + k, v);
  }
  return out;
}

template <typename T>
ParameterSet<T> strip_prefix(const ParameterSet<T>& src, const std::string& prefix) {
  ParameterSet<T> out;
  for (const auto& [k, v] : src) {
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), v);
  }
  return out;
}

}  // namespace detail

// Masked reconstruction: the encoder sees only visible patches, a light
// decoder fills mask tokens in and predicts pixels of every patch; the loss
// covers masked patches only.
template <typename T>
class MaeObjective final : public Objective<T> {
 public:
  MaeObjective(ModelConfig model, SslConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
    dec_dim_ = cfg_.decoder_dim > 0 ? cfg_.decoder_dim : model_.dim / 2;
    dec_heads_ = cfg_.decoder_heads > 0 ? cfg_.decoder_heads : model_.heads;
    if (dec_dim_ <= 0 || dec_dim_ % dec_heads_ != 0) {
      throw ConfigError("ssl.decoder_dim " + std::to_string(dec_dim_) + " not divisible by " +
                        std::to_string(dec_heads_) + " heads");
    }
  }

  ObjectiveKind kind() const override { return ObjectiveKind::mae; }

  bool owns(const std::string& name) const override { return name.rfind("mae.", 0) == 0; }

  void init(ParameterSet<T>& s, Rng& rng) override {
    const int hidden = static_cast<int>(std::lround(dec_dim_ * model_.mlp_ratio));
    init::add_linear(s, "mae.decoder_embed", model_.dim, dec_dim_, rng);
    s.set("mae.mask_token", init::trunc_normal<T>(1, dec_dim_, rng));
    s.set("mae.decoder_pos", init::trunc_normal<T>(model_.patch_count() + 1, dec_dim_, rng));
    init::add_blocks(s, "mae.decoder_blocks", cfg_.decoder_depth, dec_dim_, hidden, rng);
    init::add_norm(s, "mae.decoder_norm", dec_dim_);
    init::add_linear(s, "mae.decoder_pred", dec_dim_, model_.patch_dim(), rng);
  }

  T loss(const ParameterSet<T>& student, const Batch<T>& batch, std::uint64_t seed, ParameterSet<T>* grads) override {
    const int B = batch.size();
    const int n = model_.patch_count();
    const auto views = detail::batch_views(batch, cfg_.reconstruction_recipe(), mix_seed(seed, 1));
    const Mat<T> patches = detail::patches_of(views, model_);
    const auto plans = plan_masks(B, n, cfg_.mask_ratio, mix_seed(seed, 2));
    std::vector<std::vector<int>> visible;
    visible.reserve(plans.size());
    for (const auto& pl : plans) visible.push_back(pl.visible);

    ag::Tape<T> t;
    Binder<T> p(t, student, detail::all_trainable<T>);
    const EncodedBatch enc = encode_patches(p, model_, patches, B, &visible);
    ag::Var x = ag::linear(t, enc.tokens, p("mae.decoder_embed.weight"), p("mae.decoder_embed.bias"));

    // Scatter encoded rows back to patch order; masked positions take the
    // mask token (last row of the concatenation). Row 0 of each sample
    // keeps the special token when the backbone has one.
    const int off = enc.has_special ? 1 : 0;
    const Eigen::Index mask_row = static_cast<Eigen::Index>(B) * enc.per_sample;
    x = ag::concat_rows(t, x, p("mae.mask_token"));
    std::vector<Eigen::Index> order;
    order.reserve(static_cast<std::size_t>(B) * (n + off));
    for (int b = 0; b < B; ++b) {
      const Eigen::Index base = static_cast<Eigen::Index>(b) * enc.per_sample;
      if (off) order.push_back(base);
      std::vector<Eigen::Index> slot(static_cast<std::size_t>(n), mask_row);
      const auto& vis = plans[static_cast<std::size_t>(b)].visible;
      for (std::size_t j = 0; j < vis.size(); ++j) slot[static_cast<std::size_t>(vis[j])] = base + off + static_cast<Eigen::Index>(j);
      order.insert(order.end(), slot.begin(), slot.end());
    }
    x = ag::gather_rows(t, x, std::move(order));
    ag::Var pos = p("mae.decoder_pos");
    if (!off) {
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i + 1;
      pos = ag::gather_rows(t, pos, std::move(rows));
    }
    x = ag::add_tiled(t, x, pos);
    x = transformer_blocks(p, x, B, n + off, cfg_.decoder_depth, dec_heads_, "mae.decoder_blocks");
    x = ag::layer_norm(t, x, p("mae.decoder_norm.weight"), p("mae.decoder_norm.bias"));
    if (off) {
      std::vector<Eigen::Index> rows;
      rows.reserve(static_cast<std::size_t>(B) * n);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < n; ++i) rows.push_back(static_cast<Eigen::Index>(b) * (n + 1) + 1 + i);
      x = ag::gather_rows(t, x, std::move(rows));
    }
    x = ag::linear(t, x, p("mae.decoder_pred.weight"), p("mae.decoder_pred.bias"));
    ag::Var l = ag::mae_loss(t, x, patches, plans, cfg_.norm_targets);
    if (grads) {
      t.backward(l);
      *grads = p.gradients();
    }
    return t.value(l)(0, 0);
  }

 private:
  ModelConfig model_;
  SslConfig cfg_;
  int dec_dim_ = 0;
  int dec_heads_ = 0;
};

// Shared machinery of the two teacher-student objectives: a momentum copy
// of the backbone plus the objective's projection head.
template <typename T>
class TeacherStudent : public Objective<T> {
 public:
  ParameterSet<T> state() const override {
    ParameterSet<T> out = detail::subset(teacher_, [](const std::string&) { return true; }, "teacher/");
    extra_state(out);
    return out;
  }

  void load_state(const ParameterSet<T>& st) override {
    ParameterSet<T> t = detail::strip_prefix(st, "teacher/");
    if (t.size() != teacher_.size()) {
      throw ShapeMismatch("teacher state has " + std::to_string(t.size()) + " tensors, expected " +
                          std::to_string(teacher_.size()));
    }
    for (const auto& [k, v] : teacher_) {
      const Mat<T>& nv = t.at(k);
      if (nv.rows() != v.rows() || nv.cols() != v.cols()) throw ShapeMismatch("teacher tensor '" + k + "' shape");
    }
    teacher_ = std::move(t);
    load_extra_state(st);
  }

  const ParameterSet<T>& teacher() const { return teacher_; }
  double momentum() const { return momentum_; }

 protected:
  TeacherStudent(ModelConfig model, SslConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {}

  virtual bool in_teacher(const std::string& name) const = 0;
  virtual void extra_state(ParameterSet<T>&) const {}
  virtual void load_extra_state(const ParameterSet<T>&) {}

  void build_teacher(const ParameterSet<T>& student) {
    teacher_ = detail::subset(student, [this](const std::string& k) { return in_teacher(k); });
  }

  void momentum_update(const ParameterSet<T>& student, double base, double progress) {
    momentum_ = cosine_momentum(base, progress);
    teacher_ = ema_update(detail::subset(student, [this](const std::string& k) { return in_teacher(k); }), teacher_,
                          static_cast<T>(momentum_));
  }

  ModelConfig model_;
  SslConfig cfg_;
  ParameterSet<T> teacher_;
  double momentum_ = 0;
};

// Contrastive learning with in-batch negatives. Student: backbone ->
// projector -> predictor. Keys: momentum backbone -> momentum projector.
template <typename T>
class MocoObjective final : public TeacherStudent<T> {
 public:
  MocoObjective(ModelConfig model, SslConfig cfg) : TeacherStudent<T>(std::move(model), std::move(cfg)) {
    hidden_ = this->cfg_.head_hidden > 0 ? this->cfg_.head_hidden : 4 * this->model_.dim;
    out_ = this->cfg_.head_out > 0 ? this->cfg_.head_out : this->model_.dim;
    this->momentum_ = this->cfg_.moco_momentum;
  }

  ObjectiveKind kind() const override { return ObjectiveKind::moco_v3; }

  bool owns(const std::string& name) const override { return name.rfind("moco.", 0) == 0; }

  void init(ParameterSet<T>& s, Rng& rng) override {
    detail::add_mlp(s, "moco.proj", {this->model_.dim, hidden_, hidden_, out_}, true, rng);
    detail::add_mlp(s, "moco.pred", {out_, hidden_, out_}, true, rng);
    this->build_teacher(s);
  }

  T loss(const ParameterSet<T>& student, const Batch<T>& batch, std::uint64_t seed, ParameterSet<T>* grads) override {
    const int B = batch.size();
    const auto views = detail::batch_views(batch, this->cfg_.two_view_recipe(), mix_seed(seed, 1));
    const Mat<T> patches = detail::patches_of(views, this->model_);
    const T tau = static_cast<T>(this->cfg_.moco_tau);

    Mat<T> keys;
    {
      ag::Tape<T> t;
      Binder<T> p(t, this->teacher_);
      ag::Var z = pooled_features(t, encode_patches(p, this->model_, patches, 2 * B));
      keys = t.value(detail::mlp(p, z, "moco.proj", 3, true));
    }
    ag::Tape<T> t;
    Binder<T> p(t, student, detail::all_trainable<T>);
    ag::Var z = pooled_features(t, encode_patches(p, this->model_, patches, 2 * B));
    ag::Var q = detail::mlp(p, detail::mlp(p, z, "moco.proj", 3, true), "moco.pred", 2, true);
    std::vector<Eigen::Index> r1(static_cast<std::size_t>(B)), r2(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      r1[static_cast<std::size_t>(b)] = b;
      r2[static_cast<std::size_t>(b)] = B + b;
    }
    ag::Var q1 = ag::gather_rows(t, q, r1);
    ag::Var q2 = ag::gather_rows(t, q, r2);
    ag::Var k1 = t.constant(keys.topRows(B));
    ag::Var k2 = t.constant(keys.bottomRows(B));
    ag::Var l = ag::scale(t, ag::add(t, ag::info_nce(t, q1, k2, tau), ag::info_nce(t, q2, k1, tau)), T(0.5));
    if (grads) {
      t.backward(l);
      *grads = p.gradients();
    }
    return t.value(l)(0, 0);
  }

  void after_step(const ParameterSet<T>& student, double progress) override {
    this->momentum_update(student, this->cfg_.moco_momentum, progress);
  }

 protected:
  bool in_teacher(const std::string& name) const override {
    return is_backbone_param(name) || name.rfind("moco.proj.", 0) == 0;
  }

 private:
  int hidden_ = 0;
  int out_ = 0;
};

// Self-distillation: student softmax over prototypes matches the centered,
// sharpened softmax of an EMA teacher on the other view.
template <typename T>
class DinoObjective final : public TeacherStudent<T> {
 public:
  DinoObjective(ModelConfig model, SslConfig cfg) : TeacherStudent<T>(std::move(model), std::move(cfg)) {
    hidden_ = this->cfg_.head_hidden > 0 ? this->cfg_.head_hidden : 4 * this->model_.dim;
    bottleneck_ = this->cfg_.dino_bottleneck > 0 ? this->cfg_.dino_bottleneck : this->model_.dim;
    center_ = Mat<T>::Zero(1, this->cfg_.dino_prototypes);
    this->momentum_ = this->cfg_.dino_momentum;
  }

  ObjectiveKind kind() const override { return ObjectiveKind::dino; }

  bool owns(const std::string& name) const override { return name.rfind("dino.", 0) == 0; }

  void init(ParameterSet<T>& s, Rng& rng) override {
    detail::add_mlp(s, "dino.head", {this->model_.dim, hidden_, hidden_, bottleneck_}, false, rng);
    s.set("dino.prototypes", init::trunc_normal<T>(bottleneck_, this->cfg_.dino_prototypes, rng));
    this->build_teacher(s);
    center_ = Mat<T>::Zero(1, this->cfg_.dino_prototypes);
  }

  T loss(const ParameterSet<T>& student, const Batch<T>& batch, std::uint64_t seed, ParameterSet<T>* grads) override {
    const int B = batch.size();
    const auto views = detail::batch_views(batch, this->cfg_.two_view_recipe(), mix_seed(seed, 1));
    const Mat<T> patches = detail::patches_of(views, this->model_);
    const T tau_t = static_cast<T>(this->cfg_.dino_tau_t);
    const T tau_s = static_cast<T>(this->cfg_.dino_tau_s);

    {
      ag::Tape<T> t;
      Binder<T> p(t, this->teacher_);
      last_teacher_ = t.value(head(p, pooled_features(t, encode_patches(p, this->model_, patches, 2 * B))));
    }
    const std::vector<Mat<T>> pt{teacher_probs(Mat<T>(last_teacher_.topRows(B)), center_, tau_t),
                                 teacher_probs(Mat<T>(last_teacher_.bottomRows(B)), center_, tau_t)};
    ag::Tape<T> t;
    Binder<T> p(t, student, detail::all_trainable<T>);
    ag::Var s = head(p, pooled_features(t, encode_patches(p, this->model_, patches, 2 * B)));
    std::vector<Eigen::Index> r1(static_cast<std::size_t>(B)), r2(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      r1[static_cast<std::size_t>(b)] = b;
      r2[static_cast<std::size_t>(b)] = B + b;
    }
    ag::Var l = ag::dino_loss(t, {ag::gather_rows(t, s, r1), ag::gather_rows(t, s, r2)}, pt, tau_s);
    if (grads) {
      t.backward(l);
      *grads = p.gradients();
    }
    return t.value(l)(0, 0);
  }

  void after_step(const ParameterSet<T>& student, double progress) override {
    this->momentum_update(student, this->cfg_.dino_momentum, progress);
    if (last_teacher_.rows() > 0) {
      center_ = center_update(center_, last_teacher_, static_cast<T>(this->cfg_.dino_center_momentum));
    }
  }

  const Mat<T>& center() const { return center_; }

 protected:
  bool in_teacher(const std::string& name) const override {
    return is_backbone_param(name) || name.rfind("dino.", 0) == 0;
  }

  void extra_state(ParameterSet<T>& out) const override { out.set("aux/center", center_); }

  void load_extra_state(const ParameterSet<T>& st) override {
    const Mat<T>& c = st.at("aux/center");
    if (c.rows() != 1 || c.cols() != center_.cols()) throw ShapeMismatch("aux/center is " + shape_str(c));
    center_ = c;
  }

 private:
  ag::Var head(Binder<T>& p, ag::Var z) {
    auto& t = p.tape();
    z = ag::l2_normalize_rows(t, detail::mlp(p, z, "dino.head", 3, false));
    return ag::matmul(t, z, p("dino.prototypes"));
  }

  int hidden_ = 0;
  int bottleneck_ = 0;
  Mat<T> center_;
  Mat<T> last_teacher_;
};

// Binary cross-entropy of the linear head on pooled features. Parameters
// rejected by `trainable` stay frozen.
template <typename T>
class SupervisedObjective final : public Objective<T> {
 public:
  using Predicate = std::function<bool(const std::string&)>;

  SupervisedObjective(ModelConfig model, ViewRecipe recipe = ViewRecipe::identity(1), Predicate trainable = nullptr)
      : model_(std::move(model)), recipe_(std::move(recipe)), trainable_(std::move(trainable)) {
    recipe_.validate(1);
  }

  ObjectiveKind kind() const override { return ObjectiveKind::supervised; }

  bool owns(const std::string& name) const override { return is_head_param(name); }

  void init(ParameterSet<T>& s, Rng&) override {
    if (!s.contains("head.weight")) s.set("head.weight", Mat<T>::Zero(model_.dim, 1));
    if (!s.contains("head.bias")) s.set("head.bias", Mat<T>::Zero(1, 1));
  }

  T loss(const ParameterSet<T>& student, const Batch<T>& batch, std::uint64_t seed, ParameterSet<T>* grads) override {
    const int B = batch.size();
    if (static_cast<int>(batch.labels.size()) != B) throw UnlabeledData("supervised batch has no labels");
    Mat<T> y(B, 1);
    for (int b = 0; b < B; ++b) {
      const int lab = batch.labels[static_cast<std::size_t>(b)];
      if (lab != 0 && lab != 1) throw UnlabeledData("supervised batch contains an unlabeled image");
      y(b, 0) = static_cast<T>(lab);
    }
    require_classification_head(student, model_);
    ViewRecipe first{{recipe_.views.front()}};
    const auto views = detail::batch_views(batch, first, mix_seed(seed, 1));
    const Mat<T> patches = detail::patches_of(views, model_);
    ag::Tape<T> t;
    Binder<T> p(t, student, trainable_ ? trainable_ : Predicate(detail::all_trainable<T>));
    ag::Var z = pooled_features(t, encode_patches(p, model_, patches, B));
    z = ag::linear(t, z, p("head.weight"), p("head.bias"));
    ag::Var l = ag::bce_with_logits(t, z, std::move(y));
    if (grads) {
      t.backward(l);
      *grads = p.gradients();
    }
    return t.value(l)(0, 0);
  }

 private:
  ModelConfig model_;
  ViewRecipe recipe_;
  Predicate trainable_;
};

template <typename T>
std::unique_ptr<Objective<T>> make_objective(ObjectiveKind kind, const ModelConfig& model, const SslConfig& cfg) {
  cfg.validate();
  switch (kind) {
    case ObjectiveKind::mae: return std::make_unique<MaeObjective<T>>(model, cfg);
    case ObjectiveKind::moco_v3: return std::make_unique<MocoObjective<T>>(model, cfg);
    case ObjectiveKind::dino: return std::make_unique<DinoObjective<T>>(model, cfg);
    case ObjectiveKind::supervised: return std::make_unique<SupervisedObjective<T>>(model);
  }
  throw ConfigError("unknown objective");
}

}  // namespace cxrssl::ssl
