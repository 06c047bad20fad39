#pragma once

#include "cxrssl/backbone/encoder.hpp"
#include "cxrssl/backbone/image.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"
#include "cxrssl/ssl/objectives.hpp"
#include "cxrssl/train/checkpoint.hpp"
#include "cxrssl/train/config.hpp"
#include "cxrssl/train/optim.hpp"
#include "cxrssl/train/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace cxrssl::train {

struct LogRow {
  std::int64_t step = 0;
  int epoch = 0;
  Phase phase = Phase::pretrain;
  double loss = 0;
  double lr = 0;
  double wd = 0;
};

inline std::string log_header() { return "step,epoch,phase,loss,lr,wd"; }

inline std::string format_log_row(const LogRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%d,%s,%.9g,%.17g,%.17g", static_cast<long long>(r.step), r.epoch,
                to_string(r.phase).c_str(), r.loss, r.lr, r.wd);
  return buf;
}

// Append-only CSV log; the header is written when the file is new or empty.
class LogWriter {
 public:
  explicit LogWriter(const std::filesystem::path& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw IoError("cannot open log " + path.string());
    if (fresh) out_ << log_header() << '\n';
  }
  void operator()(const LogRow& r) { out_ << format_log_row(r) << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

struct RunOptions {
  std::function<void(const LogRow&)> log;  // called after every optimizer step
  std::filesystem::path checkpoint_dir;    // periodic and last-good checkpoints; empty disables
  nlohmann::json provenance = nlohmann::json::object();  // merged into this phase's history entry
};

// Mean training loss of each epoch, from a log.
inline std::vector<double> epoch_means(const std::vector<LogRow>& rows) {
  std::vector<double> sum, cnt;
  for (const auto& r : rows) {
    if (static_cast<std::size_t>(r.epoch) >= sum.size()) {
      sum.resize(static_cast<std::size_t>(r.epoch) + 1, 0.0);
      cnt.resize(sum.size(), 0.0);
    }
    sum[static_cast<std::size_t>(r.epoch)] += r.loss;
    cnt[static_cast<std::size_t>(r.epoch)] += 1;
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = cnt[i] > 0 ? sum[i] / cnt[i] : 0.0;
  return sum;
}

namespace detail {

// Full batches only, so every step sees batch_size images; a dataset smaller
// than one batch becomes a single step.
inline std::int64_t steps_per_epoch(std::size_t n, int batch) {
  if (n == 0) throw InvalidArgument("training set is empty");
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(n) / batch);
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(idx.begin(), idx.end());
  return idx;
}

inline void append_history(Checkpoint& c, const TrainConfig& cfg, std::int64_t steps, const RunOptions& opt) {
  nlohmann::json e = opt.provenance;
  e["phase"] = to_string(cfg.phase);
  e["objective"] = ssl::to_string(cfg.objective);
  e["seed"] = cfg.seed;
  e["epochs"] = cfg.epochs;
  e["steps"] = steps;
  if (!c.provenance.contains("phases")) c.provenance["phases"] = nlohmann::json::array();
  c.provenance["phases"].push_back(e);
}

inline void check_labels(const std::vector<int>& labels, std::size_t n) {
  if (labels.size() != n) throw UnlabeledData("expected " + std::to_string(n) + " labels, got " + std::to_string(labels.size()));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw UnlabeledData("image " + std::to_string(i) + " has no label");
  }
}

// Backbone plus classification head; objective-specific parameters dropped.
inline ParameterSet<float> classifier_params(const ParameterSet<float>& p) {
  return ssl::detail::subset(p, [](const std::string& k) { return is_backbone_param(k) || is_head_param(k); });
}

// Shared optimization loop. `step_loss` computes the loss (and gradients)
// for one batch of indices.
struct LoopHooks {
  std::function<float(const std::vector<std::size_t>&, std::uint64_t, ParameterSet<float>*)> step_loss;
  std::function<void(double)> after_step;
  std::function<ParameterSet<float>()> state;  // objective state for saved checkpoints
  std::function<bool(const std::string&)> decay = decays;
  bool clip = false;
};

inline void run_loop(Checkpoint& c, const TrainConfig& cfg, std::size_t n, const LoopHooks& hooks,
                     const RunOptions& opt) {
  const std::int64_t spe = steps_per_epoch(n, cfg.batch_size);
  const std::int64_t total = spe * cfg.epochs;
  const std::size_t bs = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  const AdamWConfig acfg{cfg.beta1, cfg.beta2, cfg.eps};
  c.schedule = ScheduleState{0, spe, 0.0, cfg.wd_start};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (std::int64_t s = 0; s < spe; ++s) {
      const std::int64_t step = epoch * spe + s;
      const ScheduleState sch = schedule_at(step, cfg, spe);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s * bs),
                                   order.begin() + static_cast<std::ptrdiff_t>((s + 1) * bs));
      ParameterSet<float> grads;
      const float loss = hooks.step_loss(idx, mix_seed(cfg.seed, 0x57e90000000ULL + static_cast<std::uint64_t>(step)), &grads);
      if (!std::isfinite(loss)) {
        std::string where;
        if (!opt.checkpoint_dir.empty()) {
          const auto path = opt.checkpoint_dir / "last_good.ckpt";
          if (hooks.state) c.state = hooks.state();
          save_checkpoint(path, c);
          where = "; last good state saved to " + path.string();
        }
        throw NonFiniteError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                             ")" + where);
      }
      if (hooks.clip && cfg.clip_norm > 0) clip_grad_norm(grads, static_cast<float>(cfg.clip_norm));
      adamw_step(c.student, grads, c.adam, sch.lr, sch.wd, acfg, hooks.decay);
      if (hooks.after_step) hooks.after_step(static_cast<double>(step + 1) / static_cast<double>(total));
      c.schedule = sch;
      if (opt.log) opt.log(LogRow{step, epoch, cfg.phase, static_cast<double>(loss), sch.lr, sch.wd});
    }
    if (cfg.checkpoint_every > 0 && !opt.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof name, "epoch-%04d.ckpt", epoch + 1);
      if (hooks.state) c.state = hooks.state();
      save_checkpoint(opt.checkpoint_dir / name, c);
    }
  }
}

template <typename T>
std::vector<const T*> pointers(const std::vector<T>& v) {
  std::vector<const T*> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(&x);
  return out;
}

}  // namespace detail

// Fresh checkpoint: initialized backbone plus objective parameters.
inline Checkpoint initial_checkpoint(const TrainConfig& cfg, const ModelConfig& model, const ssl::SslConfig& scfg,
                                     std::unique_ptr<ssl::Objective<float>>* objective = nullptr) {
  cfg.validate();
  model.validate();
  Checkpoint c;
  c.model = model;
  c.train = cfg;
  c.ssl = scfg;
  Rng rng(mix_seed(cfg.seed, 0x1417ULL));
  c.student = init_backbone<float>(model, rng, false);
  auto obj = ssl::make_objective<float>(cfg.objective, model, scfg);
  obj->init(c.student, rng);
  c.state = obj->state();
  if (objective) *objective = std::move(obj);
  return c;
}

// Self-supervised pretraining on (possibly unlabeled) images.
inline Checkpoint pretrain(const TrainConfig& cfg, const ModelConfig& model, const ssl::SslConfig& scfg,
                           const std::vector<ImageTensor<float>>& images, const RunOptions& opt = {}) {
  if (cfg.phase != Phase::pretrain) throw ConfigError("pretrain called with phase=" + to_string(cfg.phase));
  std::unique_ptr<ssl::Objective<float>> obj;
  Checkpoint c = initial_checkpoint(cfg, model, scfg, &obj);
  if (cfg.epochs > 0) {
    if (images.empty()) throw InvalidArgument("pretrain: no images");
    const auto ptrs = detail::pointers(images);
    detail::LoopHooks hooks;
    hooks.clip = true;
    hooks.step_loss = [&](const std::vector<std::size_t>& idx, std::uint64_t seed, ParameterSet<float>* g) {
      ssl::Batch<float> b;
      for (auto i : idx) b.images.push_back(ptrs[i]);
      return obj->loss(c.student, b, seed, g);
    };
    hooks.after_step = [&](double progress) { obj->after_step(c.student, progress); };
    hooks.state = [&] { return obj->state(); };
    detail::run_loop(c, cfg, images.size(), hooks, opt);
    c.state = obj->state();
  }
  detail::append_history(c, cfg, cfg.epochs > 0 ? detail::steps_per_epoch(images.size(), cfg.batch_size) * cfg.epochs : 0,
                         opt);
  return c;
}

// Linear probing: frozen backbone features, zero-initialized head trained
// with binary cross-entropy. Backbone tensors are copied untouched. Adam
// moments in the result refer to the standardized features.
inline Checkpoint probe(const Checkpoint& in, const TrainConfig& cfg, const std::vector<ImageTensor<float>>& images,
                        const std::vector<int>& labels, const RunOptions& opt = {}) {
  if (cfg.phase != Phase::probe) throw ConfigError("probe called with phase=" + to_string(cfg.phase));
  cfg.validate();
  detail::check_labels(labels, images.size());
  check_backbone_shapes(in.student, in.model);
  Checkpoint c;
  c.model = in.model;
  c.train = cfg;
  c.ssl = in.ssl;
  c.input_mean = in.input_mean;
  c.input_std = in.input_std;
  c.provenance = in.provenance;
  c.student = ssl::detail::subset(in.student, is_backbone_param);
  c.student.set("head.weight", Mat<float>::Zero(in.model.dim, 1));
  c.student.set("head.bias", Mat<float>::Zero(1, 1));
  if (cfg.epochs > 0) {
    // The head trains on per-dimension standardized features; the scaling is
    // folded back into head.weight/head.bias afterwards.
    Mat<float> feats = extract_features(in.student, in.model, detail::pointers(images));
    const Eigen::RowVectorXd mu = feats.cast<double>().colwise().mean();
    Eigen::RowVectorXd sd(feats.cols());
    for (Eigen::Index j = 0; j < feats.cols(); ++j) {
      const double v = (feats.col(j).cast<double>().array() - mu(j)).square().mean();
      sd(j) = std::max(std::sqrt(v), 1e-6);
    }
    for (Eigen::Index j = 0; j < feats.cols(); ++j) {
      feats.col(j) = ((feats.col(j).cast<double>().array() - mu(j)) / sd(j)).cast<float>().matrix();
    }
    detail::LoopHooks hooks;
    hooks.step_loss = [&](const std::vector<std::size_t>& idx, std::uint64_t, ParameterSet<float>* g) {
      const auto B = static_cast<Eigen::Index>(idx.size());
      Mat<float> x(B, feats.cols()), y(B, 1);
      for (Eigen::Index r = 0; r < B; ++r) {
        x.row(r) = feats.row(static_cast<Eigen::Index>(idx[static_cast<std::size_t>(r)]));
        y(r, 0) = static_cast<float>(labels[idx[static_cast<std::size_t>(r)]]);
      }
      ag::Tape<float> t;
      Binder<float> p(t, c.student, is_head_param);
      ag::Var z = ag::linear(t, t.constant(std::move(x)), p("head.weight"), p("head.bias"));
      ag::Var l = ag::bce_with_logits(t, z, std::move(y));
      t.backward(l);
      *g = p.gradients();
      return t.value(l)(0, 0);
    };
    detail::run_loop(c, cfg, images.size(), hooks, opt);
    Mat<float>& w = c.student.at("head.weight");
    double shift = 0;
    for (Eigen::Index j = 0; j < w.rows(); ++j) {
      const double wj = static_cast<double>(w(j, 0)) / sd(j);
      shift += mu(j) * wj;
      w(j, 0) = static_cast<float>(wj);
    }
    c.student.at("head.bias")(0, 0) = static_cast<float>(static_cast<double>(c.student.at("head.bias")(0, 0)) - shift);
  }
  detail::append_history(c, cfg, cfg.epochs > 0 ? detail::steps_per_epoch(images.size(), cfg.batch_size) * cfg.epochs : 0,
                         opt);
  return c;
}

// Full fine-tuning. A head present in `in` (from probing) is kept; otherwise
// a zero head is created.
inline Checkpoint finetune(const Checkpoint& in, const TrainConfig& cfg, const std::vector<ImageTensor<float>>& images,
                           const std::vector<int>& labels, const RunOptions& opt = {}) {
  if (cfg.phase != Phase::finetune) throw ConfigError("finetune called with phase=" + to_string(cfg.phase));
  cfg.validate();
  detail::check_labels(labels, images.size());
  check_backbone_shapes(in.student, in.model);
  Checkpoint c;
  c.model = in.model;
  c.train = cfg;
  c.ssl = in.ssl;
  c.input_mean = in.input_mean;
  c.input_std = in.input_std;
  c.provenance = in.provenance;
  c.student = detail::classifier_params(in.student);
  ssl::SupervisedObjective<float> obj(in.model);
  Rng unused(0);
  obj.init(c.student, unused);
  if (cfg.epochs > 0) {
    const auto ptrs = detail::pointers(images);
    detail::LoopHooks hooks;
    hooks.step_loss = [&](const std::vector<std::size_t>& idx, std::uint64_t seed, ParameterSet<float>* g) {
      ssl::Batch<float> b;
      for (auto i : idx) {
        b.images.push_back(ptrs[i]);
        b.labels.push_back(labels[i]);
      }
      return obj.loss(c.student, b, seed, g);
    };
    detail::run_loop(c, cfg, images.size(), hooks, opt);
  }
  detail::append_history(c, cfg, cfg.epochs > 0 ? detail::steps_per_epoch(images.size(), cfg.batch_size) * cfg.epochs : 0,
                         opt);
  return c;
}

// Positive-class probabilities from a checkpoint with a head.
inline std::vector<float> predict(const Checkpoint& c, const std::vector<ImageTensor<float>>& images, int chunk = 64) {
  return classify_batch(detail::pointers(images), c.student, c.model, chunk);
}

}  // namespace cxrssl::train
