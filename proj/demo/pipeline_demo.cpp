// In-memory run of the whole pipeline on a small synthetic set:
// MAE pretraining, linear probe, fine-tuning, then a report per stage.
//
//   pipeline_demo [epochs]

#include "cxrssl/data/preprocess.hpp"
#include "cxrssl/data/synth.hpp"
#include "cxrssl/eval/report.hpp"
#include "cxrssl/train/engine.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>

using namespace cxrssl;

namespace {

struct Set {
  std::vector<ImageTensor<float>> images;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

Set make_set(int n, std::uint64_t seed, const char* prefix, const data::ManifestMeta& stats) {
  data::SynthOptions o;
  o.n_images = n;
  o.image_size = 32;
  o.seed = seed;
  o.id_prefix = prefix;
  const auto ds = data::synth_generate(o);
  const data::PreprocessConfig pc{32, 32, 1, stats.mean, stats.std};
  Set s;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    s.images.push_back(data::preprocess<float>(ds.images[i], pc));
    s.labels.push_back(ds.manifest.records[i].label_value());
    s.ids.push_back(ds.manifest.records[i].image_id);
  }
  return s;
}

eval::EvaluationReport report(const train::Checkpoint& c, const Set& test) {
  const auto p = train::predict(c, test.images);
  eval::PredictionSet ps;
  for (std::size_t i = 0; i < p.size(); ++i) ps.items.push_back({test.ids[i], test.labels[i], p[i]});
  eval::EvalOptions eo;
  eo.bootstrap_reps = 500;
  return eval::evaluate(ps, eo);
}

void print(const char* stage, const eval::EvaluationReport& r) {
  std::printf("%-9s AUC %.3f [%.3f, %.3f]  AUPR %.3f  ACC %.3f\n", stage, r.auc, r.auc_lo, r.auc_hi, r.aupr, r.acc);
}

}  // namespace

int main(int argc, char** argv) {
  const int epochs = argc > 1 ? std::atoi(argv[1]) : 5;
  try {
    data::SynthOptions po;
    po.n_images = 600;
    po.image_size = 32;
    po.seed = 1;
    po.labeled = false;
    po.id_prefix = "pre";
    const auto pool_ds = data::synth_generate(po);
    const auto stats = pool_ds.manifest.meta;
    std::vector<ImageTensor<float>> pool;
    for (const auto& raw : pool_ds.images)
      pool.push_back(data::preprocess<float>(raw, {32, 32, 1, stats.mean, stats.std}));
    const Set train_set = make_set(300, 2, "tr", stats);
    const Set test_set = make_set(150, 3, "te", stats);

    const ModelConfig model = ModelConfig::vit_tiny_test();
    train::TrainConfig pc;
    pc.objective = ssl::ObjectiveKind::mae;
    pc.epochs = epochs;
    pc.warmup_epochs = epochs > 1 ? 1 : 0;
    pc.lr_initial = 1.5e-3;
    pc.lr_min = 1.5e-5;
    train::RunOptions ro;
    ro.log = [&](const train::LogRow& r) {
      if (r.step % 10 == 0) std::printf("  pretrain step %4lld  loss %.4f  lr %.2e\n", static_cast<long long>(r.step), r.loss, r.lr);
    };
    auto ck = train::pretrain(pc, model, ssl::SslConfig{}, pool, ro);
    ck.input_mean = stats.mean;
    ck.input_std = stats.std;

    train::TrainConfig probe_cfg;
    probe_cfg.phase = train::Phase::probe;
    probe_cfg.objective = ssl::ObjectiveKind::supervised;
    probe_cfg.epochs = 20;
    probe_cfg.warmup_epochs = 1;
    probe_cfg.lr_initial = 0.03;
    probe_cfg.lr_min = 3e-4;
    probe_cfg.wd_start = probe_cfg.wd_end = 0;
    const auto probed = train::probe(ck, probe_cfg, train_set.images, train_set.labels);
    print("probe", report(probed, test_set));

    auto ft_cfg = train::TrainConfig::finetune_defaults();
    ft_cfg.epochs = epochs;
    ft_cfg.warmup_epochs = epochs > 1 ? 1 : 0;
    ft_cfg.lr_initial = 1e-3;
    ft_cfg.lr_min = 1e-5;
    const auto tuned = train::finetune(probed, ft_cfg, train_set.images, train_set.labels);
    print("finetune", report(tuned, test_set));
  } catch (const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
