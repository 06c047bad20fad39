#pragma once

#include "cxrssl/cli/run_config.hpp"
#include "cxrssl/core/digest.hpp"
#include "cxrssl/data/manifest.hpp"
#include "cxrssl/data/preprocess.hpp"
#include "cxrssl/data/split.hpp"
#include "cxrssl/data/synth.hpp"
#include "cxrssl/eval/evaluate.hpp"
#include "cxrssl/eval/metrics.hpp"
#include "cxrssl/eval/report.hpp"
#include "cxrssl/train/checkpoint.hpp"
#include "cxrssl/train/engine.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace cxrssl::cli {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Inputs {
  std::string manifest, checkpoint, predictions;
};

namespace detail {

inline RunConfig resolve(const Common& c) {
  RunConfig rc;
  if (!c.config.empty()) rc.merge_file(c.config);
  for (const auto& s : c.sets) rc.set_assignment(s);
  if (c.seed) rc.set("seed", std::to_string(*c.seed));
  return rc;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

inline void require_file(const std::string& p, const char* what) {
  if (p.empty()) throw InvalidArgument(std::string("missing --") + what);
  if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " '" + p + "' does not exist");
}

// Manifest file plus the bytes of every image it references, in order.
inline std::string images_digest(const data::Manifest& m) {
  std::string acc;
  for (const auto& r : m.records) acc += r.image_id + ' ' + sha256_file(m.resolve(r)) + '\n';
  return sha256_hex(acc);
}

inline nlohmann::json manifest_input(const std::string& path, const data::Manifest& m) {
  return {{"path", path}, {"sha256", sha256_file(path)}, {"images_sha256", images_digest(m)}};
}

inline nlohmann::json file_input(const std::string& path) { return {{"path", path}, {"sha256", sha256_file(path)}}; }

// provenance.json and config.toml next to the artifacts. Digests of the
// listed outputs are recorded too; no timestamps, so reruns are identical.
inline void finish(const fs::path& out, const std::string& command, const RunConfig& rc, const nlohmann::json& inputs,
                   const std::vector<std::string>& outputs, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json p;
  p["tool"] = "cxrssl";
  p["version"] = kToolVersion;
  p["command"] = command;
  p["config"] = rc.tree();
  p["inputs"] = inputs;
  nlohmann::json o = nlohmann::json::object();
  for (const auto& name : outputs) o[name] = sha256_file(out / name);
  p["outputs"] = o;
  for (auto& [k, v] : extra.items()) p[k] = v;
  write_text(out / "config.toml", rc.to_toml());
  write_text(out / "provenance.json", p.dump(2) + "\n");
}

inline std::vector<int> labels_of(const data::Manifest& m) {
  std::vector<int> y;
  for (const auto& r : m.records) {
    if (!r.labeled()) throw UnlabeledData("image '" + r.image_id + "' has no label");
    y.push_back(r.label_value());
  }
  return y;
}

inline train::RunOptions run_options(const fs::path& out, const RunConfig& rc, const nlohmann::json& inputs,
                                     train::LogWriter& log) {
  train::RunOptions o;
  o.log = [&log](const train::LogRow& r) { log(r); };
  o.checkpoint_dir = out;
  o.provenance = {{"tool_version", kToolVersion}, {"config", rc.tree()}, {"inputs", inputs}};
  return o;
}

inline void print_epochs(std::ostream& os, const std::string& phase, const std::vector<train::LogRow>& rows) {
  const auto means = train::epoch_means(rows);
  if (means.empty()) {
    os << phase << ": no optimizer steps\n";
    return;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: %zu epochs, loss %.6g -> %.6g\n", phase.c_str(), means.size(), means.front(),
                means.back());
  os << buf;
}

}  // namespace detail

inline void cmd_synth(const Common& c, std::ostream& os) {
  const RunConfig rc = detail::resolve(c);
  const auto opts = rc.synth();
  const fs::path out(c.out);
  fs::create_directories(out);
  const auto ds = data::synth_generate(opts);
  data::write_synth_dataset(out, ds);
  detail::finish(out, "synth-data", rc, nlohmann::json::object(), {"manifest.csv", "manifest.csv.meta.json"},
                 {{"images_sha256", detail::images_digest(data::load_manifest(out / "manifest.csv"))}});
  os << "synth-data: " << ds.manifest.size() << " images -> " << (out / "manifest.csv").string() << "\n";
}

inline void cmd_split(const Common& c, const Inputs& in, std::ostream& os) {
  const RunConfig rc = detail::resolve(c);
  const auto opts = rc.split();
  detail::require_file(in.manifest, "manifest");
  const auto m = data::load_manifest(in.manifest);
  const fs::path out(c.out);
  fs::create_directories(out);
  auto r = data::stratified_split(m, opts);
  // image paths relative to the output directory
  const fs::path out_abs = fs::absolute(out).lexically_normal();
  auto rebase = [&](data::Manifest part) {
    for (auto& rec : part.records) {
      rec.path = fs::absolute(m.resolve(rec)).lexically_normal().lexically_relative(out_abs).generic_string();
    }
    part.base_dir = out;
    return part;
  };
  data::Manifest train_m = rebase(r.train), test_m = rebase(r.test);
  train_m.meta.name = "train";
  test_m.meta.name = "test";
  data::save_manifest(out / "train.csv", train_m);
  data::save_manifest(out / "test.csv", test_m);

  nlohmann::json rep;
  rep["train_images"] = train_m.size();
  rep["test_images"] = test_m.size();
  rep["strata"] = nlohmann::json::array();
  for (const auto& s : r.strata) {
    rep["strata"].push_back({{"stratum", s.stratum},
                             {"patients", s.patients},
                             {"train_patients", s.train_patients},
                             {"images", s.images},
                             {"train_images", s.train_images},
                             {"target_patients", s.target_patients}});
  }
  rep["warnings"] = nlohmann::json::array();
  for (const auto& w : r.warnings) {
    rep["warnings"].push_back({{"stratum", w.stratum}, {"achieved", w.achieved}, {"message", w.message}});
  }
  detail::write_text(out / "split_report.json", rep.dump(2) + "\n");
  detail::finish(out, "split", rc, {{"manifest", detail::manifest_input(in.manifest, m)}},
                 {"train.csv", "test.csv", "split_report.json"});
  os << "split: " << train_m.size() << " train / " << test_m.size() << " test images";
  if (!r.warnings.empty()) os << ", " << r.warnings.size() << " stratum warnings";
  os << "\n";
}

inline void cmd_pretrain(const Common& c, const Inputs& in, std::ostream& os) {
  const RunConfig rc = detail::resolve(c);
  const auto cfg = rc.phase(train::Phase::pretrain);
  const auto model = rc.model();
  const auto scfg = rc.ssl();
  detail::require_file(in.manifest, "manifest");
  const auto m = data::load_manifest(in.manifest);
  const fs::path out(c.out);
  fs::create_directories(out);
  // intensity statistics at model resolution; every later phase reuses them
  const auto meta = data::intensity_stats(m, model.image_height, model.image_width, model.channels);
  const data::PreprocessConfig pc{model.image_height, model.image_width, model.channels, meta.mean, meta.std};
  const auto images = data::load_images<float>(m, pc);
  const nlohmann::json inputs{{"manifest", detail::manifest_input(in.manifest, m)}};
  train::LogWriter log(out / "train_log.csv");
  std::vector<train::LogRow> rows;
  auto opt = detail::run_options(out, rc, inputs, log);
  opt.log = [&](const train::LogRow& r) {
    log(r);
    rows.push_back(r);
  };
  auto ck = train::pretrain(cfg, model, scfg, images, opt);
  ck.input_mean = meta.mean;
  ck.input_std = meta.std;
  train::save_checkpoint(out / "checkpoint.ckpt", ck);
  detail::finish(out, "pretrain", rc, inputs, {"checkpoint.ckpt"});
  detail::print_epochs(os, "pretrain(" + ssl::to_string(cfg.objective) + ")", rows);
}

inline void cmd_supervised(train::Phase phase, const Common& c, const Inputs& in, std::ostream& os) {
  const RunConfig rc = detail::resolve(c);
  const auto cfg = rc.phase(phase);
  detail::require_file(in.checkpoint, "checkpoint");
  detail::require_file(in.manifest, "manifest");
  const auto ck = train::load_checkpoint(in.checkpoint);
  const auto m = data::load_manifest(in.manifest);
  const auto labels = detail::labels_of(m);
  const auto images = data::load_images<float>(m, eval::input_config(ck));
  const fs::path out(c.out);
  fs::create_directories(out);
  const nlohmann::json inputs{{"checkpoint", detail::file_input(in.checkpoint)},
                              {"manifest", detail::manifest_input(in.manifest, m)}};
  train::LogWriter log(out / "train_log.csv");
  std::vector<train::LogRow> rows;
  auto opt = detail::run_options(out, rc, inputs, log);
  opt.log = [&](const train::LogRow& r) {
    log(r);
    rows.push_back(r);
  };
  const auto res = phase == train::Phase::probe ? train::probe(ck, cfg, images, labels, opt)
                                                : train::finetune(ck, cfg, images, labels, opt);
  train::save_checkpoint(out / "checkpoint.ckpt", res);
  detail::finish(out, train::to_string(phase), rc, inputs, {"checkpoint.ckpt"});
  detail::print_epochs(os, train::to_string(phase), rows);
}

inline void cmd_predict(const Common& c, const Inputs& in, std::ostream& os) {
  const RunConfig rc = detail::resolve(c);
  detail::require_file(in.checkpoint, "checkpoint");
  detail::require_file(in.manifest, "manifest");
  const auto ck = train::load_checkpoint(in.checkpoint);
  const auto m = data::load_manifest(in.manifest);
  const fs::path out(c.out);
  fs::create_directories(out);
  const auto p = eval::predict_manifest(ck, m);
  eval::save_predictions(out / "predictions.csv", p);
  detail::finish(out, "predict", rc,
                 {{"checkpoint", detail::file_input(in.checkpoint)}, {"manifest", detail::manifest_input(in.manifest, m)}},
                 {"predictions.csv"}, {{"predictions", p.provenance}});
  os << "predict: " << p.items.size() << " scores -> " << (out / "predictions.csv").string() << "\n";
}

inline void cmd_evaluate(const Common& c, const Inputs& in, std::ostream& os) {
  const RunConfig rc = detail::resolve(c);
  const auto opts = rc.eval();
  detail::require_file(in.predictions, "predictions");
  const auto p = eval::load_predictions(in.predictions);
  const fs::path out(c.out);
  fs::create_directories(out);
  const auto r = eval::evaluate(p, opts);
  detail::write_text(out / "report.json", eval::report_text(r));
  detail::finish(out, "evaluate", rc, {{"predictions", detail::file_input(in.predictions)}}, {"report.json"});
  char buf[200];
  std::snprintf(buf, sizeof buf, "evaluate: AUC %.4f [%.4f, %.4f]  AUPR %.4f  ACC %.4f\n", r.auc, r.auc_lo, r.auc_hi,
                r.aupr, r.acc);
  os << buf;
}

inline void cmd_curves(const Common& c, const Inputs& in, std::ostream& os) {
  const RunConfig rc = detail::resolve(c);
  detail::require_file(in.predictions, "predictions");
  const auto p = eval::load_predictions(in.predictions);
  const fs::path out(c.out);
  fs::create_directories(out);
  const auto y = p.labels();
  const auto s = p.scores();
  {
    std::ofstream f(out / "roc.csv", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (out / "roc.csv").string());
    eval::write_roc_csv(f, eval::roc_curve(y, s));
  }
  {
    std::ofstream f(out / "pr.csv", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (out / "pr.csv").string());
    eval::write_pr_csv(f, eval::pr_curve(y, s));
  }
  detail::finish(out, "curves", rc, {{"predictions", detail::file_input(in.predictions)}}, {"roc.csv", "pr.csv"});
  os << "curves: roc.csv, pr.csv -> " << out.string() << "\n";
}

// One-line machine-readable error: error: code=<token> message="<json string>"
inline std::string error_line(const std::string& code, const std::string& message) {
  return "error: code=" + code + " message=" + nlohmann::json(message).dump();
}

inline int run(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"Self-supervised ViT pipeline for chest X-ray TB detection", "cxrssl"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  Common common;
  Inputs in;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "TOML-style config file");
    sub->add_option("--set", common.sets, "override, key=value (repeatable)");
    sub->add_option("--seed", common.seed, "master seed (overrides config)");
    sub->add_option("--out", common.out, "output directory")->required();
  };
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic labelled CXR dataset");
  auto* split = app.add_subcommand("split", "patient-level stratified train/test split");
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  auto* probe = app.add_subcommand("probe", "linear probe on a frozen backbone");
  auto* ft = app.add_subcommand("finetune", "end-to-end fine-tuning");
  auto* pred = app.add_subcommand("predict", "score a labelled manifest");
  auto* ev = app.add_subcommand("evaluate", "ACC/AUPR/AUC with confidence intervals");
  auto* cur = app.add_subcommand("curves", "ROC and PR curve points");
  for (auto* s : {synth, split, pre, probe, ft, pred, ev, cur}) add_common(s);
  for (auto* s : {split, pre, probe, ft, pred}) s->add_option("--manifest", in.manifest, "manifest CSV");
  for (auto* s : {probe, ft, pred}) s->add_option("--checkpoint", in.checkpoint, "checkpoint file");
  for (auto* s : {ev, cur}) s->add_option("--predictions", in.predictions, "predictions CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, os, es);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, os, es);
  } catch (const CLI::ParseError& e) {
    es << error_line("usage", e.what()) << "\n";
    return 2;
  }

  try {
    if (*synth) cmd_synth(common, os);
    if (*split) cmd_split(common, in, os);
    if (*pre) cmd_pretrain(common, in, os);
    if (*probe) cmd_supervised(train::Phase::probe, common, in, os);
    if (*ft) cmd_supervised(train::Phase::finetune, common, in, os);
    if (*pred) cmd_predict(common, in, os);
    if (*ev) cmd_evaluate(common, in, os);
    if (*cur) cmd_curves(common, in, os);
  } catch (const Error& e) {
    es << error_line(e.code(), e.what()) << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    es << error_line("io_error", e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    es << error_line("internal", e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cxrssl::cli
