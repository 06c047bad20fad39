#pragma once

#include "cxrssl/backbone/config.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/data/split.hpp"
#include "cxrssl/data/synth.hpp"
#include "cxrssl/eval/report.hpp"
#include "cxrssl/ssl/config.hpp"
#include "cxrssl/train/config.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cxrssl::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Resolved configuration. The tree holds every key with its default; files
// and --set overrides may only replace existing leaves, and the default's
// JSON type decides how the text is parsed.
//
//   seed
//   model.*  ssl.*  data.*  eval.*
//   train.pretrain.*  train.probe.*  train.finetune.*
class RunConfig {
 public:
  RunConfig() : tree_(defaults()) {}

  static nlohmann::json defaults() {
    nlohmann::json t;
    t["seed"] = std::uint64_t{0};
    t["model"] = ModelConfig::vit_s16();
    t["ssl"] = ssl::SslConfig{};
    auto phase = [](const train::TrainConfig& c, bool keep_objective) {
      nlohmann::json j = c;
      j.erase("phase");
      j.erase("seed");
      if (!keep_objective) j.erase("objective");
      return j;
    };
    train::TrainConfig pre;
    train::TrainConfig probe;
    probe.phase = train::Phase::probe;
    probe.objective = ssl::ObjectiveKind::supervised;
    train::TrainConfig ft = train::TrainConfig::finetune_defaults();
    t["train"]["pretrain"] = phase(pre, true);
    t["train"]["probe"] = phase(probe, false);
    t["train"]["finetune"] = phase(ft, false);

    const data::SynthOptions so;
    const data::SplitOptions sp;
    std::string keys;
    for (auto k : sp.keys) keys += (keys.empty() ? "" : ",") + data::to_string(k);
    t["data"] = {{"n_images", so.n_images},
                 {"positive_fraction", so.positive_fraction},
                 {"image_size", so.image_size},
                 {"max_images_per_patient", so.max_images_per_patient},
                 {"labeled", so.labeled},
                 {"shifted", so.shifted},
                 {"id_prefix", so.id_prefix},
                 {"lesion_contrast", so.lesion_contrast},
                 {"noise_sd", so.noise_sd},
                 {"train_fraction", sp.train_fraction},
                 {"split_keys", keys}};
    const eval::EvalOptions eo;
    t["eval"] = {{"threshold", eo.threshold}, {"bootstrap_reps", eo.bootstrap_reps}, {"alpha", eo.alpha}};
    return t;
  }

  const nlohmann::json& tree() const { return tree_; }

  // key: dotted path such as "train.probe.epochs"
  void set(const std::string& key, const std::string& text) {
    nlohmann::json* node = &tree_;
    std::stringstream ss(key);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
      node = &(*node)[part];
    }
    if (node->is_object()) throw ConfigError("config key '" + key + "' names a section, not a value");
    *node = parse_as(*node, text, key);
  }

  // "key=value"
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }

  void merge_toml(std::istream& in, const std::string& source = "config") {
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
      throw ConfigError(source + ": " + e.what());
    }
    for (const auto& it : items) {
      if (it.name == "++" || it.name == "--") continue;  // section markers
      std::string key;
      for (const auto& p : it.parents) key += p + ".";
      key += it.name;
      std::string text;
      for (std::size_t i = 0; i < it.inputs.size(); ++i) text += (i ? "," : "") + it.inputs[i];
      try {
        set(key, text);
      } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
      }
    }
  }

  void merge_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open config '" + p.string() + "'");
    merge_toml(in, p.string());
  }

  std::uint64_t seed() const { return tree_.at("seed").get<std::uint64_t>(); }

  ModelConfig model() const {
    return typed<ModelConfig>("model", [&] {
      auto m = tree_.at("model").get<ModelConfig>();
      m.validate();
      return m;
    });
  }

  ssl::SslConfig ssl() const {
    return typed<ssl::SslConfig>("ssl", [&] {
      auto s = tree_.at("ssl").get<ssl::SslConfig>();
      s.validate();
      return s;
    });
  }

  train::TrainConfig phase(train::Phase p) const {
    const std::string name = train::to_string(p);
    return typed<train::TrainConfig>("train." + name, [&] {
      nlohmann::json j = tree_.at("train").at(name);
      j["phase"] = name;
      j["seed"] = seed();
      if (!j.contains("objective")) j["objective"] = ssl::to_string(ssl::ObjectiveKind::supervised);
      auto c = j.get<train::TrainConfig>();
      c.validate();
      return c;
    });
  }

  data::SynthOptions synth() const {
    return typed<data::SynthOptions>("data", [&] {
      const auto& d = tree_.at("data");
      data::SynthOptions o;
      o.n_images = d.at("n_images").get<int>();
      o.positive_fraction = d.at("positive_fraction").get<double>();
      o.image_size = d.at("image_size").get<int>();
      o.seed = seed();
      o.max_images_per_patient = d.at("max_images_per_patient").get<int>();
      o.labeled = d.at("labeled").get<bool>();
      o.shifted = d.at("shifted").get<bool>();
      o.id_prefix = d.at("id_prefix").get<std::string>();
      o.lesion_contrast = d.at("lesion_contrast").get<double>();
      o.noise_sd = d.at("noise_sd").get<double>();
      o.validate();
      return o;
    });
  }

  data::SplitOptions split() const {
    return typed<data::SplitOptions>("data", [&] {
      const auto& d = tree_.at("data");
      data::SplitOptions o;
      o.train_fraction = d.at("train_fraction").get<double>();
      if (!(o.train_fraction > 0 && o.train_fraction < 1)) throw ConfigError("data.train_fraction must be in (0,1)");
      o.keys.clear();
      std::stringstream ss(d.at("split_keys").get<std::string>());
      std::string k;
      while (std::getline(ss, k, ',')) {
        if (!k.empty()) o.keys.push_back(data::parse_strat_key(k));
      }
      o.seed = seed();
      return o;
    });
  }

  eval::EvalOptions eval() const {
    return typed<eval::EvalOptions>("eval", [&] {
      const auto& e = tree_.at("eval");
      eval::EvalOptions o;
      o.threshold = e.at("threshold").get<double>();
      o.bootstrap_reps = e.at("bootstrap_reps").get<int>();
      o.alpha = e.at("alpha").get<double>();
      o.seed = seed();
      if (o.bootstrap_reps < 1) throw ConfigError("eval.bootstrap_reps must be >= 1");
      if (!(o.alpha > 0 && o.alpha < 1)) throw ConfigError("eval.alpha must be in (0,1)");
      return o;
    });
  }

  // Round-trips through merge_toml.
  std::string to_toml() const {
    std::string out;
    emit(out, tree_, "");
    return out;
  }

 private:
  nlohmann::json tree_;

  template <typename T, typename F>
  static T typed(const std::string& section, F&& make) {
    try {
      return make();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(section + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(section + ": " + e.what());
    }
  }

  static nlohmann::json parse_as(const nlohmann::json& like, const std::string& text, const std::string& key) {
    auto bad = [&](const char* what) { return ConfigError("config key '" + key + "': '" + text + "' is not " + what); };
    if (like.is_boolean()) {
      if (text == "true") return true;
      if (text == "false") return false;
      throw bad("a boolean");
    }
    if (like.is_number_unsigned()) {
      std::uint64_t v = 0;
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw bad("a non-negative integer");
      return v;
    }
    if (like.is_number_integer()) {
      std::int64_t v = 0;
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw bad("an integer");
      return v;
    }
    if (like.is_number_float()) {
      double v = 0;
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size() || !std::isfinite(v)) throw bad("a finite number");
      return v;
    }
    return text;
  }

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_number_float()) {
      char buf[64];
      const auto r = std::to_chars(buf, buf + sizeof buf, v.get<double>());
      std::string s(buf, r.ptr);
      if (s.find_first_of(".en") == std::string::npos) s += ".0";
      return s;
    }
    return v.dump();  // integers, booleans, and JSON-escaped strings (valid TOML basic strings)
  }

  static void emit(std::string& out, const nlohmann::json& node, const std::string& prefix) {
    for (const auto& [k, v] : node.items())
      if (!v.is_object()) out += k + " = " + scalar(v) + "\n";
    for (const auto& [k, v] : node.items()) {
      if (!v.is_object()) continue;
      const std::string name = prefix.empty() ? k : prefix + "." + k;
      bool leaves = false;
      for (const auto& [kk, vv] : v.items()) leaves |= !vv.is_object();
      if (leaves) out += "\n[" + name + "]\n";
      emit(out, v, name);
    }
  }
};

}  // namespace cxrssl::cli
