#pragma once

#include "cxrssl/backbone/config.hpp"
#include "cxrssl/backbone/params.hpp"
#include "cxrssl/core/digest.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/ssl/config.hpp"
#include "cxrssl/train/config.hpp"
#include "cxrssl/train/optim.hpp"
#include "cxrssl/train/schedule.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace cxrssl::train {

inline constexpr const char* kCheckpointFormat = "ckpt-v1";

// Layout: the 8-byte magic "ckpt-v1\n", a little-endian uint64 header length,
// the JSON header, then float32 little-endian tensor data. Tensor offsets in
// the header are relative to the start of the data block.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ssl::SslConfig ssl;
  ParameterSet<float> student;
  ParameterSet<float> state;  // "teacher/..." and "aux/..." paths
  AdamState<float> adam;
  ScheduleState schedule;
  double input_mean = 0;  // intensity standardization applied before the model
  double input_std = 1;
  nlohmann::json provenance = nlohmann::json::object();

  bool operator==(const Checkpoint& o) const {
    return nlohmann::json(model) == nlohmann::json(o.model) && nlohmann::json(train) == nlohmann::json(o.train) &&
           nlohmann::json(ssl) == nlohmann::json(o.ssl) && student == o.student && state == o.state && adam == o.adam &&
           schedule == o.schedule && input_mean == o.input_mean && input_std == o.input_std &&
           provenance == o.provenance;
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline void put_f32(std::string& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

inline float get_f32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

inline std::map<std::string, const Mat<float>*> flatten(const Checkpoint& c) {
  std::map<std::string, const Mat<float>*> all;
  auto add = [&](const ParameterSet<float>& s, const std::string& prefix) {
    for (const auto& [k, v] : s) {
      if (!all.emplace(prefix + k, &v).second) throw ValidationError("duplicate checkpoint tensor '" + prefix + k + "'");
    }
  };
  add(c.student, "student/");
  for (const auto& [k, v] : c.state) {
    if (k.rfind("teacher/", 0) != 0 && k.rfind("aux/", 0) != 0) {
      throw ValidationError("objective state path '" + k + "' needs a teacher/ or aux/ prefix");
    }
  }
  add(c.state, "");
  add(c.adam.m, "adam_m/");
  add(c.adam.v, "adam_v/");
  return all;
}

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string data;
  for (const auto& [name, m] : detail::flatten(c)) {
    tensors.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"dtype", "float32"}, {"offset", data.size()}});
    data.reserve(data.size() + static_cast<std::size_t>(m->size()) * 4);
    for (Eigen::Index i = 0; i < m->size(); ++i) detail::put_f32(data, m->data()[i]);
  }
  nlohmann::json header{{"format", kCheckpointFormat},
                        {"model", c.model},
                        {"train", c.train},
                        {"ssl", c.ssl},
                        {"schedule", c.schedule},
                        {"optimizer", {{"t", c.adam.t}}},
                        {"input", {{"mean", c.input_mean}, {"std", c.input_std}}},
                        {"provenance", c.provenance},
                        {"tensors", tensors},
                        {"data_bytes", data.size()}};
  const std::string h = header.dump();
  std::string out = "ckpt-v1\n";
  detail::put_u64(out, h.size());
  out += h;
  out += data;
  return out;
}

inline Checkpoint deserialize(const std::string& bytes, const std::string& source = "checkpoint") {
  if (bytes.size() < 16) throw ValidationError(source + ": too short to be a checkpoint");
  const std::string magic = bytes.substr(0, 8);
  if (magic != "ckpt-v1\n") {
    if (magic.rfind("ckpt-v", 0) == 0) {
      throw VersionMismatch(source + ": checkpoint format '" + magic.substr(0, magic.find('\n')) + "', expected " +
                            kCheckpointFormat);
    }
    throw ValidationError(source + ": not a checkpoint (bad magic)");
  }
  const std::uint64_t hlen = detail::get_u64(bytes, 8);
  if (hlen > bytes.size() - 16) throw ValidationError(source + ": header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(source + ": corrupt header: " + e.what());
  }
  try {
    if (header.at("format").get<std::string>() != kCheckpointFormat) {
      throw VersionMismatch(source + ": header format '" + header.at("format").get<std::string>() + "'");
    }
    const std::size_t base = 16 + hlen;
    const std::size_t data_bytes = header.at("data_bytes").get<std::size_t>();
    if (bytes.size() - base != data_bytes) throw ValidationError(source + ": data block size mismatch (truncated?)");
    Checkpoint c;
    c.model = header.at("model").get<ModelConfig>();
    c.train = header.at("train").get<TrainConfig>();
    c.ssl = header.at("ssl").get<ssl::SslConfig>();
    c.schedule = header.at("schedule").get<ScheduleState>();
    c.adam.t = header.at("optimizer").at("t").get<std::int64_t>();
    c.input_mean = header.at("input").at("mean").get<double>();
    c.input_std = header.at("input").at("std").get<double>();
    c.provenance = header.at("provenance");
    for (const auto& e : header.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      if (e.at("dtype").get<std::string>() != "float32") throw ValidationError(source + ": tensor '" + name + "' dtype");
      const auto rows = e.at("shape").at(0).get<Eigen::Index>();
      const auto cols = e.at("shape").at(1).get<Eigen::Index>();
      const std::size_t off = e.at("offset").get<std::size_t>();
      if (rows < 0 || cols < 0) throw ValidationError(source + ": tensor '" + name + "' has a negative shape");
      const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
      if (off > data_bytes || n * 4 > data_bytes - off) {
        throw ValidationError(source + ": tensor '" + name + "' lies outside the data block");
      }
      Mat<float> m(rows, cols);
      const char* p = bytes.data() + base + off;
      for (std::size_t i = 0; i < n; ++i) m.data()[i] = detail::get_f32(p + 4 * i);
      auto strip = [&](const char* prefix) {
        const std::size_t len = std::strlen(prefix);
        return name.compare(0, len, prefix) == 0 ? name.substr(len) : std::string();
      };
      if (name.rfind("student/", 0) == 0) {
        c.student.set(strip("student/"), std::move(m));
      } else if (name.rfind("adam_m/", 0) == 0) {
        c.adam.m.set(strip("adam_m/"), std::move(m));
      } else if (name.rfind("adam_v/", 0) == 0) {
        c.adam.v.set(strip("adam_v/"), std::move(m));
      } else if (name.rfind("teacher/", 0) == 0 || name.rfind("aux/", 0) == 0) {
        c.state.set(name, std::move(m));
      } else {
        throw ValidationError(source + ": unknown tensor prefix in '" + name + "'");
      }
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(source + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw ValidationError(source + ": " + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = serialize(c);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), path.string());
}

}  // namespace cxrssl::train
