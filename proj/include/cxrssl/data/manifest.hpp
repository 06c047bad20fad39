#pragma once

#include "cxrssl/core/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace cxrssl::data {

enum class Label { negative, positive, unlabeled };
enum class Sex { M, F, unknown };
enum class SplitTag { none, train, test };

inline std::string to_string(Label l) {
  switch (l) {
    case Label::negative: return "negative";
    case Label::positive: return "positive";
    case Label::unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

inline std::string to_string(Sex s) {
  switch (s) {
    case Sex::M: return "M";
    case Sex::F: return "F";
    case Sex::unknown: return "unknown";
  }
  return "unknown";
}

inline std::string to_string(SplitTag s) {
  switch (s) {
    case SplitTag::train: return "train";
    case SplitTag::test: return "test";
    case SplitTag::none: return "";
  }
  return "";
}

inline std::optional<Label> parse_label(const std::string& s) {
  if (s == "negative") return Label::negative;
  if (s == "positive") return Label::positive;
  if (s == "unlabeled") return Label::unlabeled;
  return std::nullopt;
}

inline std::optional<Sex> parse_sex(const std::string& s) {
  if (s == "M") return Sex::M;
  if (s == "F") return Sex::F;
  if (s == "unknown") return Sex::unknown;
  return std::nullopt;
}

inline std::optional<SplitTag> parse_split(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "test") return SplitTag::test;
  if (s.empty()) return SplitTag::none;
  return std::nullopt;
}

struct ImageRecord {
  std::string image_id;
  std::string path;
  std::string patient_id;
  Label label = Label::unlabeled;
  Sex sex = Sex::unknown;
  std::optional<double> age_years;
  std::string cohort;
  SplitTag split = SplitTag::none;

  bool labeled() const { return label != Label::unlabeled; }
  int label_value() const { return label == Label::positive ? 1 : label == Label::negative ? 0 : -1; }

  bool operator==(const ImageRecord&) const = default;
};

// Dataset-level metadata; intensity statistics are on the [0,1] scale.
struct ManifestMeta {
  std::string name;
  int channels = 1;
  double mean = 0.0;
  double std = 1.0;

  bool operator==(const ManifestMeta&) const = default;
};

struct Manifest {
  std::vector<ImageRecord> records;
  ManifestMeta meta;
  std::filesystem::path base_dir;  // relative image paths resolve here

  std::size_t size() const { return records.size(); }

  std::filesystem::path resolve(const ImageRecord& r) const {
    const std::filesystem::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  // Records usable by supervised phases.
  Manifest labeled() const {
    Manifest m{{}, meta, base_dir};
    for (const auto& r : records)
      if (r.labeled()) m.records.push_back(r);
    return m;
  }

  Manifest with_split(SplitTag s) const {
    Manifest m{{}, meta, base_dir};
    for (const auto& r : records)
      if (r.split == s) m.records.push_back(r);
    return m;
  }
};

inline const std::vector<std::string>& manifest_columns() {
  static const std::vector<std::string> cols{"image_id", "path", "patient_id", "label",
                                             "sex",      "age_years", "cohort", "split"};
  return cols;
}

namespace detail {

// One CSV record with RFC 4180 quoting; returns false at end of input.
inline bool read_csv_row(std::istream& in, std::vector<std::string>& fields, int& line) {
  fields.clear();
  std::string cur;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          cur += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c == '\n') {
      ++line;
      break;
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (!any) return false;
  fields.push_back(std::move(cur));
  return true;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_age(const std::optional<double>& a) {
  if (!a) return "";
  std::ostringstream os;
  os.precision(17);
  os << *a;
  return os.str();
}

}  // namespace detail

inline std::filesystem::path meta_path(const std::filesystem::path& csv) {
  return std::filesystem::path(csv.string() + ".meta.json");
}

// Parses manifest CSV text. `source` names the input in error messages.
// Line numbers in errors count the header as line 1.
inline Manifest parse_manifest(std::istream& in, const std::string& source = "manifest") {
  std::vector<std::string> f;
  int line = 1;
  if (!detail::read_csv_row(in, f, line)) throw ValidationError(source + ": empty file, header required");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::string name = f[i];
    if (i == 0 && name.size() >= 3 && name.compare(0, 3, "\xEF\xBB\xBF") == 0) name = name.substr(3);
    col[name] = i;
  }
  for (const auto& c : manifest_columns()) {
    if (!col.count(c)) throw ValidationError(source + ": line 1: missing column '" + c + "'");
  }
  Manifest m;
  std::map<std::string, int> seen;
  for (;;) {
    const int row_line = line;
    if (!detail::read_csv_row(in, f, line)) break;
    if (f.size() == 1 && f[0].empty()) continue;
    auto where = [&](const std::string& field) {
      return source + ": line " + std::to_string(row_line) + ", field '" + field + "'";
    };
    if (f.size() != col.size()) {
      throw ValidationError(source + ": line " + std::to_string(row_line) + ": expected " +
                            std::to_string(col.size()) + " fields, found " + std::to_string(f.size()));
    }
    auto get = [&](const char* name) -> const std::string& { return f[col.at(name)]; };
    ImageRecord r;
    r.image_id = get("image_id");
    if (r.image_id.empty()) throw ValidationError(where("image_id") + ": empty");
    if (auto it = seen.find(r.image_id); it != seen.end()) {
      throw ValidationError(source + ": duplicate image_id '" + r.image_id + "' on lines " +
                            std::to_string(it->second) + " and " + std::to_string(row_line));
    }
    seen.emplace(r.image_id, row_line);
    r.path = get("path");
    if (r.path.empty()) throw ValidationError(where("path") + ": empty");
    r.patient_id = get("patient_id");
    if (r.patient_id.empty()) throw ValidationError(where("patient_id") + ": empty");
    const auto label = parse_label(get("label"));
    if (!label) throw ValidationError(where("label") + ": unknown value '" + get("label") + "'");
    r.label = *label;
    const auto sex = parse_sex(get("sex"));
    if (!sex) throw ValidationError(where("sex") + ": unknown value '" + get("sex") + "'");
    r.sex = *sex;
    const std::string& age = get("age_years");
    if (!age.empty()) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(age, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != age.size() || !std::isfinite(v) || v < 0) {
        throw ValidationError(where("age_years") + ": '" + age + "' is not a non-negative number");
      }
      r.age_years = v;
    }
    r.cohort = get("cohort");
    const auto split = parse_split(get("split"));
    if (!split) throw ValidationError(where("split") + ": unknown value '" + get("split") + "'");
    r.split = *split;
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void write_manifest(std::ostream& out, const Manifest& m) {
  const auto& cols = manifest_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const auto& r : m.records) {
    out << detail::csv_field(r.image_id) << ',' << detail::csv_field(r.path) << ','
        << detail::csv_field(r.patient_id) << ',' << to_string(r.label) << ',' << to_string(r.sex) << ','
        << detail::format_age(r.age_years) << ',' << detail::csv_field(r.cohort) << ',' << to_string(r.split)
        << "\n";
  }
}

inline void to_json(nlohmann::json& j, const ManifestMeta& m) {
  j = nlohmann::json{{"name", m.name}, {"channels", m.channels}, {"mean", m.mean}, {"std", m.std}};
}

inline void from_json(const nlohmann::json& j, ManifestMeta& m) {
  m.name = j.value("name", std::string());
  m.channels = j.value("channels", 1);
  m.mean = j.value("mean", 0.0);
  m.std = j.value("std", 1.0);
}

// Reads `path` and its optional `<path>.meta.json` sidecar.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  Manifest m = parse_manifest(in, path.string());
  m.base_dir = path.parent_path();
  m.meta.name = path.stem().string();
  const auto mp = meta_path(path);
  if (std::filesystem::exists(mp)) {
    std::ifstream js(mp);
    try {
      m.meta = nlohmann::json::parse(js).get<ManifestMeta>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(mp.string() + ": " + e.what());
    }
    if (m.meta.channels != 1 && m.meta.channels != 3) throw ValidationError(mp.string() + ": channels must be 1 or 3");
    if (!(m.meta.std > 0)) throw ValidationError(mp.string() + ": std must be positive");
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    write_manifest(out, m);
  }
  std::ofstream js(meta_path(path), std::ios::binary);
  if (!js) throw IoError("cannot write '" + meta_path(path).string() + "'");
  js << nlohmann::json(m.meta).dump(2) << "\n";
}

// Paths (as written in the manifest) whose files do not exist.
inline std::vector<std::string> missing_files(const Manifest& m) {
  std::vector<std::string> out;
  for (const auto& r : m.records)
    if (!std::filesystem::exists(m.resolve(r))) out.push_back(r.path);
  return out;
}

}  // namespace cxrssl::data
