#pragma once

#include "cxrssl/core/error.hpp"
#include "cxrssl/core/rng.hpp"
#include "cxrssl/data/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace cxrssl::data {

enum class StratKey { cohort, label, sex, age_bin };

inline StratKey parse_strat_key(const std::string& s) {
  if (s == "cohort") return StratKey::cohort;
  if (s == "label") return StratKey::label;
  if (s == "sex") return StratKey::sex;
  if (s == "age_bin") return StratKey::age_bin;
  throw InvalidArgument("unknown stratification key '" + s + "'");
}

inline std::string to_string(StratKey k) {
  switch (k) {
    case StratKey::cohort: return "cohort";
    case StratKey::label: return "label";
    case StratKey::sex: return "sex";
    case StratKey::age_bin: return "age_bin";
  }
  return "cohort";
}

// Half-open age band [lo, hi) in years.
struct AgeBand {
  std::string name;
  double lo = 0;
  double hi = std::numeric_limits<double>::infinity();
};

// 0-3, 4-12, 13-18 years and adult; fractional ages fall in the band of
// their completed years.
inline std::vector<AgeBand> default_age_bands() {
  return {{"0-3", 0, 4}, {"4-12", 4, 13}, {"13-18", 13, 19}, {"adult", 19, std::numeric_limits<double>::infinity()}};
}

inline std::string age_bin(const std::optional<double>& age, const std::vector<AgeBand>& bands) {
  if (!age) return "unknown";
  for (const auto& b : bands)
    if (*age >= b.lo && *age < b.hi) return b.name;
  return "other";
}

struct SplitOptions {
  double train_fraction = 0.8;
  std::vector<StratKey> keys{StratKey::cohort, StratKey::label, StratKey::sex, StratKey::age_bin};
  std::vector<AgeBand> age_bands = default_age_bands();
  std::uint64_t seed = 0;
};

struct StratumReport {
  std::string stratum;
  int patients = 0;
  int train_patients = 0;
  int images = 0;
  int train_images = 0;
  double target_patients = 0;  // train_fraction * patients
};

struct SplitWarning {
  std::string stratum;
  double achieved = 0;  // train share of the stratum's patients
  std::string message;
};

struct SplitResult {
  Manifest train;
  Manifest test;
  std::vector<StratumReport> strata;
  std::vector<SplitWarning> warnings;
};

inline std::string stratum_of(const ImageRecord& r, const SplitOptions& o) {
  std::string s;
  for (StratKey k : o.keys) {
    if (!s.empty()) s += '|';
    switch (k) {
      case StratKey::cohort: s += "cohort=" + r.cohort; break;
      case StratKey::label: s += "label=" + to_string(r.label); break;
      case StratKey::sex: s += "sex=" + to_string(r.sex); break;
      case StratKey::age_bin: s += "age=" + age_bin(r.age_years, o.age_bands); break;
    }
  }
  return s.empty() ? "all" : s;
}

// Patient-disjoint stratified split.
//
// A patient belongs to the stratum of its first record in manifest order.
// Train patient counts per stratum are floor(f * n_s) plus one for the
// strata with the largest remainders, so that the total equals
// round(f * N). Within a stratum, patients are visited largest first (ties
// in seeded random order) and each goes to the side whose image quota is
// further from being met, while that side still has patient slots.
inline SplitResult stratified_split(const Manifest& m, const SplitOptions& o) {
  if (!(o.train_fraction > 0 && o.train_fraction < 1)) {
    throw InvalidArgument("train_fraction must be in (0,1)");
  }
  const double f = o.train_fraction;

  // patients in first-appearance order
  std::vector<std::string> patient_order;
  std::map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    auto [it, fresh] = rows_of.try_emplace(m.records[i].patient_id);
    if (fresh) patient_order.push_back(m.records[i].patient_id);
    it->second.push_back(i);
  }
  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& p : patient_order) strata[stratum_of(m.records[rows_of[p].front()], o)].push_back(p);

  // largest-remainder apportionment of train patient slots
  std::vector<std::string> names;
  std::vector<int> quota;
  std::vector<double> remainder;
  int assigned = 0;
  for (const auto& [name, pats] : strata) {
    const double exact = f * static_cast<double>(pats.size());
    const int fl = static_cast<int>(std::floor(exact));
    names.push_back(name);
    quota.push_back(fl);
    remainder.push_back(exact - fl);
    assigned += fl;
  }
  const int total_target = static_cast<int>(std::lround(f * static_cast<double>(patient_order.size())));
  std::vector<std::size_t> by_rem(names.size());
  std::iota(by_rem.begin(), by_rem.end(), 0);
  std::stable_sort(by_rem.begin(), by_rem.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; k < by_rem.size() && assigned < total_target; ++k) {
    if (remainder[by_rem[k]] > 0) {
      ++quota[by_rem[k]];
      ++assigned;
    }
  }

  std::map<std::string, bool> to_train;
  SplitResult res;
  for (std::size_t s = 0; s < names.size(); ++s) {
    std::vector<std::string> pats = strata[names[s]];
    Rng rng(mix_seed(o.seed, fnv1a64(names[s])));
    rng.shuffle(pats.begin(), pats.end());
    std::stable_sort(pats.begin(), pats.end(),
                     [&](const std::string& a, const std::string& b) { return rows_of[a].size() > rows_of[b].size(); });
    int images = 0;
    for (const auto& p : pats) images += static_cast<int>(rows_of[p].size());
    const int train_slots = quota[s];
    const int test_slots = static_cast<int>(pats.size()) - train_slots;
    int tr_p = 0, te_p = 0, tr_i = 0, te_i = 0;
    for (const auto& p : pats) {
      const int k = static_cast<int>(rows_of[p].size());
      const double need_train = f * images - tr_i;
      const double need_test = (1 - f) * images - te_i;
      bool train = need_train >= need_test;
      if (train && tr_p >= train_slots) train = false;
      if (!train && te_p >= test_slots) train = true;
      to_train[p] = train;
      if (train) {
        ++tr_p;
        tr_i += k;
      } else {
        ++te_p;
        te_i += k;
      }
    }
    StratumReport rep{names[s], static_cast<int>(pats.size()), tr_p, images, tr_i, f * static_cast<double>(pats.size())};
    res.strata.push_back(rep);
    const double share = static_cast<double>(tr_p) / static_cast<double>(pats.size());
    if (pats.size() < 2) {
      res.warnings.push_back({names[s], share,
                              "stratum '" + names[s] + "' has a single patient; train share is " +
                                  std::to_string(share) + " instead of " + std::to_string(f)});
    } else if (std::abs(tr_p - f * static_cast<double>(pats.size())) > 1.0) {
      res.warnings.push_back({names[s], share,
                              "stratum '" + names[s] + "' train share " + std::to_string(share) +
                                  " deviates from " + std::to_string(f) + " by more than one patient"});
    }
  }

  res.train.meta = res.test.meta = m.meta;
  res.train.base_dir = res.test.base_dir = m.base_dir;
  for (const auto& r : m.records) {
    ImageRecord c = r;
    if (to_train[r.patient_id]) {
      c.split = SplitTag::train;
      res.train.records.push_back(std::move(c));
    } else {
      c.split = SplitTag::test;
      res.test.records.push_back(std::move(c));
    }
  }
  return res;
}

// Whole manifest with the split column filled in, row order preserved.
inline Manifest tag_split(const Manifest& m, const SplitResult& r) {
  std::map<std::string, SplitTag> tag;
  for (const auto& x : r.train.records) tag[x.image_id] = SplitTag::train;
  for (const auto& x : r.test.records) tag[x.image_id] = SplitTag::test;
  Manifest out = m;
  for (auto& x : out.records) x.split = tag.at(x.image_id);
  return out;
}

}  // namespace cxrssl::data
