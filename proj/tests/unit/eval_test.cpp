#include "cxrssl/data/synth.hpp"
#include "cxrssl/eval/bootstrap.hpp"
#include "cxrssl/eval/evaluate.hpp"
#include "cxrssl/eval/metrics.hpp"
#include "cxrssl/eval/report.hpp"
#include "support/metric_oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace cxrssl;
using namespace cxrssl::eval;

namespace {

struct Instance {
  std::vector<int> y;
  std::vector<double> s;
};

// Random labels with both classes present; scores rounded to a coarse grid
// so ties are common.
Instance random_instance(Rng& rng, std::size_t n, bool ties) {
  Instance in;
  do {
    in.y.assign(n, 0);
    in.s.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      in.y[i] = rng.bernoulli(0.4) ? 1 : 0;
      double v = rng.normal(in.y[i] ? 0.7 : 0.0, 1.0);
      if (ties) v = std::round(v * 4) / 4;
      in.s[i] = v;
    }
  } while (std::count(in.y.begin(), in.y.end(), 1) < 2 || std::count(in.y.begin(), in.y.end(), 0) < 2);
  return in;
}

}  // namespace

TEST(RocAuc, SpecExample) {
  EXPECT_DOUBLE_EQ(roc_auc({0, 0, 1, 1}, {0.1, 0.4, 0.35, 0.8}), 0.75);
  EXPECT_DOUBLE_EQ(oracle::pair_count_auc({0, 0, 1, 1}, {0.1, 0.4, 0.35, 0.8}), 0.75);
}

TEST(RocAuc, PerfectAndAllTied) {
  EXPECT_EQ(roc_auc({0, 0, 1, 1}, {0.1, 0.2, 0.3, 0.4}), 1.0);
  EXPECT_EQ(roc_auc({0, 1, 0, 1}, {0.5, 0.5, 0.5, 0.5}), 0.5);
}

TEST(RocAuc, SingleClassThrows) {
  EXPECT_THROW(roc_auc({1, 1}, {0.2, 0.3}), UndefinedMetric);
  EXPECT_THROW(roc_auc({}, {}), UndefinedMetric);
  EXPECT_THROW(roc_auc({0, 1}, {0.2}), InvalidArgument);
  EXPECT_THROW(roc_auc({0, 2}, {0.2, 0.1}), InvalidArgument);
  EXPECT_THROW(roc_auc({0, 1}, {0.2, std::nan("")}), NonFiniteError);
}

TEST(RocAuc, MatchesPairCountingWithTies) {
  Rng rng(1);
  for (int k = 0; k < 300; ++k) {
    const auto in = random_instance(rng, 4 + rng.below(197), k % 2 == 0);
    EXPECT_NEAR(roc_auc(in.y, in.s), oracle::pair_count_auc(in.y, in.s), 1e-12);
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransforms) {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const auto in = random_instance(rng, 60, k % 2 == 0);
    std::vector<double> e(in.s.size()), a(in.s.size());
    for (std::size_t i = 0; i < in.s.size(); ++i) {
      e[i] = std::exp(in.s[i]);
      a[i] = 3.0 * in.s[i] + 7.0;
    }
    const double base = roc_auc(in.y, in.s);
    EXPECT_EQ(roc_auc(in.y, e), base);
    EXPECT_EQ(roc_auc(in.y, a), base);
  }
}

TEST(RocAuc, NegatedScoresComplement) {
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    const auto in = random_instance(rng, 80, false);
    std::vector<double> neg(in.s.size());
    for (std::size_t i = 0; i < in.s.size(); ++i) neg[i] = -in.s[i];
    EXPECT_NEAR(roc_auc(in.y, in.s) + roc_auc(in.y, neg), 1.0, 1e-12);
  }
}

TEST(Delong, PerfectSeparationDegenerate) {
  const auto d = delong({0, 0, 0, 1, 1, 1}, {0.1, 0.2, 0.3, 0.7, 0.8, 0.9});
  EXPECT_EQ(d.auc, 1.0);
  EXPECT_EQ(d.variance, 0.0);
  EXPECT_EQ(d.lo, 1.0);
  EXPECT_EQ(d.hi, 1.0);
}

TEST(Delong, MatchesNaiveStructuralComponents) {
  Rng rng(4);
  for (int k = 0; k < 200; ++k) {
    const auto in = random_instance(rng, k == 0 ? 50 : 4 + rng.below(197), k % 3 == 0);
    const auto d = delong(in.y, in.s);
    EXPECT_NEAR(d.variance, oracle::naive_delong_variance(in.y, in.s), 1e-12);
    EXPECT_LE(d.lo, d.auc);
    EXPECT_GE(d.hi, d.auc);
    EXPECT_GE(d.lo, 0.0);
    EXPECT_LE(d.hi, 1.0);
  }
}

TEST(Delong, UsesNormalQuantile) {
  Rng rng(11);
  const auto in = random_instance(rng, 200, false);
  const auto d = delong(in.y, in.s);
  ASSERT_GT(d.lo, 0.0);
  ASSERT_LT(d.hi, 1.0);
  const double half = (d.hi - d.lo) / 2;
  EXPECT_NEAR(half / std::sqrt(d.variance), 1.959964, 1e-6);
}

TEST(Aupr, Examples) {
  EXPECT_EQ(aupr({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}), 1.0);
  EXPECT_DOUBLE_EQ(aupr({0, 1}, {0.9, 0.1}), 0.5);
  EXPECT_THROW(aupr({0, 0}, {0.1, 0.2}), UndefinedMetric);
}

TEST(Aupr, MatchesThresholdEnumeration) {
  Rng rng(5);
  for (int k = 0; k < 300; ++k) {
    const auto in = random_instance(rng, k == 0 ? 30 : 4 + rng.below(197), k % 2 == 1);
    EXPECT_NEAR(aupr(in.y, in.s), oracle::threshold_enum_aupr(in.y, in.s), 1e-12);
  }
}

TEST(Aupr, RandomScorerNearPrevalence) {
  Rng rng(6);
  double total = 0, prev = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    std::vector<int> y(500);
    std::vector<double> s(500);
    for (std::size_t i = 0; i < 500; ++i) {
      y[i] = rng.bernoulli(0.3) ? 1 : 0;
      s[i] = rng.uniform();
    }
    total += aupr(y, s);
    prev += std::count(y.begin(), y.end(), 1) / 500.0;
  }
  EXPECT_NEAR(total / trials, prev / trials, 0.1);
}

TEST(Confusion, Examples) {
  const auto m = confusion_metrics({1, 1, 0, 0}, {0.9, 0.2, 0.8, 0.1}, 0.5);
  EXPECT_EQ(m.acc, 0.5);
  EXPECT_EQ(m.tpr, 0.5);
  EXPECT_EQ(m.tnr, 0.5);
  EXPECT_EQ(confusion_metrics({1, 0, 1}, {0.0, 0.3, 0.7}, 0.0).tpr, 1.0);
  EXPECT_EQ(confusion_metrics({1, 0, 0}, {1.0, 1.0, 0.3}, std::nextafter(1.0, 2.0)).tnr, 1.0);
  EXPECT_EQ(confusion_metrics({1}, {0.5}, 0.5).tp, 1u);  // score == threshold is a positive call
}

TEST(Confusion, UndefinedRatesAreNaN) {
  const auto m = confusion_metrics({0, 0}, {0.1, 0.9});
  EXPECT_TRUE(std::isnan(m.tpr));
  EXPECT_EQ(m.tnr, 0.5);
  EXPECT_THROW(confusion_metrics({}, {}), UndefinedMetric);
}

TEST(RocCurve, PerfectPassesThroughCorner) {
  const auto pts = roc_curve({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9});
  bool corner = false;
  for (const auto& p : pts) corner |= (p.fpr == 0.0 && p.tpr == 1.0);
  EXPECT_TRUE(corner);
}

TEST(RocCurve, AllTiedIsDiagonal) {
  const auto pts = roc_curve({0, 1, 1}, {0.3, 0.3, 0.3});
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].fpr, 0.0);
  EXPECT_EQ(pts[0].tpr, 0.0);
  EXPECT_EQ(pts[1].fpr, 1.0);
  EXPECT_EQ(pts[1].tpr, 1.0);
}

TEST(RocCurve, TrapezoidEqualsAuc) {
  Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    const auto in = random_instance(rng, 5 + rng.below(150), k % 2 == 0);
    const auto pts = roc_curve(in.y, in.s);
    EXPECT_NEAR(trapezoid_area(pts), oracle::pair_count_auc(in.y, in.s), 1e-12);
    std::set<double> distinct(in.s.begin(), in.s.end());
    EXPECT_EQ(pts.size(), distinct.size() + 1);
    for (std::size_t i = 1; i < pts.size(); ++i) {
      EXPECT_GE(pts[i].fpr, pts[i - 1].fpr);
      EXPECT_GE(pts[i].tpr, pts[i - 1].tpr);
    }
    EXPECT_EQ(pts.back().fpr, 1.0);
    EXPECT_EQ(pts.back().tpr, 1.0);
  }
}

TEST(PrCurve, StepAreaEqualsAupr) {
  Rng rng(8);
  for (int k = 0; k < 50; ++k) {
    const auto in = random_instance(rng, 40, k % 2 == 0);
    const auto pts = pr_curve(in.y, in.s);
    double area = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) area += (pts[i].recall - pts[i - 1].recall) * pts[i].precision;
    EXPECT_NEAR(area, aupr(in.y, in.s), 1e-12);
    EXPECT_EQ(pts.back().recall, 1.0);
  }
}

TEST(Bootstrap, AllCorrectHasZeroWidth) {
  const std::vector<int> y{1, 0, 1, 0, 1, 0};
  const std::vector<double> s{0.9, 0.1, 0.9, 0.1, 0.9, 0.1};
  const auto r = bootstrap_ci(accuracy_metric(), y, s, 500, 3);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.lo, 1.0);
  EXPECT_EQ(r.hi, 1.0);
  EXPECT_EQ(r.replicates + r.skipped, 500);
}

TEST(Bootstrap, DeterministicPerSeed) {
  Rng rng(9);
  const auto in = random_instance(rng, 100, false);
  const auto a = bootstrap_ci(aupr_metric(), in.y, in.s, 2000, 42);
  const auto b = bootstrap_ci(aupr_metric(), in.y, in.s, 2000, 42);
  EXPECT_EQ(a.lo, b.lo);
  EXPECT_EQ(a.hi, b.hi);
  const auto c = bootstrap_ci(aupr_metric(), in.y, in.s, 2000, 43);
  EXPECT_TRUE(c.lo != a.lo || c.hi != a.hi);
  EXPECT_LE(a.lo, a.value);
  EXPECT_GE(a.hi, a.value);
}

TEST(Bootstrap, TinySamplesRedrawOrSkip) {
  // With one positive of three, single-class resamples are common.
  const auto r = bootstrap_ci(accuracy_metric(), {1, 0, 0}, {0.9, 0.2, 0.6}, 300, 1);
  EXPECT_EQ(r.skipped, 0);
  EXPECT_EQ(r.replicates, 300);
  const auto z = bootstrap_ci(accuracy_metric(), {1, 0, 0}, {0.9, 0.2, 0.6}, 50, 1, 0.05, 0);
  EXPECT_GT(z.skipped, 0);
  EXPECT_EQ(z.replicates + z.skipped, 50);
  EXPECT_THROW(bootstrap_ci(accuracy_metric(), {1, 1}, {0.9, 0.2}, 10, 1), UndefinedMetric);
  EXPECT_THROW(bootstrap_ci(accuracy_metric(), {1, 0}, {0.9, 0.2}, 0, 1), InvalidArgument);
}

TEST(Bootstrap, QuantileInterpolates) {
  EXPECT_DOUBLE_EQ(quantile_sorted({1, 2, 3, 4, 5}, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile_sorted({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile_sorted({0, 10}, 0.025), 0.25);
}

TEST(Report, JsonKeysExactly) {
  PredictionSet p;
  p.items = {{"a", 1, 0.9}, {"b", 0, 0.2}, {"c", 1, 0.4}, {"d", 0, 0.6}, {"e", 1, 0.7}};
  const auto r = evaluate(p, EvalOptions{0.5, 200, 1, 0.05});
  const auto j = to_json(r);
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"acc", "acc_ci", "auc", "auc_ci", "aupr", "aupr_ci", "n_neg", "n_pos", "threshold",
                                            "tnr", "tpr"}));
  EXPECT_EQ(j["n_pos"], 3);
  EXPECT_EQ(j["n_neg"], 2);
  EXPECT_DOUBLE_EQ(j["auc"].get<double>(), roc_auc(p.labels(), p.scores()));
  for (const char* k : {"acc", "aupr", "auc"}) {
    const double v = j[k].get<double>();
    EXPECT_LE(j[std::string(k) + "_ci"][0].get<double>(), v);
    EXPECT_GE(j[std::string(k) + "_ci"][1].get<double>(), v);
  }
}

TEST(Report, PredictionCsvRoundTripIsExact) {
  Rng rng(10);
  PredictionSet p;
  for (int i = 0; i < 50; ++i) p.items.push_back({"img," + std::to_string(i), i % 3 == 0, rng.uniform()});
  std::stringstream ss;
  write_predictions(ss, p);
  const auto back = parse_predictions(ss);
  ASSERT_EQ(back.items.size(), p.items.size());
  for (std::size_t i = 0; i < p.items.size(); ++i) {
    EXPECT_EQ(back.items[i].image_id, p.items[i].image_id);
    EXPECT_EQ(back.items[i].label, p.items[i].label);
    EXPECT_EQ(back.items[i].score, p.items[i].score);
  }
  EXPECT_EQ(report_text(evaluate(back)), report_text(evaluate(p)));
}

TEST(Report, PredictionCsvValidation) {
  std::stringstream bad1("image_id,label,score\na,2,0.5\n");
  EXPECT_THROW(parse_predictions(bad1), ValidationError);
  std::stringstream bad2("image_id,label,score\na,1,1.5\n");
  EXPECT_THROW(parse_predictions(bad2), ValidationError);
  std::stringstream bad3("id,label,score\n");
  EXPECT_THROW(parse_predictions(bad3), ValidationError);
}

TEST(Report, CurveCsvHeaders) {
  std::stringstream a, b;
  write_roc_csv(a, roc_curve({0, 1}, {0.2, 0.8}));
  write_pr_csv(b, pr_curve({0, 1}, {0.2, 0.8}));
  std::string h;
  std::getline(a, h);
  EXPECT_EQ(h, "fpr,tpr,threshold");
  std::getline(b, h);
  EXPECT_EQ(h, "recall,precision,threshold");
}

TEST(EvaluateCheckpoint, DeterministicAndConsistent) {
  const auto dir = std::filesystem::temp_directory_path() / "cxrssl_eval_ckpt";
  std::filesystem::remove_all(dir);
  data::SynthOptions o;
  o.n_images = 24;
  o.image_size = 32;
  o.seed = 5;
  const auto ds = data::synth_generate(o);
  data::write_synth_dataset(dir, ds);
  const auto m = data::load_manifest(dir / "manifest.csv");

  train::TrainConfig cfg;
  cfg.epochs = 0;
  cfg.warmup_epochs = 0;
  auto c = train::initial_checkpoint(cfg, ModelConfig::vit_tiny_test(), ssl::SslConfig{});
  c.input_mean = m.meta.mean;
  c.input_std = m.meta.std;
  EXPECT_THROW(evaluate(c, m), MissingHead);
  c.student.set("head.weight", Mat<float>::Constant(64, 1, 0.05f));
  c.student.set("head.bias", Mat<float>::Zero(1, 1));
  const auto [p1, r1] = evaluate(c, m, EvalOptions{0.5, 100, 0, 0.05});
  const auto [p2, r2] = evaluate(c, m, EvalOptions{0.5, 100, 0, 0.05});
  ASSERT_EQ(p1.items.size(), 24u);
  for (std::size_t i = 0; i < p1.items.size(); ++i) EXPECT_EQ(p1.items[i].score, p2.items[i].score);
  EXPECT_EQ(report_text(r1), report_text(r2));
  EXPECT_EQ(r1.auc, roc_auc(p1.labels(), p1.scores()));
  EXPECT_EQ(p1.provenance["manifest_sha256"].get<std::string>().size(), 64u);

  auto unlabeled = m;
  unlabeled.records[0].label = data::Label::unlabeled;
  EXPECT_THROW(evaluate(c, unlabeled), UnlabeledData);
}
