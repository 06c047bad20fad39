#include "cxrssl/ssl/losses.hpp"
#include "cxrssl/ssl/mask.hpp"
#include "cxrssl/ssl/objectives.hpp"
#include "cxrssl/ssl/views.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace cxrssl;
using namespace cxrssl::ssl;

namespace {

Mat<double> random_mat(long r, long c, Rng& rng, double sd = 1.0) {
  Mat<double> m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * sd;
  return m;
}

ImageTensor<double> random_image(int h, int w, int c, Rng& rng) {
  ImageTensor<double> img(h, w, c);
  for (double& v : img.values) v = rng.normal();
  return img;
}

// Straight-line InfoNCE: loops, explicit exp/log, no shared helpers.
double info_nce_oracle(const Mat<double>& q, const Mat<double>& k, double tau) {
  const long b = q.rows(), d = q.cols();
  std::vector<std::vector<double>> qn(b, std::vector<double>(d)), kn(b, std::vector<double>(d));
  for (long i = 0; i < b; ++i) {
    double sq = 0, sk = 0;
    for (long j = 0; j < d; ++j) {
      sq += q(i, j) * q(i, j);
      sk += k(i, j) * k(i, j);
    }
    for (long j = 0; j < d; ++j) {
      qn[i][j] = q(i, j) / std::sqrt(sq);
      kn[i][j] = k(i, j) / std::sqrt(sk);
    }
  }
  double total = 0;
  for (long i = 0; i < b; ++i) {
    double denom = 0, pos = 0;
    for (long j = 0; j < b; ++j) {
      double s = 0;
      for (long c = 0; c < d; ++c) s += qn[i][c] * kn[j][c];
      denom += std::exp(s / tau);
      if (i == j) pos = s / tau;
    }
    total += -(pos - std::log(denom));
  }
  return total / b;
}

}  // namespace

// ---- views ----

TEST(Views, IdentityRecipeReturnsInput) {
  Rng rng(1);
  const auto img = random_image(12, 10, 1, rng);
  const auto views = make_views(img, ViewRecipe::identity(3), 42);
  ASSERT_EQ(views.size(), 3u);
  for (const auto& v : views) EXPECT_EQ(v, img);
}

TEST(Views, ForcedFlipMirrors) {
  Rng rng(2);
  const auto img = random_image(6, 7, 1, rng);
  ViewAugment a = ViewAugment::identity();
  a.flip_p = 1.0;
  const auto v = make_views(img, ViewRecipe{{a}}, 5)[0];
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) EXPECT_EQ(v.at(y, x, 0), img.at(y, 6 - x, 0));
}

TEST(Views, SameSeedIsBitwiseIdentical) {
  Rng rng(3);
  const auto img = random_image(32, 32, 1, rng);
  const auto r = ViewRecipe::standard(2);
  EXPECT_EQ(make_views(img, r, 99), make_views(img, r, 99));
  EXPECT_NE(make_views(img, r, 99)[0], make_views(img, r, 100)[0]);
}

TEST(Views, ViewsDifferFromEachOther) {
  Rng rng(4);
  const auto img = random_image(32, 32, 1, rng);
  const auto v = make_views(img, ViewRecipe::standard(2), 7);
  EXPECT_NE(v[0], v[1]);
  EXPECT_EQ(v[0].height, 32);
  EXPECT_EQ(v[1].width, 32);
}

TEST(Views, OutputSizeIsHonored) {
  Rng rng(5);
  const auto img = random_image(40, 30, 1, rng);
  ViewAugment a;
  a.out_height = 16;
  a.out_width = 8;
  const auto v = make_views(img, ViewRecipe{{a}}, 1)[0];
  EXPECT_EQ(v.height, 16);
  EXPECT_EQ(v.width, 8);
}

TEST(Views, InvalidRangesAreRejected) {
  Rng rng(6);
  const auto img = random_image(8, 8, 1, rng);
  ViewAugment a;
  a.crop_scale_min = 0.0;
  EXPECT_THROW(make_views(img, ViewRecipe{{a}}, 1), InvalidArgument);
  a = ViewAugment{};
  a.crop_scale_max = 1.5;
  EXPECT_THROW(make_views(img, ViewRecipe{{a}}, 1), InvalidArgument);
  a = ViewAugment{};
  a.flip_p = -0.1;
  EXPECT_THROW(make_views(img, ViewRecipe{{a}}, 1), InvalidArgument);
  EXPECT_THROW(ViewRecipe::standard(1).validate(2), InvalidArgument);
}

TEST(Views, BlurPreservesConstantImage) {
  ImageTensor<double> img(9, 9, 1);
  for (double& v : img.values) v = 0.25;
  const auto b = gaussian_blur(img, 1.3);
  for (double v : b.values) EXPECT_NEAR(v, 0.25, 1e-15);
}

// ---- masking ----

TEST(Mask, ExampleCounts) {
  const auto p = plan_mask(256, 0.75, 1);
  EXPECT_EQ(p.masked.size(), 192u);
  EXPECT_EQ(p.visible.size(), 64u);
  const auto z = plan_mask(10, 0.0, 1);
  EXPECT_TRUE(z.masked.empty());
  EXPECT_EQ(z.visible.size(), 10u);
}

TEST(Mask, DeterministicPerSeed) {
  EXPECT_EQ(plan_mask(64, 0.5, 3).masked, plan_mask(64, 0.5, 3).masked);
  EXPECT_NE(plan_mask(64, 0.5, 3).masked, plan_mask(64, 0.5, 4).masked);
}

TEST(Mask, PartitionProperty) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(300));
    const double ratio = rng.uniform(0.0, 0.95);
    if (masked_count(n, ratio) >= n) continue;
    const auto p = plan_mask(n, ratio, rng.next());
    EXPECT_EQ(static_cast<long>(p.masked.size()), std::lround(ratio * n));
    std::set<int> all(p.masked.begin(), p.masked.end());
    for (int v : p.visible) EXPECT_TRUE(all.insert(v).second) << "index in both sets";
    EXPECT_EQ(static_cast<int>(all.size()), n);
    EXPECT_EQ(*all.begin(), 0);
    EXPECT_EQ(*all.rbegin(), n - 1);
  }
}

TEST(Mask, IndicesAreUniform) {
  // 4000 plans of 16 tokens at ratio 0.5: each index is masked with
  // probability 1/2, sd of the count is sqrt(1000) ~ 32.
  std::vector<int> hits(16, 0);
  for (int s = 0; s < 4000; ++s)
    for (int i : plan_mask(16, 0.5, static_cast<std::uint64_t>(s)).masked) ++hits[static_cast<std::size_t>(i)];
  for (int h : hits) EXPECT_NEAR(h, 2000, 160);
}

TEST(Mask, RatioOutOfRange) {
  EXPECT_THROW(plan_mask(16, 1.0, 0), OutOfRange);
  EXPECT_THROW(plan_mask(16, -0.01, 0), OutOfRange);
}

// ---- reconstruction loss ----

TEST(MaeLoss, ZeroWhenPredictionsMatch) {
  Rng rng(11);
  const auto t = random_mat(8, 12, rng);
  const auto plan = plan_mask(8, 0.5, 1);
  EXPECT_EQ(mae_loss(t, t, plan, false), 0.0);
  EXPECT_NEAR(mae_loss(normalize_patches(t), t, plan, true), 0.0, 1e-24);
}

TEST(MaeLoss, VisiblePatchesDoNotMatter) {
  Rng rng(12);
  const auto t = random_mat(8, 12, rng);
  auto p = random_mat(8, 12, rng);
  const auto plan = plan_mask(8, 0.5, 2);
  const double base = mae_loss(p, t, plan, true);
  p.row(plan.visible[0]).array() += 100.0;
  EXPECT_EQ(mae_loss(p, t, plan, true), base);
}

TEST(MaeLoss, ConstantOffsetOnOneMaskedPatch) {
  Rng rng(13);
  const auto t = random_mat(4, 6, rng);
  MaskPlan plan{0.25, {2}, {0, 1, 3}};
  Mat<double> p = t;
  p.array() += 0.7;
  EXPECT_NEAR(mae_loss(p, t, plan, false), 0.49, 1e-15);
}

TEST(MaeLoss, EmptyMaskIsUndefined) {
  Rng rng(14);
  const auto t = random_mat(4, 6, rng);
  EXPECT_THROW(mae_loss(t, t, plan_mask(4, 0.0, 1), false), UndefinedLoss);
}

TEST(MaeLoss, NonNegativeAndZeroOnlyAtTarget) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = random_mat(6, 5, rng);
    const auto p = random_mat(6, 5, rng);
    const auto plan = plan_mask(6, 0.5, rng.next());
    EXPECT_GT(mae_loss(p, t, plan, trial % 2 == 0), 0.0);
  }
}

TEST(MaeLoss, TapeFormMatchesPerSampleMean) {
  Rng rng(16);
  const auto pred = random_mat(12, 5, rng);
  const auto tgt = random_mat(12, 5, rng);
  const auto plans = plan_masks(3, 4, 0.5, 9);
  double expect = 0;
  for (int b = 0; b < 3; ++b) {
    expect += mae_loss(Mat<double>(pred.middleRows(4 * b, 4)), Mat<double>(tgt.middleRows(4 * b, 4)),
                       plans[static_cast<std::size_t>(b)], true);
  }
  ag::Tape<double> t;
  const auto l = ag::mae_loss(t, t.leaf(pred, true), tgt, plans, true);
  EXPECT_NEAR(t.value(l)(0, 0), expect / 3, 1e-14);
}

// ---- contrastive loss ----

TEST(MocoLoss, SingleSampleIsZero) {
  Rng rng(20);
  const auto q = random_mat(1, 8, rng), k = random_mat(1, 8, rng);
  EXPECT_NEAR(moco_loss(q, k, 0.2), 0.0, 1e-15);
}

TEST(MocoLoss, IdenticalEmbeddingsGiveLogB) {
  Mat<double> e = Mat<double>::Ones(5, 3);
  EXPECT_NEAR(info_nce(e, e, 0.2), std::log(5.0), 1e-12);
  EXPECT_NEAR(moco_loss(e, e, 0.2), std::log(5.0), 1e-12);
}

TEST(MocoLoss, MatchesStraightLineFormula) {
  Rng rng(21);
  const auto q = random_mat(4, 8, rng), k = random_mat(4, 8, rng);
  EXPECT_NEAR(info_nce(q, k, 0.2), info_nce_oracle(q, k, 0.2), 1e-10);
  EXPECT_NEAR(moco_loss(q, k, 0.2), 0.5 * (info_nce_oracle(q, k, 0.2) + info_nce_oracle(k, q, 0.2)), 1e-10);
  const auto q2 = random_mat(4, 8, rng), k2 = random_mat(4, 8, rng);
  EXPECT_NEAR(moco_loss(q, q2, k, k2, 0.2),
              0.5 * (info_nce_oracle(q, k2, 0.2) + info_nce_oracle(q2, k, 0.2)), 1e-10);
}

TEST(MocoLoss, TapeFormMatches) {
  Rng rng(22);
  const auto q = random_mat(6, 4, rng), k = random_mat(6, 4, rng);
  ag::Tape<double> t;
  const auto l = ag::info_nce(t, t.leaf(q, true), t.constant(k), 0.3);
  EXPECT_NEAR(t.value(l)(0, 0), info_nce_oracle(q, k, 0.3), 1e-12);
}

TEST(MocoLoss, LogitShiftInvariance) {
  Rng rng(23);
  const auto logits = random_mat(5, 5, rng);
  const Mat<double> y = Mat<double>::Identity(5, 5);
  ag::Tape<double> t;
  const double a = t.value(ag::soft_cross_entropy(t, t.constant(logits), y))(0, 0);
  Mat<double> shifted = logits;
  shifted.array() += 37.5;
  const double b = t.value(ag::soft_cross_entropy(t, t.constant(shifted), y))(0, 0);
  EXPECT_NEAR(a, b, 1e-8);
}

TEST(MocoLoss, NonPositiveTemperature) {
  Mat<double> e = Mat<double>::Ones(2, 3);
  EXPECT_THROW(moco_loss(e, e, 0.0), InvalidArgument);
  EXPECT_THROW(moco_loss(e, e, -1.0), InvalidArgument);
}

// ---- distillation loss ----

TEST(DinoLoss, ClosedFormThreePrototypes) {
  Mat<double> t(1, 3), s = Mat<double>::Zero(1, 3), c = Mat<double>::Zero(1, 3);
  t << 1, 0, 0;
  const double z = std::exp(1.0) + 2.0;
  const double pt[3] = {std::exp(1.0) / z, 1 / z, 1 / z};
  double expect = 0;
  for (double p : pt) expect -= p * std::log(1.0 / 3.0);
  // two views: teacher view 0 vs student view 1 and vice versa
  EXPECT_NEAR(dino_loss<double>({s, s}, {t, t}, c, 1.0, 1.0), expect, 1e-15);
  EXPECT_NEAR(expect, std::log(3.0), 1e-15);
}

TEST(DinoLoss, EqualDistributionsGiveEntropy) {
  Rng rng(30);
  const auto t = random_mat(3, 6, rng);
  const Mat<double> c = Mat<double>::Zero(1, 6);
  // tau_t = 0.04, tau_s = 0.1: student logits t * (0.1 / 0.04) give p_s = p_t
  const Mat<double> s = t * (0.1 / 0.04);
  const Mat<double> pt = teacher_probs(t, c, 0.04);
  double h = 0;
  for (long i = 0; i < pt.size(); ++i) h -= pt.data()[i] * std::log(pt.data()[i]);
  h /= 3;
  EXPECT_NEAR(dino_loss<double>({s, s}, {t, t}, c, 0.1, 0.04), h, 1e-12);
}

TEST(DinoLoss, ShiftInvariance) {
  Rng rng(31);
  const auto t0 = random_mat(4, 7, rng), t1 = random_mat(4, 7, rng);
  const auto s0 = random_mat(4, 7, rng), s1 = random_mat(4, 7, rng);
  const auto c = random_mat(1, 7, rng);
  const double base = dino_loss<double>({s0, s1}, {t0, t1}, c, 0.1, 0.04);
  Mat<double> ts0 = t0, ts1 = t1, ss0 = s0, ss1 = s1;
  ts0.array() += 3.0;
  ts1.array() += 3.0;
  ss0.array() -= 11.0;
  ss1.array() -= 11.0;
  EXPECT_NEAR(dino_loss<double>({s0, s1}, {ts0, ts1}, c, 0.1, 0.04), base, 1e-8);
  EXPECT_NEAR(dino_loss<double>({ss0, ss1}, {t0, t1}, c, 0.1, 0.04), base, 1e-8);
  Mat<double> cu = c;
  cu.array() += 5.0;
  EXPECT_NEAR(dino_loss<double>({s0, s1}, {t0, t1}, cu, 0.1, 0.04), base, 1e-8);
}

TEST(DinoLoss, SameViewPairsAreExcluded) {
  Rng rng(32);
  const auto t0 = random_mat(2, 5, rng), t1 = random_mat(2, 5, rng);
  const auto s0 = random_mat(2, 5, rng), s1 = random_mat(2, 5, rng);
  const Mat<double> c = Mat<double>::Zero(1, 5);
  const double cross = 0.5 * (dino_loss<double>({s1, s1}, {t0, t0}, c, 0.1, 0.04) +
                              dino_loss<double>({s0, s0}, {t1, t1}, c, 0.1, 0.04));
  EXPECT_NEAR(dino_loss<double>({s0, s1}, {t0, t1}, c, 0.1, 0.04), cross, 1e-12);
}

TEST(DinoLoss, TapeFormMatches) {
  Rng rng(33);
  const auto t0 = random_mat(3, 5, rng), t1 = random_mat(3, 5, rng);
  const auto s0 = random_mat(3, 5, rng), s1 = random_mat(3, 5, rng);
  const auto c = random_mat(1, 5, rng, 0.1);
  ag::Tape<double> t;
  const auto l = ag::dino_loss(t, {t.leaf(s0, true), t.leaf(s1, true)},
                               {teacher_probs(t0, c, 0.04), teacher_probs(t1, c, 0.04)}, 0.1);
  EXPECT_NEAR(t.value(l)(0, 0), dino_loss<double>({s0, s1}, {t0, t1}, c, 0.1, 0.04), 1e-12);
}

TEST(DinoLoss, NonPositiveTemperature) {
  Mat<double> e = Mat<double>::Ones(2, 3), c = Mat<double>::Zero(1, 3);
  EXPECT_THROW(dino_loss<double>({e, e}, {e, e}, c, 0.0, 0.04), InvalidArgument);
  EXPECT_THROW(dino_loss<double>({e, e}, {e, e}, c, 0.1, -0.04), InvalidArgument);
  DistillState<double> st;
  st.center = c;
  st.tau_t = 0;
  EXPECT_THROW(dino_loss<double>({e, e}, {e, e}, st), InvalidArgument);
}

// ---- EMA and centering ----

TEST(Ema, Examples) {
  ParameterSet<double> s, t;
  s.set("w", Mat<double>::Constant(1, 1, 0.0));
  t.set("w", Mat<double>::Constant(1, 1, 1.0));
  EXPECT_NEAR(ema_update(s, t, 0.9).at("w")(0, 0), 0.9, 1e-15);
  EXPECT_EQ(ema_update(s, t, 1.0), t);
  EXPECT_EQ(ema_update(s, t, 0.0), s);
}

TEST(Ema, IsAContractionTowardStudent) {
  Rng rng(40);
  ParameterSet<double> s, t;
  s.set("a", random_mat(3, 4, rng));
  s.set("b", random_mat(1, 4, rng));
  t.set("a", random_mat(3, 4, rng));
  t.set("b", random_mat(1, 4, rng));
  for (double m : {0.0, 0.3, 0.9, 0.999, 1.0}) {
    const auto u = ema_update(s, t, m);
    for (const auto& [k, v] : u) {
      const Mat<double> lhs = (v - s.at(k)).cwiseAbs();
      const Mat<double> rhs = m * (t.at(k) - s.at(k)).cwiseAbs();
      EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-14);
    }
  }
}

TEST(Ema, MismatchIsRejected) {
  ParameterSet<double> s, t;
  s.set("a", Mat<double>::Zero(2, 2));
  t.set("b", Mat<double>::Zero(2, 2));
  EXPECT_THROW(ema_update(s, t, 0.5), ShapeMismatch);
  t = ParameterSet<double>{};
  t.set("a", Mat<double>::Zero(2, 3));
  EXPECT_THROW(ema_update(s, t, 0.5), ShapeMismatch);
  EXPECT_THROW(ema_update(s, s, 1.5), InvalidArgument);
}

TEST(Center, Examples) {
  Rng rng(41);
  const auto c = random_mat(1, 4, rng);
  const auto out = random_mat(5, 4, rng);
  EXPECT_EQ(center_update(c, out, 1.0), c);
  const auto v = random_mat(1, 4, rng);
  EXPECT_EQ(center_update(c, v, 0.0), v);
  const Mat<double> z = Mat<double>::Zero(1, 4);
  const Mat<double> expect = 0.1 * out.colwise().mean();
  EXPECT_LT((center_update(z, out, 0.9) - expect).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(center_update(c, Mat<double>(0, 4), 0.9), InvalidArgument);
}

TEST(Momentum, CosineRamp) {
  EXPECT_DOUBLE_EQ(cosine_momentum(0.99, 0.0), 0.99);
  EXPECT_DOUBLE_EQ(cosine_momentum(0.99, 1.0), 1.0);
  EXPECT_NEAR(cosine_momentum(0.99, 0.5), 0.995, 1e-15);
}

// ---- objectives ----

namespace {

ModelConfig micro_model() {
  ModelConfig m;
  m.image_height = m.image_width = 8;
  m.patch_height = m.patch_width = 4;
  m.dim = 8;
  m.depth = 1;
  m.heads = 2;
  return m;
}

SslConfig micro_ssl() {
  SslConfig c;
  c.decoder_depth = 1;
  c.decoder_dim = 4;
  c.head_hidden = 8;
  c.head_out = 6;
  c.dino_prototypes = 6;
  c.dino_bottleneck = 4;
  return c;
}

struct Fixture {
  std::vector<ImageTensor<double>> images;
  Batch<double> batch;
};

Fixture micro_batch(int n, std::uint64_t seed) {
  Fixture f;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) f.images.push_back(random_image(8, 8, 1, rng));
  for (const auto& im : f.images) f.batch.images.push_back(&im);
  for (int i = 0; i < n; ++i) f.batch.labels.push_back(i % 2);
  return f;
}

}  // namespace

class ObjectiveGradients : public ::testing::TestWithParam<ObjectiveKind> {};

TEST_P(ObjectiveGradients, MatchFiniteDifferences) {
  const ModelConfig m = micro_model();
  auto obj = make_objective<double>(GetParam(), m, micro_ssl());
  Rng rng(50);
  ParameterSet<double> p = init_backbone<double>(m, rng, GetParam() == ObjectiveKind::supervised);
  obj->init(p, rng);
  for (auto& [name, v] : p) v += random_mat(v.rows(), v.cols(), rng, 0.2);
  // Teacher differs from the student.
  obj->after_step(p, 0.0);
  const Fixture f = micro_batch(3, 51);
  ParameterSet<double> g;
  const double l = obj->loss(p, f.batch, 77, &g);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_EQ(obj->loss(p, f.batch, 77, nullptr), l);
  const auto r = gradcheck::check([&](const ParameterSet<double>& q) { return obj->loss(q, f.batch, 77, nullptr); },
                                  p, g);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                   << " numeric " << r.worst_numeric;
  EXPECT_EQ(g.size(), p.size()) << "every parameter should receive a gradient";
}

INSTANTIATE_TEST_SUITE_P(All, ObjectiveGradients,
                         ::testing::Values(ObjectiveKind::mae, ObjectiveKind::moco_v3, ObjectiveKind::dino,
                                           ObjectiveKind::supervised),
                         [](const auto& info) { return to_string(info.param); });

TEST(Objectives, TeacherStateRoundTrips) {
  const ModelConfig m = micro_model();
  for (auto kind : {ObjectiveKind::moco_v3, ObjectiveKind::dino}) {
    auto a = make_objective<double>(kind, m, micro_ssl());
    Rng rng(60);
    ParameterSet<double> p = init_backbone<double>(m, rng, false);
    a->init(p, rng);
    const Fixture f = micro_batch(2, 61);
    a->loss(p, f.batch, 1, nullptr);
    for (auto& [name, v] : p) v.array() += 0.5;
    a->after_step(p, 0.3);
    auto b = make_objective<double>(kind, m, micro_ssl());
    Rng rng2(60);
    ParameterSet<double> p2 = init_backbone<double>(m, rng2, false);
    b->init(p2, rng2);
    b->load_state(a->state());
    EXPECT_EQ(a->state(), b->state());
    EXPECT_EQ(a->loss(p, f.batch, 5, nullptr), b->loss(p, f.batch, 5, nullptr));
  }
}

TEST(Objectives, TeacherFollowsStudentByMomentum) {
  const ModelConfig m = micro_model();
  MocoObjective<double> obj(m, micro_ssl());
  Rng rng(70);
  ParameterSet<double> p = init_backbone<double>(m, rng, false);
  obj.init(p, rng);
  const auto before = obj.teacher();
  ParameterSet<double> moved = p;
  for (auto& [name, v] : moved) v.array() += 1.0;
  obj.after_step(moved, 0.0);
  EXPECT_DOUBLE_EQ(obj.momentum(), 0.99);
  const auto& w0 = before.at("blocks.0.attn.qkv.weight");
  const auto& w1 = obj.teacher().at("blocks.0.attn.qkv.weight");
  EXPECT_LT(((w1 - w0).array() - 0.01).abs().maxCoeff(), 1e-12);
  EXPECT_FALSE(obj.teacher().contains("moco.pred.0.weight"));
  EXPECT_TRUE(obj.teacher().contains("moco.proj.0.weight"));
}

TEST(Objectives, DinoCenterTracksTeacherOutputs) {
  const ModelConfig m = micro_model();
  DinoObjective<double> obj(m, micro_ssl());
  Rng rng(80);
  ParameterSet<double> p = init_backbone<double>(m, rng, false);
  obj.init(p, rng);
  EXPECT_EQ(obj.center().cols(), 6);
  EXPECT_EQ(obj.center().cwiseAbs().maxCoeff(), 0.0);
  const Fixture f = micro_batch(4, 81);
  obj.loss(p, f.batch, 3, nullptr);
  obj.after_step(p, 0.0);
  EXPECT_GT(obj.center().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Objectives, SupervisedNeedsLabels) {
  const ModelConfig m = micro_model();
  SupervisedObjective<double> obj(m);
  Rng rng(90);
  ParameterSet<double> p = init_backbone<double>(m, rng, true);
  Fixture f = micro_batch(2, 91);
  f.batch.labels = {1, -1};
  EXPECT_THROW(obj.loss(p, f.batch, 1, nullptr), UnlabeledData);
  f.batch.labels.clear();
  EXPECT_THROW(obj.loss(p, f.batch, 1, nullptr), UnlabeledData);
}

TEST(Objectives, MaeWorksWithoutSpecialToken) {
  ModelConfig m = micro_model();
  m.token_mode = TokenMode::none;
  auto obj = make_objective<double>(ObjectiveKind::mae, m, micro_ssl());
  Rng rng(95);
  ParameterSet<double> p = init_backbone<double>(m, rng, false);
  obj->init(p, rng);
  const Fixture f = micro_batch(2, 96);
  ParameterSet<double> g;
  const double l = obj->loss(p, f.batch, 4, &g);
  EXPECT_TRUE(std::isfinite(l));
  const auto r = gradcheck::check([&](const ParameterSet<double>& q) { return obj->loss(q, f.batch, 4, nullptr); },
                                  p, g);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}
