#pragma once

#include "cxrssl/autograd/ops.hpp"
#include "cxrssl/backbone/params.hpp"
#include "cxrssl/core/error.hpp"
#include "cxrssl/core/tensor.hpp"
#include "cxrssl/ssl/mask.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace cxrssl::ssl {

// Per-row standardization (x - mean) / sqrt(var + eps), population variance.
template <typename T>
Mat<T> normalize_patches(const Mat<T>& x, T eps = T(1e-6)) {
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T m = x.row(i).mean();
    const T var = (x.row(i).array() - m).square().mean();
    out.row(i) = (x.row(i).array() - m) / std::sqrt(var + eps);
  }
  return out;
}

// Mean over masked patches of the per-patch mean squared error. Rows of
// `pred` and `target` are the n patches of one image.
template <typename T>
T mae_loss(const Mat<T>& pred, const Mat<T>& target, const MaskPlan& plan, bool normalize_targets) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw ShapeMismatch("mae_loss: prediction " + shape_str(pred) + " vs target " + shape_str(target));
  }
  if (plan.token_count() != pred.rows()) {
    throw ShapeMismatch("mae_loss: mask covers " + std::to_string(plan.token_count()) + " tokens, predictions have " +
                        std::to_string(pred.rows()));
  }
  if (plan.masked.empty()) throw UndefinedLoss("mae_loss: no masked patches");
  const Mat<T> tgt = normalize_targets ? normalize_patches(target) : target;
  T acc = 0;
  for (int i : plan.masked) acc += (pred.row(i) - tgt.row(i)).squaredNorm() / static_cast<T>(pred.cols());
  return acc / static_cast<T>(plan.masked.size());
}

// Cross-entropy of each query row against the keys, positive on the
// diagonal, averaged over rows. Rows are L2-normalized first.
template <typename T>
T info_nce(const Mat<T>& q, const Mat<T>& k, T tau) {
  if (!(tau > 0)) throw InvalidArgument("contrastive temperature must be > 0");
  if (q.rows() != k.rows() || q.cols() != k.cols() || q.rows() == 0) {
    throw ShapeMismatch("info_nce: queries " + shape_str(q) + " vs keys " + shape_str(k));
  }
  auto normed = [](const Mat<T>& x) {
    Mat<T> y = x;
    for (Eigen::Index i = 0; i < y.rows(); ++i) y.row(i) /= std::max(y.row(i).norm(), T(1e-12));
    return y;
  };
  const Mat<T> logits = (normed(q) * normed(k).transpose()) / tau;
  const Mat<T> lp = ag::log_softmax_rows_value(logits);
  return -lp.diagonal().mean();
}

// Symmetrized form for one query/key pair of views.
template <typename T>
T moco_loss(const Mat<T>& q, const Mat<T>& k, T tau) {
  return T(0.5) * (info_nce(q, k, tau) + info_nce(k, q, tau));
}

// Two-view form: queries of each view against keys of the other.
template <typename T>
T moco_loss(const Mat<T>& q1, const Mat<T>& q2, const Mat<T>& k1, const Mat<T>& k2, T tau) {
  return T(0.5) * (info_nce(q1, k2, tau) + info_nce(q2, k1, tau));
}

template <typename T>
struct DistillState {
  ParameterSet<T> teacher;
  Mat<T> center;  // 1 x K
  T tau_t = T(0.04);
  T tau_s = T(0.1);
  T m_c = T(0.9);
  T m_t = T(0.996);

  void validate() const {
    if (!(tau_t > 0) || !(tau_s > 0)) throw InvalidArgument("distillation temperatures must be > 0");
    if (!(m_c >= 0 && m_c <= 1) || !(m_t >= 0 && m_t <= 1)) throw InvalidArgument("momentum outside [0,1]");
    if (!all_finite(center)) throw NonFiniteError("distillation center is not finite");
  }
};

template <typename T>
struct ContrastState {
  ParameterSet<T> momentum_encoder;
  T tau = T(0.2);
  T m_k = T(0.99);

  void validate() const {
    if (!(tau > 0)) throw InvalidArgument("contrastive temperature must be > 0");
    if (!(m_k >= 0 && m_k <= 1)) throw InvalidArgument("momentum outside [0,1]");
  }
};

// Teacher distribution softmax((t - c) / tau_t), row-wise.
template <typename T>
Mat<T> teacher_probs(const Mat<T>& teacher_logits, const Mat<T>& center, T tau_t) {
  if (center.rows() != 1 || center.cols() != teacher_logits.cols()) {
    throw ShapeMismatch("teacher_probs: center " + shape_str(center) + " for logits " + shape_str(teacher_logits));
  }
  Mat<T> z = teacher_logits;
  z.rowwise() -= center.row(0);
  return ag::softmax_rows_value(Mat<T>(z / tau_t));
}

// Cross-entropy H(p_t, p_s) averaged over samples and over every
// (teacher view, student view) pair with different views. Each entry of
// `student` / `teacher` is the B x K logits of one view.
template <typename T>
T dino_loss(const std::vector<Mat<T>>& student, const std::vector<Mat<T>>& teacher, const Mat<T>& center,
            T tau_s, T tau_t) {
  if (!(tau_s > 0) || !(tau_t > 0)) throw InvalidArgument("distillation temperatures must be > 0");
  if (student.empty() || teacher.empty()) throw InvalidArgument("dino_loss: no views");
  T total = 0;
  int pairs = 0;
  for (std::size_t ti = 0; ti < teacher.size(); ++ti) {
    const Mat<T> pt = teacher_probs(teacher[ti], center, tau_t);
    for (std::size_t si = 0; si < student.size(); ++si) {
      if (si == ti) continue;
      if (student[si].rows() != pt.rows() || student[si].cols() != pt.cols()) {
        throw ShapeMismatch("dino_loss: student " + shape_str(student[si]) + " vs teacher " + shape_str(pt));
      }
      const Mat<T> ls = ag::log_softmax_rows_value(Mat<T>(student[si] / tau_s));
      total += -(pt.array() * ls.array()).sum() / static_cast<T>(pt.rows());
      ++pairs;
    }
  }
  if (pairs == 0) throw InvalidArgument("dino_loss: needs at least two views");
  return total / static_cast<T>(pairs);
}

template <typename T>
T dino_loss(const std::vector<Mat<T>>& student, const std::vector<Mat<T>>& teacher, const DistillState<T>& s) {
  s.validate();
  return dino_loss(student, teacher, s.center, s.tau_s, s.tau_t);
}

// teacher' = m * teacher + (1 - m) * student for every parameter.
template <typename T>
ParameterSet<T> ema_update(const ParameterSet<T>& student, const ParameterSet<T>& teacher, T m) {
  if (!(m >= 0 && m <= 1)) throw InvalidArgument("EMA momentum outside [0,1]");
  if (student.size() != teacher.size()) {
    throw ShapeMismatch("ema_update: student has " + std::to_string(student.size()) + " parameters, teacher " +
                        std::to_string(teacher.size()));
  }
  ParameterSet<T> out;
  for (const auto& [name, tv] : teacher) {
    if (!student.contains(name)) throw ShapeMismatch("ema_update: student lacks '" + name + "'");
    const Mat<T>& sv = student.at(name);
    if (sv.rows() != tv.rows() || sv.cols() != tv.cols()) {
      throw ShapeMismatch("ema_update: '" + name + "' is " + shape_str(sv) + " vs " + shape_str(tv));
    }
    out.set(name, m * tv + (T(1) - m) * sv);
  }
  return out;
}

// c' = m_c * c + (1 - m_c) * mean over rows of `outputs`.
template <typename T>
Mat<T> center_update(const Mat<T>& c, const Mat<T>& outputs, T m_c) {
  if (!(m_c >= 0 && m_c <= 1)) throw InvalidArgument("center momentum outside [0,1]");
  if (outputs.rows() == 0) throw InvalidArgument("center_update: empty batch");
  if (c.rows() != 1 || c.cols() != outputs.cols()) {
    throw ShapeMismatch("center_update: center " + shape_str(c) + " vs outputs " + shape_str(outputs));
  }
  return m_c * c + (T(1) - m_c) * outputs.colwise().mean();
}

}  // namespace cxrssl::ssl

namespace cxrssl::ag {

// Batched masked reconstruction loss. `pred` is (B*n) x P, `target` the
// matching constant patches, one plan per sample.
template <typename T>
Var mae_loss(Tape<T>& t, Var pred, const Mat<T>& target, const std::vector<ssl::MaskPlan>& plans,
             bool normalize_targets) {
  const Mat<T>& pv = t.value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols()) {
    throw ShapeMismatch("mae_loss: prediction " + shape_str(pv) + " vs target " + shape_str(target));
  }
  if (plans.empty() || pv.rows() % static_cast<Eigen::Index>(plans.size()) != 0) {
    throw ShapeMismatch("mae_loss: " + std::to_string(plans.size()) + " plans for " + shape_str(pv));
  }
  const Eigen::Index n = pv.rows() / static_cast<Eigen::Index>(plans.size());
  std::vector<Eigen::Index> rows;
  for (std::size_t b = 0; b < plans.size(); ++b) {
    if (plans[b].token_count() != n) throw ShapeMismatch("mae_loss: mask plan does not cover the patches");
    for (int i : plans[b].masked) rows.push_back(static_cast<Eigen::Index>(b) * n + i);
  }
  if (rows.empty()) throw UndefinedLoss("mae_loss: no masked patches");
  Mat<T> tgt(static_cast<Eigen::Index>(rows.size()), target.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) tgt.row(static_cast<Eigen::Index>(r)) = target.row(rows[r]);
  if (normalize_targets) tgt = ssl::normalize_patches(tgt);
  Var diff = sub(t, gather_rows(t, pred, std::move(rows)), t.constant(std::move(tgt)));
  return mean(t, square(t, diff));
}

// InfoNCE of queries against constant keys; both are L2-normalized here.
template <typename T>
Var info_nce(Tape<T>& t, Var q, Var k, T tau) {
  if (!(tau > 0)) throw InvalidArgument("contrastive temperature must be > 0");
  const Eigen::Index b = t.value(q).rows();
  if (t.value(k).rows() != b || t.value(k).cols() != t.value(q).cols()) {
    throw ShapeMismatch("info_nce: queries " + shape_str(t.value(q)) + " vs keys " + shape_str(t.value(k)));
  }
  Var logits = scale(t, matmul_nt(t, l2_normalize_rows(t, q), l2_normalize_rows(t, k)), T(1) / tau);
  return soft_cross_entropy(t, logits, Mat<T>(Mat<T>::Identity(b, b)));
}

// Student-side DINO loss against precomputed teacher distributions.
template <typename T>
Var dino_loss(Tape<T>& t, const std::vector<Var>& student, const std::vector<Mat<T>>& teacher_probs, T tau_s) {
  if (!(tau_s > 0)) throw InvalidArgument("distillation temperatures must be > 0");
  Var total{};
  int pairs = 0;
  for (std::size_t ti = 0; ti < teacher_probs.size(); ++ti) {
    for (std::size_t si = 0; si < student.size(); ++si) {
      if (si == ti) continue;
      Var ce = soft_cross_entropy(t, scale(t, student[si], T(1) / tau_s), teacher_probs[ti]);
      total = pairs == 0 ? ce : add(t, total, ce);
      ++pairs;
    }
  }
  if (pairs == 0) throw InvalidArgument("dino_loss: needs at least two views");
  return scale(t, total, T(1) / static_cast<T>(pairs));
}

}  // namespace cxrssl::ag
