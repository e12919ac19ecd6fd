#pragma once

// Teacher transform (marginal ReLU), partial L2 distance and the distillation
// loss assembled from a reducer and a matching.

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgd/matching.hpp"
#include "mgd/reduction.hpp"
#include "mgd/tensor.hpp"

namespace mgd {

// Margin used for channels that never go negative; keeps every margin < 0.
inline constexpr double kMarginFloor = -1e-6;

struct MarginVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t c) const noexcept { return values[c]; }
};

// Streaming per-channel mean of negative activations.
class MarginEstimator {
 public:
  void add(const FeatureMap& teacher) {
    if (sums_.empty()) {
      sums_.assign(teacher.rows(), 0.0);
      counts_.assign(teacher.rows(), 0);
    } else if (teacher.rows() != sums_.size()) {
      throw DimensionError("MarginEstimator: inconsistent channel count");
    }
    for (std::size_t c = 0; c < teacher.rows(); ++c) {
      for (double v : teacher.row(c)) {
        if (v < 0.0) {
          sums_[c] += v;
          ++counts_[c];
        }
      }
    }
    ++samples_;
  }

  std::size_t samples() const noexcept { return samples_; }

  MarginVector finish() const {
    if (samples_ == 0) throw ValueError("estimate_margins: no samples");
    MarginVector m;
    m.values.resize(sums_.size());
    for (std::size_t c = 0; c < sums_.size(); ++c) {
      m.values[c] = counts_[c] == 0 ? kMarginFloor
                                    : std::min(sums_[c] / static_cast<double>(counts_[c]),
                                               kMarginFloor);
    }
    return m;
  }

 private:
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
  std::size_t samples_ = 0;
};

inline MarginVector estimate_margins(std::span<const FeatureMap> teacher_features) {
  MarginEstimator est;
  for (const auto& t : teacher_features) est.add(t);
  return est.finish();
}

// Margins for a reduced map: reduced channel i takes the smallest margin
// among its owned teacher channels.
inline MarginVector reduce_margins(const MarginVector& teacher_margins, const Matching& m) {
  if (teacher_margins.size() != m.teacher_channels()) {
    throw DimensionError("reduce_margins: margin count does not match matching");
  }
  MarginVector out;
  out.values.assign(m.student_channels, 0.0);
  std::vector<char> seen(m.student_channels, 0);
  for (std::size_t j = 0; j < m.owner.size(); ++j) {
    const std::size_t i = m.owner[j];
    if (i == kShaved) continue;
    out.values[i] = seen[i] ? std::min(out.values[i], teacher_margins[j]) : teacher_margins[j];
    seen[i] = 1;
  }
  return out;
}

inline FeatureMap marginal_relu(const FeatureMap& x, const MarginVector& m) {
  if (x.rows() != m.size()) {
    throw DimensionError("marginal_relu: " + std::to_string(x.rows()) + " channels vs " +
                         std::to_string(m.size()) + " margins");
  }
  FeatureMap out = x;
  for (std::size_t c = 0; c < out.rows(); ++c) {
    for (double& v : out.row(c)) v = std::max(v, m[c]);
  }
  return out;
}

namespace detail {

// The partial L2 ignores entries where the student is already at or below a
// non-positive target.
constexpr bool partial_l2_inactive(double t, double s) noexcept { return s <= t && t <= 0.0; }

}  // namespace detail

inline double partial_l2(const FeatureMap& target, const FeatureMap& student) {
  require_same_shape(target, student, "partial_l2");
  const auto t = target.values();
  const auto s = student.values();
  double sum = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (detail::partial_l2_inactive(t[k], s[k])) continue;
    const double d = t[k] - s[k];
    sum += d * d;
  }
  return sum;
}

// d partial_l2 / d student; the target receives no gradient.
inline FeatureMap partial_l2_grad(const FeatureMap& target, const FeatureMap& student) {
  require_same_shape(target, student, "partial_l2_grad");
  FeatureMap g(student.rows(), student.cols());
  const auto t = target.values();
  const auto s = student.values();
  auto out = g.values();
  for (std::size_t k = 0; k < t.size(); ++k) {
    out[k] = detail::partial_l2_inactive(t[k], s[k]) ? 0.0 : 2.0 * (s[k] - t[k]);
  }
  return g;
}

// Builds the transformed, reduced teacher target sigma_T(rho(T, M)).
inline FeatureMap distill_target(const FeatureMap& teacher, const Matching& m, ReducerKind kind,
                                 const MarginVector& teacher_margins, const CounterRng& rng) {
  return marginal_relu(reduce(kind, teacher, m, rng), reduce_margins(teacher_margins, m));
}

struct DistillTerm {
  double loss = 0.0;
  FeatureMap grad;  // d loss / d student
};

// Partial L2 between the transformed reduced teacher and the raw student map,
// divided by C_S * N.
inline DistillTerm distill_term(const FeatureMap& target, const FeatureMap& student) {
  require_same_shape(target, student, "distill_loss");
  const double scale = 1.0 / static_cast<double>(student.size());
  DistillTerm out{partial_l2(target, student) * scale, partial_l2_grad(target, student)};
  for (double& g : out.grad.values()) g *= scale;
  return out;
}

inline double distill_loss(const FeatureMap& teacher, const FeatureMap& student,
                           const Matching& m, ReducerKind kind,
                           const MarginVector& teacher_margins, const CounterRng& rng) {
  if (student.rows() != m.student_channels) {
    throw DimensionError("distill_loss: student channel count does not match matching");
  }
  const FeatureMap target = distill_target(teacher, m, kind, teacher_margins, rng);
  return partial_l2(target, student) / static_cast<double>(student.size());
}

// Overload for the SM reducer.
inline double distill_loss(const FeatureMap& teacher, const FeatureMap& student,
                           const SparseMatching& p, const MarginVector& teacher_margins) {
  return distill_loss(teacher, student, p.as_matching(), ReducerKind::SM, teacher_margins,
                      CounterRng(0));
}

struct LossBreakdown {
  double task_loss = 0.0;
  double distill_loss = 0.0;
  double gamma = 0.0;
  double total = 0.0;

  static LossBreakdown compose(double task, double distill, double gamma) {
    if (!(gamma >= 0.0)) throw ValueError("LossBreakdown: gamma must be >= 0");
    return {task, distill, gamma, task + gamma * distill};
  }
};

}  // namespace mgd
