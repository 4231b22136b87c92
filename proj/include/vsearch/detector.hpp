#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "vsearch/feature_stack.hpp"

namespace vsearch {

template <typename Scalar>
using AttentionMapT = RowMatrix<Scalar>;

using AttentionMap = AttentionMapT<float>;

/// Dot product of the template with the tapped feature vector at every
/// grid cell. No normalization, no rectification.
template <typename Scalar>
AttentionMapT<Scalar> attention_map(const TargetTemplateT<Scalar>& tmpl,
                                    const FeatureStackT<Scalar>& stack, MapTap tap) {
  if (tmpl.values.size() != stack.channels)
    throw InputError(fmt::format("template has {} channels, feature stack has {}",
                                 tmpl.values.size(), stack.channels));
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> flat = tmpl.values.transpose() * stack.tap(tap);
  return Eigen::Map<const AttentionMapT<Scalar>>(flat.data(), stack.height, stack.width);
}

/// Decision statistic of the max rule.
template <typename Derived>
typename Derived::Scalar map_max(const Eigen::MatrixBase<Derived>& map) {
  if (map.size() == 0) throw InputError("map_max of an empty attention map");
  return map.maxCoeff();
}

struct Criterion {
  double threshold = 0.0;
  double calibrated_pc = 0.5;
  std::size_t n_present = 0;
  std::size_t n_absent = 0;
};

/// Balanced accuracy of the rule "present iff statistic > threshold".
inline double proportion_correct(std::span<const double> present, std::span<const double> absent,
                                 double threshold) {
  if (present.empty() || absent.empty())
    throw InputError("proportion_correct needs non-empty present and absent lists");
  const auto hits = std::count_if(present.begin(), present.end(), [&](double v) { return v > threshold; });
  const auto rejections =
      std::count_if(absent.begin(), absent.end(), [&](double v) { return v <= threshold; });
  return (static_cast<double>(hits) / static_cast<double>(present.size()) +
          static_cast<double>(rejections) / static_cast<double>(absent.size())) /
         2.0;
}

/// Threshold maximizing balanced accuracy on the given statistics.
///
/// Candidates are the midpoints of adjacent values in the sorted union plus
/// one point below the minimum and one above the maximum; the offset of the
/// outer points scales with the data so the chosen threshold is covariant
/// under positive rescaling. Ties go to the smallest candidate.
inline Criterion calibrate_criterion(std::span<const double> present, std::span<const double> absent) {
  if (present.empty() || absent.empty())
    throw InputError("calibrate_criterion needs non-empty present and absent lists");

  struct Sample {
    double value;
    bool present;
  };
  std::vector<Sample> all;
  all.reserve(present.size() + absent.size());
  for (double v : present) all.push_back({v, true});
  for (double v : absent) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Sample& a, const Sample& b) { return a.value < b.value; });

  const double lo = all.front().value;
  const double hi = all.back().value;
  double pad = (hi - lo) + std::abs(lo) + std::abs(hi);
  if (pad == 0.0) pad = 1.0;

  const double np = static_cast<double>(present.size());
  const double na = static_cast<double>(absent.size());
  // Below the minimum every trial is called present.
  std::size_t present_at_or_below = 0;
  std::size_t absent_at_or_below = 0;
  auto pc_now = [&] {
    return ((np - static_cast<double>(present_at_or_below)) / np +
            static_cast<double>(absent_at_or_below) / na) /
           2.0;
  };

  Criterion best{lo - pad, pc_now(), present.size(), absent.size()};
  // After consuming a run of equal values v, every threshold in
  // [v, next value) classifies identically. The smallest candidate in that
  // interval is v itself when v repeats (midpoint of equal neighbours),
  // otherwise the midpoint to the next value.
  for (std::size_t i = 0; i < all.size();) {
    const double v = all[i].value;
    std::size_t j = i;
    for (; j < all.size() && all[j].value == v; ++j)
      (all[j].present ? present_at_or_below : absent_at_or_below)++;
    double candidate;
    if (j - i >= 2)
      candidate = v;
    else if (j < all.size())
      candidate = v + (all[j].value - v) / 2.0;
    else
      candidate = hi + pad;
    const double pc = pc_now();
    if (pc > best.calibrated_pc) {
      best.threshold = candidate;
      best.calibrated_pc = pc;
    }
    i = j;
  }
  return best;
}

struct GaussianEstimate {
  double dprime = 0.0;
  double pc = 0.5;
};

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// d' against the pooled variance (var_p + var_a) / 2 using
/// unbiased sample variances, and pc = Phi(d' / 2). Reported only as a
/// comparison column.
inline GaussianEstimate gaussian_pc_estimate(std::span<const double> present,
                                             std::span<const double> absent) {
  if (present.size() < 2 || absent.size() < 2)
    throw InputError("gaussian_pc_estimate needs at least two values per class");
  auto moments = [](std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss / static_cast<double>(v.size() - 1)};
  };
  const auto [mp, vp] = moments(present);
  const auto [ma, va] = moments(absent);
  const double pooled = (vp + va) / 2.0;
  if (!(pooled > 0.0))
    throw DegenerateDistributionError("gaussian_pc_estimate: pooled variance is zero");
  GaussianEstimate g;
  g.dprime = (mp - ma) / std::sqrt(pooled);
  g.pc = normal_cdf(g.dprime / 2.0);
  return g;
}

}  // namespace vsearch
