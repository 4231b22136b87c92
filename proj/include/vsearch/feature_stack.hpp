#pragma once

#include <string>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "vsearch/error.hpp"

namespace vsearch {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class MapTap { pre, post };
enum class CenterMode { single_cell, center_2x2_mean };

inline std::string to_string(MapTap t) { return t == MapTap::pre ? "pre" : "post"; }
inline std::string to_string(CenterMode m) {
  return m == CenterMode::single_cell ? "single_cell" : "center_2x2_mean";
}
inline MapTap parse_map_tap(std::string_view s) {
  if (s == "pre") return MapTap::pre;
  if (s == "post") return MapTap::post;
  throw ConfigError(fmt::format("unknown map tap '{}' (expected pre|post)", s));
}
inline CenterMode parse_center_mode(std::string_view s) {
  if (s == "single_cell") return CenterMode::single_cell;
  if (s == "center_2x2_mean") return CenterMode::center_2x2_mean;
  throw ConfigError(fmt::format("unknown center mode '{}' (expected single_cell|center_2x2_mean)", s));
}

/// Pre- and post-nonlinearity activations of one image.
///
/// Both taps are stored as C x (H*W) row-major matrices; column y*W + x
/// holds the feature vector at grid cell (y, x).
template <typename Scalar>
struct FeatureStackT {
  int channels = 0;
  int height = 0;
  int width = 0;
  RowMatrix<Scalar> pre;
  RowMatrix<Scalar> post;

  FeatureStackT() = default;
  FeatureStackT(int c, int h, int w)
      : channels(c), height(h), width(w), pre(RowMatrix<Scalar>::Zero(c, h * w)),
        post(RowMatrix<Scalar>::Zero(c, h * w)) {}

  const RowMatrix<Scalar>& tap(MapTap t) const { return t == MapTap::pre ? pre : post; }

  Scalar& pre_at(int c, int y, int x) { return pre(c, y * width + x); }
  Scalar& post_at(int c, int y, int x) { return post(c, y * width + x); }
  Scalar pre_at(int c, int y, int x) const { return pre(c, y * width + x); }
  Scalar post_at(int c, int y, int x) const { return post(c, y * width + x); }

  bool all_finite() const { return pre.allFinite() && post.allFinite(); }
};

using FeatureStack = FeatureStackT<float>;

template <typename Scalar>
struct TargetTemplateT {
  Vector<Scalar> values;
  CenterMode center_mode = CenterMode::center_2x2_mean;
  std::string backend_id;
};

using TargetTemplate = TargetTemplateT<float>;

/// Reads the target vector from the center of the post-nonlinearity tap.
/// single_cell uses cell (H/2, W/2); center_2x2_mean averages cells
/// (H/2-1 .. H/2, W/2-1 .. W/2), the exact center of an even grid.
template <typename Scalar>
TargetTemplateT<Scalar> target_template(const FeatureStackT<Scalar>& stack, CenterMode mode,
                                        std::string backend_id = {}) {
  TargetTemplateT<Scalar> t;
  t.center_mode = mode;
  t.backend_id = std::move(backend_id);
  const int cy = stack.height / 2;
  const int cx = stack.width / 2;
  if (mode == CenterMode::single_cell) {
    t.values = stack.post.col(cy * stack.width + cx);
    return t;
  }
  if (stack.height < 2 || stack.width < 2)
    throw InputError(fmt::format("center_2x2_mean needs a grid of at least 2x2, got {}x{}",
                                 stack.height, stack.width));
  t.values = (stack.post.col((cy - 1) * stack.width + cx - 1) +
              stack.post.col((cy - 1) * stack.width + cx) +
              stack.post.col(cy * stack.width + cx - 1) + stack.post.col(cy * stack.width + cx)) /
             Scalar(4);
  return t;
}

}  // namespace vsearch
