#pragma once

#include <string>

#include "vsearch/feature_stack.hpp"
#include "vsearch/image.hpp"

namespace vsearch {

/// Source of feature stacks. Implementations must be logically pure and
/// safe to call from several threads at once.
class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual FeatureStack extract(const Image& image) const = 0;
  virtual std::string id() const = 0;
  virtual int channels() const = 0;
};

/// Handcrafted four-channel filter bank with known orientation pop-out.
///
/// Channels, each averaged over 16x16 px cells:
///   0 redness    max(0, R - max(G, B)) / 255
///   1 greenness  max(0, G - max(R, B)) / 255
///   2 horizontal edge energy
///   3 vertical edge energy
/// Edge energy starts from the RGB forward difference across the edge,
/// sum_c |dI_c| / (3 * 255). A pixel only counts toward horizontal energy
/// when that difference is present over a run of 5 pixels along x (and
/// along y for vertical energy), so the 3 px ends of a bar do not register
/// as edges of the other orientation. Energies are scaled by
/// kOrientationGain so orientation dominates color in the dot product.
/// pre == post (no rectifier stage).
class MockBackend final : public FeatureBackend {
 public:
  static constexpr int kCell = 16;
  static constexpr int kChannels = 4;
  static constexpr int kRun = 5;
  static constexpr float kOrientationGain = 16.0f;

  FeatureStack extract(const Image& image) const override;
  std::string id() const override { return "mock"; }
  int channels() const override { return kChannels; }
};

/// Free-function form of MockBackend::extract.
FeatureStack mock_extract(const Image& image);

}  // namespace vsearch
