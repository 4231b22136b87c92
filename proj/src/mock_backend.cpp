#include <algorithm>
#include <cstdlib>
#include <vector>

#include "vsearch/backend.hpp"

namespace vsearch {

namespace {

float contrast(const Image& img, int x0, int y0, int x1, int y1) {
  const auto a = img.offset(x0, y0);
  const auto b = img.offset(x1, y1);
  int sum = 0;
  for (int c = 0; c < 3; ++c) sum += std::abs(int(img.pixels[a + c]) - int(img.pixels[b + c]));
  return static_cast<float>(sum) / (3.0f * 255.0f);
}

}  // namespace

FeatureStack mock_extract(const Image& image) {
  constexpr int cell = MockBackend::kCell;
  constexpr int half_run = MockBackend::kRun / 2;
  if (image.width % cell != 0 || image.height % cell != 0 || image.width == 0 || image.height == 0)
    throw InputError(fmt::format("mock backend needs dimensions divisible by {}, got {}x{}", cell,
                                 image.width, image.height));
  const int w = image.width;
  const int h = image.height;

  // Forward differences across horizontal (dy) and vertical (dx) edges.
  std::vector<float> dy(static_cast<std::size_t>(w) * h, 0.0f);
  std::vector<float> dx(static_cast<std::size_t>(w) * h, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (y + 1 < h) dy[y * w + x] = contrast(image, x, y, x, y + 1);
      if (x + 1 < w) dx[y * w + x] = contrast(image, x, y, x + 1, y);
    }

  FeatureStack stack(MockBackend::kChannels, h / cell, w / cell);
  const float norm = 1.0f / (cell * cell);
  for (int y = 0; y < h; ++y) {
    const int gy = y / cell;
    for (int x = 0; x < w; ++x) {
      const int col = gy * stack.width + x / cell;
      const Rgb p = image.at(x, y);
      const int red = int(p.r) - std::max(p.g, p.b);
      const int green = int(p.g) - std::max(p.r, p.b);
      if (red > 0) stack.pre(0, col) += norm * red / 255.0f;
      if (green > 0) stack.pre(1, col) += norm * green / 255.0f;

      float horiz = 0.0f;
      if (x >= half_run && x + half_run < w) {
        horiz = dy[y * w + x];
        for (int d = -half_run; d <= half_run && horiz > 0.0f; ++d)
          horiz = std::min(horiz, dy[y * w + x + d]);
      }
      float vert = 0.0f;
      if (y >= half_run && y + half_run < h) {
        vert = dx[y * w + x];
        for (int d = -half_run; d <= half_run && vert > 0.0f; ++d)
          vert = std::min(vert, dx[(y + d) * w + x]);
      }
      stack.pre(2, col) += norm * MockBackend::kOrientationGain * horiz;
      stack.pre(3, col) += norm * MockBackend::kOrientationGain * vert;
    }
  }
  stack.post = stack.pre;
  return stack;
}

FeatureStack MockBackend::extract(const Image& image) const { return mock_extract(image); }

}  // namespace vsearch
