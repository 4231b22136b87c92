#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vsearch/image.hpp"
#include "vsearch/rng.hpp"

namespace vsearch {

enum class Condition { feature, conjunction };
enum class BarColor { red, green };
enum class Orientation { horizontal, vertical };

std::string_view to_string(Condition c);
std::string_view to_string(BarColor c);
std::string_view to_string(Orientation o);
Condition parse_condition(std::string_view s);
BarColor parse_color(std::string_view s);
Orientation parse_orientation(std::string_view s);

Rgb color_rgb(BarColor c);

struct BarSpec {
  BarColor color = BarColor::red;
  Orientation orientation = Orientation::horizontal;
  int length = 10;
  int width = 3;

  /// Extent along x and y in pixels.
  int extent_x() const { return orientation == Orientation::horizontal ? length : width; }
  int extent_y() const { return orientation == Orientation::horizontal ? width : length; }
  double diagonal() const;
  void validate() const;

  friend bool operator==(const BarSpec&, const BarSpec&) = default;
};

BarSpec with_color(BarSpec bar, BarColor c);
BarSpec with_orientation(BarSpec bar, Orientation o);
BarColor other(BarColor c);
Orientation other(Orientation o);

/// Display geometry: concentric rings of equally spaced slots around the
/// canvas center.
struct CanvasSpec {
  int width = 224;
  int height = 224;
  Rgb background{128, 128, 128};
  std::vector<int> ring_radii{40, 70, 100};
  std::vector<int> ring_capacities{6, 8, 10};

  int capacity() const;
  int center_x() const { return width / 2; }
  int center_y() const { return height / 2; }

  /// Checks ring geometry against the largest bar to be drawn: minimum
  /// slot spacing of diagonal + 4 px and every bar inside the canvas.
  void validate(const BarSpec& largest_bar) const;
};

struct StimulusSpec {
  Condition condition = Condition::conjunction;
  int set_size = 8;
  bool target_present = true;
  bool complementary_target = true;
  /// The search target. Distractors are derived from it.
  BarSpec bar;
  /// Replaces the feature-search distractor (target color, orthogonal
  /// orientation). Used for degenerate target == distractor controls.
  std::optional<BarSpec> feature_distractor;
  CanvasSpec canvas;
  std::uint64_t seed = 0;
};

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Item {
  Point center;
  BarSpec bar;
};

struct ItemList {
  std::vector<Item> items;
  std::optional<std::size_t> target_index;
  std::optional<std::size_t> complement_index;
};

/// Picks set_size distinct slot centers. Each ring gets one fresh uniform
/// angular offset per call; slots are then drawn uniformly without
/// replacement over all rings. Returned in canonical slot order.
std::vector<Point> plan_layout(const CanvasSpec& canvas, int set_size, Rng& rng);

/// All slot centers for the given per-ring angular offsets (radians).
std::vector<Point> canonical_slots(const CanvasSpec& canvas, std::span<const double> ring_offsets);

/// Assigns bars to centers according to condition and target presence.
ItemList assign_items(const StimulusSpec& spec, std::span<const Point> centers, Rng& rng);

/// plan_layout + assign_items driven by spec.seed.
ItemList generate_items(const StimulusSpec& spec);

/// Background fill plus one axis-aligned filled rectangle per item. A bar
/// with extent e along an axis covers [c - e/2, c - e/2 + e) around its
/// center pixel c.
Image render(const ItemList& items, const CanvasSpec& canvas);

/// Single bar at the canvas center on the search-display background.
Image render_target_probe(const BarSpec& bar, const CanvasSpec& canvas);

/// JSON manifest with keys condition, set_size, items[{x,y,color,
/// orientation,length,width}], target_index (null when absent) and
/// complement_index.
nlohmann::json to_json(const ItemList& items, Condition condition);

}  // namespace vsearch
