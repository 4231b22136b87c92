#include "vsearch/stimgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "vsearch/error.hpp"

namespace vsearch {

std::string_view to_string(Condition c) {
  return c == Condition::feature ? "feature" : "conjunction";
}
std::string_view to_string(BarColor c) { return c == BarColor::red ? "red" : "green"; }
std::string_view to_string(Orientation o) {
  return o == Orientation::horizontal ? "horizontal" : "vertical";
}

Condition parse_condition(std::string_view s) {
  if (s == "feature") return Condition::feature;
  if (s == "conjunction") return Condition::conjunction;
  throw ConfigError(fmt::format("unknown condition '{}' (expected feature|conjunction)", s));
}
BarColor parse_color(std::string_view s) {
  if (s == "red") return BarColor::red;
  if (s == "green") return BarColor::green;
  throw ConfigError(fmt::format("unknown color '{}' (expected red|green)", s));
}
Orientation parse_orientation(std::string_view s) {
  if (s == "horizontal") return Orientation::horizontal;
  if (s == "vertical") return Orientation::vertical;
  throw ConfigError(fmt::format("unknown orientation '{}' (expected horizontal|vertical)", s));
}

Rgb color_rgb(BarColor c) {
  return c == BarColor::red ? Rgb{255, 0, 0} : Rgb{0, 255, 0};
}

double BarSpec::diagonal() const { return std::hypot(length, width); }

void BarSpec::validate() const {
  if (length <= 0 || width <= 0)
    throw ConfigError(fmt::format("bar dimensions must be positive (length {}, width {})", length, width));
  if (length < width)
    throw ConfigError(fmt::format("bar length {} is shorter than its width {}", length, width));
}

BarSpec with_color(BarSpec bar, BarColor c) {
  bar.color = c;
  return bar;
}
BarSpec with_orientation(BarSpec bar, Orientation o) {
  bar.orientation = o;
  return bar;
}
BarColor other(BarColor c) { return c == BarColor::red ? BarColor::green : BarColor::red; }
Orientation other(Orientation o) {
  return o == Orientation::horizontal ? Orientation::vertical : Orientation::horizontal;
}

int CanvasSpec::capacity() const {
  return std::accumulate(ring_capacities.begin(), ring_capacities.end(), 0);
}

void CanvasSpec::validate(const BarSpec& largest_bar) const {
  largest_bar.validate();
  if (width <= 0 || height <= 0)
    throw ConfigError(fmt::format("canvas must be non-empty, got {}x{}", width, height));
  if (ring_radii.empty() || ring_radii.size() != ring_capacities.size())
    throw ConfigError("ring_radii and ring_capacities must be non-empty and of equal length");

  // Rounding each center to the pixel grid moves it by at most sqrt(2)/2.
  const double rounding_slack = std::numbers::sqrt2;
  const double min_spacing = largest_bar.diagonal() + 4.0;
  for (std::size_t i = 0; i < ring_radii.size(); ++i) {
    const int r = ring_radii[i];
    const int k = ring_capacities[i];
    if (r <= 0 || k <= 0)
      throw ConfigError(fmt::format("ring {} needs positive radius and capacity", i));
    if (k > 1) {
      const double chord = 2.0 * r * std::sin(std::numbers::pi / k);
      if (chord - rounding_slack < min_spacing)
        throw ConfigError(fmt::format(
            "ring {} (radius {}, capacity {}) spaces slots {:.2f} px apart, need {:.2f}", i, r, k,
            chord - rounding_slack, min_spacing));
    }
    for (std::size_t j = 0; j < i; ++j) {
      const double gap = std::abs(r - ring_radii[j]);
      if (gap - rounding_slack < min_spacing)
        throw ConfigError(fmt::format("rings {} and {} are {} px apart, need {:.2f}", j, i,
                                      std::abs(r - ring_radii[j]), min_spacing + rounding_slack));
    }
    const double half_diagonal = largest_bar.diagonal() / 2.0;
    if (r + half_diagonal > std::min(width, height) / 2.0)
      throw ConfigError(fmt::format(
          "ring radius {} plus bar half-diagonal {:.2f} exceeds canvas half-size {}", r,
          half_diagonal, std::min(width, height) / 2.0));
  }
}

std::vector<Point> canonical_slots(const CanvasSpec& canvas, std::span<const double> ring_offsets) {
  std::vector<Point> slots;
  slots.reserve(static_cast<std::size_t>(canvas.capacity()));
  for (std::size_t ring = 0; ring < canvas.ring_radii.size(); ++ring) {
    const double r = canvas.ring_radii[ring];
    const int k = canvas.ring_capacities[ring];
    for (int j = 0; j < k; ++j) {
      const double theta = ring_offsets[ring] + 2.0 * std::numbers::pi * j / k;
      slots.push_back({canvas.center_x() + static_cast<int>(std::lround(r * std::cos(theta))),
                       canvas.center_y() + static_cast<int>(std::lround(r * std::sin(theta)))});
    }
  }
  return slots;
}

std::vector<Point> plan_layout(const CanvasSpec& canvas, int set_size, Rng& rng) {
  const int capacity = canvas.capacity();
  if (set_size < 1 || set_size > capacity)
    throw ConfigError(
        fmt::format("set size {} out of range: display holds 1 to {} items", set_size, capacity));

  std::vector<double> offsets(canvas.ring_radii.size());
  for (std::size_t ring = 0; ring < offsets.size(); ++ring)
    offsets[ring] = rng.uniform_unit() * 2.0 * std::numbers::pi / canvas.ring_capacities[ring];
  const auto slots = canonical_slots(canvas, offsets);

  // Partial Fisher-Yates over slot indices.
  std::vector<std::size_t> order(slots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < static_cast<std::size_t>(set_size); ++i) {
    const auto j = i + rng.uniform_index(order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(static_cast<std::size_t>(set_size));
  std::sort(order.begin(), order.end());

  std::vector<Point> centers;
  centers.reserve(order.size());
  for (auto idx : order) centers.push_back(slots[idx]);
  return centers;
}

namespace {

// Shuffles in place with the portable bounded draw.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

}  // namespace

ItemList assign_items(const StimulusSpec& spec, std::span<const Point> centers, Rng& rng) {
  const auto n = static_cast<std::size_t>(spec.set_size);
  if (centers.size() != n)
    throw InputError(fmt::format("got {} centers for set size {}", centers.size(), n));
  spec.bar.validate();

  const bool conjunction = spec.condition == Condition::conjunction;
  const bool with_complement = conjunction && spec.target_present && spec.complementary_target;
  const std::size_t required = spec.target_present ? (with_complement ? 2 : 1) : 1;
  if (n < required)
    throw ConfigError(fmt::format("set size {} cannot hold the {} required target item(s)", n,
                                  required));

  const BarSpec& target = spec.bar;
  // Conjunction distractors share exactly one feature with the target.
  const BarSpec same_color = with_orientation(target, other(target.orientation));
  const BarSpec same_orientation = with_color(target, other(target.color));
  const BarSpec complement = with_color(same_color, other(target.color));
  const BarSpec feature_distractor = spec.feature_distractor.value_or(same_color);

  ItemList out;
  out.items.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.items[i].center = centers[i];

  std::vector<std::size_t> free_slots(n);
  std::iota(free_slots.begin(), free_slots.end(), std::size_t{0});
  auto take_random_slot = [&]() {
    const auto pick = rng.uniform_index(free_slots.size());
    const auto slot = free_slots[pick];
    free_slots.erase(free_slots.begin() + static_cast<std::ptrdiff_t>(pick));
    return slot;
  };

  if (spec.target_present) {
    out.target_index = take_random_slot();
    out.items[*out.target_index].bar = target;
    if (with_complement) {
      out.complement_index = take_random_slot();
      out.items[*out.complement_index].bar = complement;
    }
  }

  if (!conjunction) {
    for (auto slot : free_slots) out.items[slot].bar = feature_distractor;
    return out;
  }

  // Balanced split; a fair coin gives the odd item to one of the two types.
  const std::size_t m = free_slots.size();
  std::size_t n_same_color = m / 2;
  if (m % 2 == 1 && rng.coin()) ++n_same_color;
  shuffle(free_slots, rng);
  for (std::size_t i = 0; i < m; ++i)
    out.items[free_slots[i]].bar = i < n_same_color ? same_color : same_orientation;
  return out;
}

ItemList generate_items(const StimulusSpec& spec) {
  Rng rng(spec.seed);
  const auto centers = plan_layout(spec.canvas, spec.set_size, rng);
  return assign_items(spec, centers, rng);
}

namespace {

void fill_bar(Image& img, Point c, const BarSpec& bar) {
  const int ex = bar.extent_x();
  const int ey = bar.extent_y();
  const int x0 = std::max(0, c.x - ex / 2);
  const int y0 = std::max(0, c.y - ey / 2);
  const int x1 = std::min(img.width, c.x - ex / 2 + ex);
  const int y1 = std::min(img.height, c.y - ey / 2 + ey);
  const Rgb color = color_rgb(bar.color);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) img.set(x, y, color);
}

}  // namespace

Image render(const ItemList& items, const CanvasSpec& canvas) {
  Image img(canvas.width, canvas.height, canvas.background);
  for (const auto& item : items.items) fill_bar(img, item.center, item.bar);
  return img;
}

Image render_target_probe(const BarSpec& bar, const CanvasSpec& canvas) {
  Image img(canvas.width, canvas.height, canvas.background);
  fill_bar(img, {canvas.center_x(), canvas.center_y()}, bar);
  return img;
}

nlohmann::json to_json(const ItemList& items, Condition condition) {
  nlohmann::json j;
  j["condition"] = to_string(condition);
  j["set_size"] = items.items.size();
  auto& arr = j["items"] = nlohmann::json::array();
  for (const auto& it : items.items) {
    arr.push_back({{"x", it.center.x},
                   {"y", it.center.y},
                   {"color", to_string(it.bar.color)},
                   {"orientation", to_string(it.bar.orientation)},
                   {"length", it.bar.length},
                   {"width", it.bar.width}});
  }
  j["target_index"] = items.target_index ? nlohmann::json(*items.target_index) : nlohmann::json();
  j["complement_index"] =
      items.complement_index ? nlohmann::json(*items.complement_index) : nlohmann::json();
  return j;
}

}  // namespace vsearch
