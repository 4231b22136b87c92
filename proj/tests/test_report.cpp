#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "vsearch/error.hpp"
#include "vsearch/report.hpp"

using namespace vsearch;
using namespace vsearch::testing;

namespace {

const std::vector<int> kSizes{2, 4, 8, 16, 24};
const std::vector<int> kLengths{4, 6, 8, 10, 13, 17};

ResultRow row(Condition c, int n, int len, double pc) {
  ResultRow r;
  r.condition = c;
  r.set_size = n;
  r.bar_length = len;
  r.n_trials = 1000;
  r.backend = "mock";
  r.map_tap = "pre";
  r.center_mode = "center_2x2_mean";
  r.pc = pc;
  r.run_id = "x";
  return r;
}

// A full grid where pc(condition, n, len) comes from f.
template <typename F>
SweepTable grid(F f) {
  SweepTable t;
  for (auto c : {Condition::feature, Condition::conjunction})
    for (int n : kSizes)
      for (int len : kLengths) t.push_back(row(c, n, len, f(c, n, len)));
  return t;
}

// Human-like data: rises with length, falls with set size, conjunction lower.
double humanlike(Condition c, int n, int len) {
  const double base = c == Condition::feature ? 0.56 : 0.5;
  return base + 0.025 * len - 0.004 * n;
}

}  // namespace

TEST_CASE("build_curves groups a full grid into ten curves") {
  const auto curves = build_curves(grid(humanlike));
  REQUIRE(curves.size() == 10);
  CHECK(curves[0].condition == Condition::feature);
  CHECK(curves[0].set_size == 2);
  CHECK(curves[9].condition == Condition::conjunction);
  CHECK(curves[9].set_size == 24);
  for (const auto& c : curves) {
    REQUIRE(c.points.size() == 6);
    for (std::size_t i = 1; i < c.points.size(); ++i) CHECK(c.points[i].bar_length > c.points[i - 1].bar_length);
    CHECK(c.n_trials.size() == 6);
  }
}

TEST_CASE("build_curves edge cases") {
  const auto one = build_curves({row(Condition::feature, 4, 10, 0.9)});
  REQUIRE(one.size() == 1);
  CHECK(one[0].points.size() == 1);
  CHECK_THROWS_AS(build_curves({}), DataError);
  try {
    build_curves({row(Condition::feature, 4, 10, 0.9), row(Condition::feature, 4, 10, 0.8)});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("feature") != std::string::npos);
  }
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3}, {1, 3, 2}) == doctest::Approx(0.5));
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Ties: average ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4) -> Pearson of ranks.
  CHECK(spearman({1, 2, 3, 4}, {0.1, 0.5, 0.5, 0.9}) == doctest::Approx(4.5 / std::sqrt(5.0 * 4.5)));
  CHECK(std::isnan(spearman({1, 2, 3}, {0.5, 0.5, 0.5})));
  CHECK(std::isnan(spearman({1}, {1})));
}

TEST_CASE("qualitative checks on a human-like table pass") {
  CheckThresholds t;
  t.far_from_perfect_set_size = 16;
  const auto r = qualitative_checks(grid(humanlike), t);
  CHECK(r.checks.at("conjunction_harder").pass);
  CHECK(r.checks.at("conjunction_harder").margin == doctest::Approx(0.01));
  CHECK(r.checks.at("set_size_effect").pass);
  CHECK(r.checks.at("far_from_perfect").pass);
  CHECK(r.checks.at("psychometric_shape").pass);
  CHECK_FALSE(r.checks.at("feature_popout").pass);
  CHECK(r.checks.at("far_from_perfect").inputs.at("set_size") == 16);
}

TEST_CASE("qualitative checks on a pop-out table") {
  const auto r = qualitative_checks(grid([](Condition c, int, int len) {
    return c == Condition::feature ? (len >= 6 ? 1.0 : 0.5) : 0.5 + 0.02 * len;
  }));
  CHECK(r.checks.at("feature_popout").pass);
  CHECK(r.checks.at("feature_popout").margin == doctest::Approx(0.05));
  CHECK_FALSE(r.checks.at("far_from_perfect").pass);
  CHECK_FALSE(r.checks.at("set_size_effect").pass);
  CHECK(r.checks.at("set_size_effect").inputs.at("small_set_size") == 4);
  CHECK(r.checks.at("set_size_effect").inputs.at("large_set_size") == 24);
  CHECK_FALSE(r.all_pass());
}

TEST_CASE("flat curves fail the shape check") {
  const auto r = qualitative_checks(grid([](Condition, int, int) { return 0.7; }));
  CHECK_FALSE(r.checks.at("psychometric_shape").pass);
  CHECK(r.checks.at("psychometric_shape").inputs.at("value") == 0.0);
  CHECK_FALSE(r.checks.at("conjunction_harder").pass);
}

TEST_CASE("qualitative checks refuse incomplete tables") {
  auto t = grid(humanlike);
  t.pop_back();
  try {
    qualitative_checks(t);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("conjunction/24/17") != std::string::npos);
  }
  SweepTable feature_only;
  for (const auto& r : grid(humanlike))
    if (r.condition == Condition::feature) feature_only.push_back(r);
  CHECK_THROWS_AS(qualitative_checks(feature_only), DataError);
  CheckThresholds bad;
  bad.far_from_perfect_set_size = 12;
  CHECK_THROWS_AS(qualitative_checks(grid(humanlike), bad), DataError);
}

TEST_CASE("check report JSON") {
  const auto j = to_json(qualitative_checks(grid(humanlike)));
  for (const char* k : {"conjunction_harder", "set_size_effect", "far_from_perfect", "psychometric_shape"}) {
    REQUIRE(j.contains(k));
    for (const char* f : {"pass", "margin", "tolerance", "description", "inputs"}) CHECK(j[k].contains(f));
  }
}

TEST_CASE("human reference parsing") {
  const auto ref = parse_human_reference(
      "condition,set_size,bar_length,pc\nfeature,4,10,0.91\nfeature,4,17,0.95\n"
      "conjunction,4,10,0.8\nconjunction,4,17,0.86\n",
      "lab.csv");
  REQUIRE(ref.rows.size() == 4);
  CHECK(ref.rows[2].condition == Condition::conjunction);
  CHECK(ref.rows[3].pc == 0.86);
  CHECK(ref.provenance == "lab.csv");

  try {
    parse_human_reference("condition,set_size,bar_length,pc\nfeature,4,10,0.9\nfeature,4,13,1.2\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK(parse_human_reference("condition,set_size,bar_length,pc\n").rows.empty());
  CHECK_THROWS_AS(parse_human_reference("cond,n,len,pc\n"), ParseError);
  CHECK_THROWS_AS(parse_human_reference("condition,set_size,bar_length,pc\nfeature,4,x,0.5\n"), ParseError);
  CHECK_THROWS_AS(ingest_human_reference("/nonexistent/human.csv"), IoError);
}

TEST_CASE("plots") {
  TempDir dir("plots");
  const auto curves = build_curves(grid(humanlike));
  const auto human = parse_human_reference(
      "condition,set_size,bar_length,pc\nfeature,4,6,0.7\nfeature,4,10,0.85\nfeature,4,17,0.93\n");

  const auto paths = emit_plots(curves, std::nullopt, dir.path(), {{"tool", "vsearch"}});
  REQUIRE(paths.size() == 2);
  const auto feature_svg = slurp(dir / "feature.svg");
  CHECK(feature_svg.find("<svg") == 0);
  CHECK(feature_svg.find("class=\"chance\"") != std::string::npos);
  CHECK(feature_svg.find("id=\"provenance\"") != std::string::npos);
  std::size_t polylines = 0;
  for (auto p = feature_svg.find("class=\"model\""); p != std::string::npos;
       p = feature_svg.find("class=\"model\"", p + 1))
    ++polylines;
  CHECK(polylines == 5);
  CHECK(feature_svg.find("class=\"human\"") == std::string::npos);

  emit_plots(curves, human, dir.path());
  const auto with_human = slurp(dir / "feature.svg");
  const auto h = with_human.find("class=\"human\"");
  REQUIRE(h != std::string::npos);
  CHECK(with_human.find("stroke-dasharray", h) != std::string::npos);
  CHECK(slurp(dir / "conjunction.svg").find("class=\"human\"") == std::string::npos);

  // Same input, same bytes.
  CHECK(render_svg(Condition::feature, curves, human, nullptr) ==
        render_svg(Condition::feature, curves, human, nullptr));
  CHECK_THROWS_AS(emit_plots({}, std::nullopt, dir.path()), DataError);

  const auto only_feature = build_curves({row(Condition::feature, 4, 10, 0.9)});
  TempDir single("single");
  CHECK(emit_plots(only_feature, std::nullopt, single.path()).size() == 1);
}
