#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vsearch/experiment.hpp"

namespace vsearch {

struct CurvePoint {
  int bar_length = 0;
  double pc = 0.0;
};

struct PsychometricCurve {
  Condition condition = Condition::feature;
  int set_size = 0;
  std::vector<CurvePoint> points;  // strictly increasing bar length
  std::vector<int> n_trials;       // parallel to points
};

/// One curve per (condition, set size), conditions in feature, conjunction
/// order and set sizes ascending. Throws DataError on duplicate cells.
std::vector<PsychometricCurve> build_curves(const SweepTable& table);

struct HumanRow {
  Condition condition = Condition::feature;
  int set_size = 0;
  int bar_length = 0;
  double pc = 0.0;
};

/// Observer data supplied by the user; never produced by this tool.
struct HumanReference {
  std::vector<HumanRow> rows;
  std::string provenance;
};

/// CSV with header condition,set_size,bar_length,pc.
HumanReference ingest_human_reference(const std::filesystem::path& path);
HumanReference parse_human_reference(const std::string& text, std::string provenance = {});

struct CheckResult {
  bool pass = false;
  double margin = 0.0;     // signed; positive means the claim holds
  double tolerance = 0.0;  // required margin or threshold
  std::string description;
  nlohmann::json inputs;
};

struct CheckReport {
  std::map<std::string, CheckResult> checks;
  bool all_pass() const;
};

nlohmann::json to_json(const CheckReport& report);

/// Thresholds of interpretation for the qualitative properties.
struct CheckThresholds {
  double conjunction_gap = 0.05;     // (a) feature - conjunction mean pc
  double set_size_drop = 0.05;       // (b) pc(small set) - pc(largest set)
  double far_from_perfect = 0.97;    // (c) model stays below this
  std::optional<int> far_from_perfect_set_size;  // (c) default: largest
  double popout = 0.95;              // pop-out bar, every set size
  int popout_min_length = 8;
  double spearman_min = 0.8;         // (d) per curve
  double spearman_fraction = 0.8;    // (d) share of curves
};

/// Qualitative model properties:
///   conjunction_harder   (a) mean feature pc - mean conjunction pc over
///                        matched cells >= conjunction_gap
///   set_size_effect      (b) feature pc at set 4 (else 2, else smallest)
///                        minus pc at the largest set, longest bar
///   far_from_perfect     (c) feature pc at the longest bar and chosen set
///                        size < far_from_perfect
///   psychometric_shape   (d) Spearman(pc, bar length) >= spearman_min for
///                        at least spearman_fraction of curves
///   feature_popout       feature pc >= popout for every set size at bar
///                        lengths >= popout_min_length (expected to fail for
///                        the CNN and pass for the mock backend)
/// Requires both conditions, >= 2 set sizes and >= 3 bar lengths with the
/// full grid present.
CheckReport qualitative_checks(const SweepTable& table, const CheckThresholds& thresholds = {});

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant or fewer than two points.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// One SVG per condition ("<condition>.svg"); returns the written paths.
std::vector<std::filesystem::path> emit_plots(const std::vector<PsychometricCurve>& curves,
                                              const std::optional<HumanReference>& human,
                                              const std::filesystem::path& out_dir,
                                              const nlohmann::json& provenance = nullptr);

/// SVG document for one condition's curves.
std::string render_svg(Condition condition, const std::vector<PsychometricCurve>& curves,
                       const std::optional<HumanReference>& human, const nlohmann::json& provenance);

}  // namespace vsearch
