#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vsearch/backend.hpp"
#include "vsearch/detector.hpp"
#include "vsearch/stimgen.hpp"

namespace vsearch {

enum class TrialClass { present, absent };

/// Counter-based seed for one trial. For a fixed base seed the map from
/// (run_index, class_label, trial_index) is injective, so run 1 and run 2
/// never share a display. trial_index must be < 2^62.
std::uint64_t derive_trial_seed(std::uint64_t base_seed, int run_index, TrialClass label,
                                std::uint64_t trial_index);

/// Base seed of a sweep cell, keyed on the cell's values rather than its
/// position in the grid. Injective in the key for a fixed sweep seed.
std::uint64_t derive_cell_seed(std::uint64_t sweep_seed, Condition condition, int set_size,
                               int bar_length, int bar_width);

/// One data point: a (condition, set size, bar length) cell.
struct CellConfig {
  Condition condition = Condition::conjunction;
  int set_size = 8;
  int bar_length = 10;
  int bar_width = 3;
  bool complementary_target = true;
  BarColor target_color = BarColor::red;
  Orientation target_orientation = Orientation::horizontal;
  /// Feature-search distractor override (degenerate controls).
  std::optional<BarSpec> feature_distractor;
  int n_trials_per_class = 500;
  std::string backend_id;
  MapTap map_tap = MapTap::pre;
  CenterMode center_mode = CenterMode::center_2x2_mean;
  std::uint64_t base_seed = 0;
  CanvasSpec canvas;

  BarSpec target_bar() const;
  StimulusSpec stimulus(bool present, std::uint64_t seed) const;
  void validate() const;
  /// "feature-s04-l10-w3"; stable checkpoint file stem.
  std::string key() const;
};

nlohmann::json to_json(const CellConfig& c);
CellConfig cell_config_from_json(const nlohmann::json& j);

struct TrialStatistic {
  double value = 0.0;
  TrialClass label = TrialClass::present;
  std::uint64_t trial_seed = 0;
};

struct RunStatistics {
  std::vector<double> present;
  std::vector<double> absent;
};

struct CellResult {
  CellConfig cell;
  Criterion criterion;  // fitted on run 1
  double pc = 0.0;      // run 2 under the frozen criterion
  std::optional<double> pc_gauss;
  std::optional<double> dprime;
  double wall_time = 0.0;
  std::string run_id;
};

nlohmann::json to_json(const CellResult& r);
CellResult cell_result_from_json(const nlohmann::json& j);

/// Template from a freshly rendered probe of the cell's target bar.
TargetTemplate cell_template(const CellConfig& cell, const FeatureBackend& backend);

/// Map-max statistic of one trial.
TrialStatistic simulate_trial(const CellConfig& cell, const FeatureBackend& backend,
                              const TargetTemplate& tmpl, int run_index, TrialClass label,
                              std::uint64_t trial_index);

/// All n present + n absent statistics of one run.
RunStatistics simulate_run(const CellConfig& cell, const FeatureBackend& backend,
                           const TargetTemplate& tmpl, int run_index);

/// Double-run protocol: calibrate on run 1, score run 2 with the frozen
/// criterion. The Gaussian shortcut is computed on run 2 for comparison.
CellResult run_cell(const CellConfig& cell, const FeatureBackend& backend);

/// Deterministic id of a cell configuration.
std::string cell_run_id(const CellConfig& cell);

struct SweepConfig {
  std::vector<Condition> conditions{Condition::feature, Condition::conjunction};
  std::vector<int> set_sizes{2, 4, 8, 16, 24};
  std::vector<int> bar_lengths{4, 6, 8, 10, 13, 17};
  /// Shared fields for every cell; condition, set size, bar length and
  /// base seed are overwritten per cell.
  CellConfig shared;
  std::uint64_t base_seed = 20190101;
  std::filesystem::path output = "results.csv";
  /// Defaults to "<output>.cells".
  std::optional<std::filesystem::path> checkpoint_dir;
  int jobs = 0;  // 0: hardware concurrency
  std::string backend = "mock";
  std::optional<std::filesystem::path> model_manifest;

  std::filesystem::path checkpoints() const;
  void validate() const;
};

/// Reads the sweep config file. Unknown keys are rejected.
SweepConfig sweep_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SweepConfig& s);

/// Every cell of the grid in condition-major, then set size, then bar
/// length order.
std::vector<CellConfig> expand_grid(const SweepConfig& sweep, const std::string& backend_id);

struct SweepOptions {
  /// Stop dispatching after this many cells were computed (not resumed);
  /// used to exercise interruption.
  std::size_t max_new_cells = std::numeric_limits<std::size_t>::max();
  std::function<void(const CellResult&, std::size_t done, std::size_t total, bool resumed)> progress;
};

struct SweepResult {
  std::vector<CellResult> cells;  // grid order; only finished cells
  bool complete = false;
};

/// Runs every cell not already checkpointed, writing one JSON file per
/// finished cell. When all cells are done, writes the results CSV and its
/// provenance sidecar.
SweepResult run_sweep(const SweepConfig& sweep, const FeatureBackend& backend,
                      const SweepOptions& options = {});

/// One row of the results CSV.
struct ResultRow {
  Condition condition = Condition::feature;
  int set_size = 0;
  int bar_length = 0;
  int n_trials = 0;
  std::uint64_t base_seed = 0;
  std::string backend;
  std::string map_tap;
  std::string center_mode;
  double criterion = 0.0;
  double pc = 0.0;
  std::optional<double> pc_gauss;
  std::optional<double> dprime;
  std::string run_id;
};

using SweepTable = std::vector<ResultRow>;

inline constexpr const char* kResultsHeader =
    "condition,set_size,bar_length,n_trials,base_seed,backend,map_tap,center_mode,criterion,pc,"
    "pc_gauss,dprime,run_id";

ResultRow to_row(const CellResult& r);
std::string results_csv(const SweepTable& rows);
SweepTable parse_results_csv(const std::string& text);
SweepTable read_results_csv(const std::filesystem::path& path);

}  // namespace vsearch
