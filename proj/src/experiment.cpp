#include "vsearch/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "vsearch/provenance.hpp"

namespace vsearch {

namespace fs = std::filesystem;

std::uint64_t derive_trial_seed(std::uint64_t base_seed, int run_index, TrialClass label,
                                std::uint64_t trial_index) {
  if (run_index != 1 && run_index != 2)
    throw InputError(fmt::format("run index must be 1 or 2, got {}", run_index));
  constexpr std::uint64_t kIndexMask = (std::uint64_t{1} << 62) - 1;
  if (trial_index > kIndexMask) throw InputError("trial index exceeds 2^62");
  const std::uint64_t key = (std::uint64_t(run_index - 1) << 63) |
                            (std::uint64_t(label == TrialClass::absent) << 62) | trial_index;
  // key -> key + c -> mix64 is a bijection for fixed c.
  return mix64(key + mix64(base_seed));
}

std::uint64_t derive_cell_seed(std::uint64_t sweep_seed, Condition condition, int set_size,
                               int bar_length, int bar_width) {
  if (set_size < 0 || set_size >= (1 << 16) || bar_length < 0 || bar_length >= (1 << 20) ||
      bar_width < 0 || bar_width >= (1 << 20))
    throw ConfigError("cell coordinates out of range for seed derivation");
  const std::uint64_t key = (std::uint64_t(condition == Condition::conjunction) << 56) |
                            (std::uint64_t(set_size) << 40) | (std::uint64_t(bar_length) << 20) |
                            std::uint64_t(bar_width);
  return mix64(sweep_seed ^ mix64(key));
}

// ---------------------------------------------------------------------------
// CellConfig

BarSpec CellConfig::target_bar() const {
  return BarSpec{target_color, target_orientation, bar_length, bar_width};
}

StimulusSpec CellConfig::stimulus(bool present, std::uint64_t seed) const {
  StimulusSpec s;
  s.condition = condition;
  s.set_size = set_size;
  s.target_present = present;
  s.complementary_target = condition == Condition::conjunction && complementary_target;
  s.bar = target_bar();
  s.feature_distractor = feature_distractor;
  s.canvas = canvas;
  s.seed = seed;
  return s;
}

void CellConfig::validate() const {
  if (n_trials_per_class < 1)
    throw ConfigError(fmt::format("n_trials_per_class must be at least 1, got {}", n_trials_per_class));
  BarSpec largest = target_bar();
  if (feature_distractor && feature_distractor->diagonal() > largest.diagonal())
    largest = *feature_distractor;
  canvas.validate(largest);
  if (set_size < 1 || set_size > canvas.capacity())
    throw ConfigError(fmt::format("set size {} out of range: display holds 1 to {} items",
                                  set_size, canvas.capacity()));
  const int required = condition == Condition::conjunction && complementary_target ? 2 : 1;
  if (set_size < required)
    throw ConfigError(fmt::format("set size {} cannot hold the {} required target item(s)",
                                  set_size, required));
}

std::string CellConfig::key() const {
  return fmt::format("{}-s{:02d}-l{:02d}-w{}", to_string(condition), set_size, bar_length, bar_width);
}

namespace {

nlohmann::json bar_json(const BarSpec& b) {
  return {{"color", to_string(b.color)},
          {"orientation", to_string(b.orientation)},
          {"length", b.length},
          {"width", b.width}};
}

BarSpec bar_from_json(const nlohmann::json& j) {
  return BarSpec{parse_color(j.at("color").get<std::string>()),
                 parse_orientation(j.at("orientation").get<std::string>()),
                 j.at("length").get<int>(), j.at("width").get<int>()};
}

nlohmann::json canvas_json(const CanvasSpec& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"background", {c.background.r, c.background.g, c.background.b}},
          {"ring_radii", c.ring_radii},
          {"ring_capacities", c.ring_capacities}};
}

CanvasSpec canvas_from_json(const nlohmann::json& j) {
  CanvasSpec c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  const auto bg = j.at("background").get<std::array<int, 3>>();
  c.background = Rgb{static_cast<std::uint8_t>(bg[0]), static_cast<std::uint8_t>(bg[1]),
                     static_cast<std::uint8_t>(bg[2])};
  c.ring_radii = j.at("ring_radii").get<std::vector<int>>();
  c.ring_capacities = j.at("ring_capacities").get<std::vector<int>>();
  return c;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json();
}

std::optional<double> optional_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

nlohmann::json to_json(const CellConfig& c) {
  return {{"condition", to_string(c.condition)},
          {"set_size", c.set_size},
          {"bar_length", c.bar_length},
          {"bar_width", c.bar_width},
          {"complementary_target", c.complementary_target},
          {"target_color", to_string(c.target_color)},
          {"target_orientation", to_string(c.target_orientation)},
          {"feature_distractor",
           c.feature_distractor ? bar_json(*c.feature_distractor) : nlohmann::json()},
          {"n_trials_per_class", c.n_trials_per_class},
          {"backend", c.backend_id},
          {"map_tap", to_string(c.map_tap)},
          {"center_mode", to_string(c.center_mode)},
          {"base_seed", c.base_seed},
          {"canvas", canvas_json(c.canvas)}};
}

CellConfig cell_config_from_json(const nlohmann::json& j) {
  CellConfig c;
  c.condition = parse_condition(j.at("condition").get<std::string>());
  c.set_size = j.at("set_size").get<int>();
  c.bar_length = j.at("bar_length").get<int>();
  c.bar_width = j.at("bar_width").get<int>();
  c.complementary_target = j.at("complementary_target").get<bool>();
  c.target_color = parse_color(j.at("target_color").get<std::string>());
  c.target_orientation = parse_orientation(j.at("target_orientation").get<std::string>());
  if (!j.at("feature_distractor").is_null())
    c.feature_distractor = bar_from_json(j.at("feature_distractor"));
  c.n_trials_per_class = j.at("n_trials_per_class").get<int>();
  c.backend_id = j.at("backend").get<std::string>();
  c.map_tap = parse_map_tap(j.at("map_tap").get<std::string>());
  c.center_mode = parse_center_mode(j.at("center_mode").get<std::string>());
  c.base_seed = j.at("base_seed").get<std::uint64_t>();
  c.canvas = canvas_from_json(j.at("canvas"));
  return c;
}

nlohmann::json to_json(const CellResult& r) {
  return {{"cell", to_json(r.cell)},
          {"criterion",
           {{"threshold", r.criterion.threshold},
            {"calibrated_pc", r.criterion.calibrated_pc},
            {"n_present", r.criterion.n_present},
            {"n_absent", r.criterion.n_absent}}},
          {"pc", r.pc},
          {"pc_gauss", optional_json(r.pc_gauss)},
          {"dprime", optional_json(r.dprime)},
          {"wall_time", r.wall_time},
          {"run_id", r.run_id}};
}

CellResult cell_result_from_json(const nlohmann::json& j) {
  CellResult r;
  r.cell = cell_config_from_json(j.at("cell"));
  const auto& c = j.at("criterion");
  r.criterion.threshold = c.at("threshold").get<double>();
  r.criterion.calibrated_pc = c.at("calibrated_pc").get<double>();
  r.criterion.n_present = c.at("n_present").get<std::size_t>();
  r.criterion.n_absent = c.at("n_absent").get<std::size_t>();
  r.pc = j.at("pc").get<double>();
  r.pc_gauss = optional_from_json(j.at("pc_gauss"));
  r.dprime = optional_from_json(j.at("dprime"));
  r.wall_time = j.at("wall_time").get<double>();
  r.run_id = j.at("run_id").get<std::string>();
  return r;
}

std::string cell_run_id(const CellConfig& cell) { return hex64(fnv1a64(to_json(cell).dump())); }

// ---------------------------------------------------------------------------
// Double-run protocol

TargetTemplate cell_template(const CellConfig& cell, const FeatureBackend& backend) {
  const Image probe = render_target_probe(cell.target_bar(), cell.canvas);
  const FeatureStack stack = backend.extract(probe);
  return target_template(stack, cell.center_mode, backend.id());
}

TrialStatistic simulate_trial(const CellConfig& cell, const FeatureBackend& backend,
                              const TargetTemplate& tmpl, int run_index, TrialClass label,
                              std::uint64_t trial_index) {
  TrialStatistic stat;
  stat.label = label;
  stat.trial_seed = derive_trial_seed(cell.base_seed, run_index, label, trial_index);
  const StimulusSpec spec = cell.stimulus(label == TrialClass::present, stat.trial_seed);
  const Image display = render(generate_items(spec), spec.canvas);
  const FeatureStack stack = backend.extract(display);
  stat.value = static_cast<double>(map_max(attention_map(tmpl, stack, cell.map_tap)));
  if (!std::isfinite(stat.value))
    throw IntegrityError(fmt::format("non-finite map maximum for trial seed {}", stat.trial_seed));
  return stat;
}

RunStatistics simulate_run(const CellConfig& cell, const FeatureBackend& backend,
                           const TargetTemplate& tmpl, int run_index) {
  RunStatistics out;
  const auto n = static_cast<std::size_t>(cell.n_trials_per_class);
  out.present.reserve(n);
  out.absent.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.present.push_back(simulate_trial(cell, backend, tmpl, run_index, TrialClass::present, i).value);
    out.absent.push_back(simulate_trial(cell, backend, tmpl, run_index, TrialClass::absent, i).value);
  }
  return out;
}

CellResult run_cell(const CellConfig& cell, const FeatureBackend& backend) {
  cell.validate();
  const auto start = std::chrono::steady_clock::now();
  CellResult result;
  result.cell = cell;
  result.cell.backend_id = backend.id();

  const TargetTemplate tmpl = cell_template(result.cell, backend);
  const RunStatistics calibration = simulate_run(result.cell, backend, tmpl, 1);
  result.criterion = calibrate_criterion(calibration.present, calibration.absent);
  const RunStatistics evaluation = simulate_run(result.cell, backend, tmpl, 2);
  result.pc = proportion_correct(evaluation.present, evaluation.absent, result.criterion.threshold);
  try {
    const auto g = gaussian_pc_estimate(evaluation.present, evaluation.absent);
    result.dprime = g.dprime;
    result.pc_gauss = g.pc;
  } catch (const InputError&) {
  } catch (const DegenerateDistributionError&) {
  }

  result.run_id = cell_run_id(result.cell);
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Sweep

fs::path SweepConfig::checkpoints() const {
  if (checkpoint_dir) return *checkpoint_dir;
  fs::path p = output;
  p += ".cells";
  return p;
}

void SweepConfig::validate() const {
  if (conditions.empty() || set_sizes.empty() || bar_lengths.empty())
    throw ConfigError("sweep grid needs at least one condition, set size and bar length");
  auto unique = [](auto v) {
    std::sort(v.begin(), v.end());
    return std::adjacent_find(v.begin(), v.end()) == v.end();
  };
  if (!unique(conditions) || !unique(set_sizes) || !unique(bar_lengths))
    throw ConfigError("sweep grid contains duplicate values");
  if (jobs < 0) throw ConfigError("jobs must be non-negative");
}

namespace {

const std::set<std::string>& sweep_keys() {
  static const std::set<std::string> keys{
      "conditions", "set_sizes", "bar_lengths", "bar_width", "n_trials_per_class",
      "complementary_target", "target_color", "target_orientation", "map_tap", "center_mode",
      "base_seed", "output", "checkpoint_dir", "jobs", "backend", "model_manifest", "canvas"};
  return keys;
}

}  // namespace

SweepConfig sweep_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("sweep config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!sweep_keys().count(k)) throw ConfigError(fmt::format("unknown sweep config key '{}'", k));
  SweepConfig s;
  try {
    if (j.contains("conditions")) {
      s.conditions.clear();
      for (const auto& c : j["conditions"]) s.conditions.push_back(parse_condition(c.get<std::string>()));
    }
    if (j.contains("set_sizes")) s.set_sizes = j["set_sizes"].get<std::vector<int>>();
    if (j.contains("bar_lengths")) s.bar_lengths = j["bar_lengths"].get<std::vector<int>>();
    if (j.contains("bar_width")) s.shared.bar_width = j["bar_width"].get<int>();
    if (j.contains("n_trials_per_class")) s.shared.n_trials_per_class = j["n_trials_per_class"].get<int>();
    if (j.contains("complementary_target"))
      s.shared.complementary_target = j["complementary_target"].get<bool>();
    if (j.contains("target_color")) s.shared.target_color = parse_color(j["target_color"].get<std::string>());
    if (j.contains("target_orientation"))
      s.shared.target_orientation = parse_orientation(j["target_orientation"].get<std::string>());
    if (j.contains("map_tap")) s.shared.map_tap = parse_map_tap(j["map_tap"].get<std::string>());
    if (j.contains("center_mode"))
      s.shared.center_mode = parse_center_mode(j["center_mode"].get<std::string>());
    if (j.contains("base_seed")) s.base_seed = j["base_seed"].get<std::uint64_t>();
    if (j.contains("output")) s.output = j["output"].get<std::string>();
    if (j.contains("checkpoint_dir") && !j["checkpoint_dir"].is_null())
      s.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
    if (j.contains("jobs")) s.jobs = j["jobs"].get<int>();
    if (j.contains("backend")) s.backend = j["backend"].get<std::string>();
    if (j.contains("model_manifest") && !j["model_manifest"].is_null())
      s.model_manifest = j["model_manifest"].get<std::string>();
    if (j.contains("canvas")) s.shared.canvas = canvas_from_json(j["canvas"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid sweep config: {}", e.what()));
  }
  return s;
}

nlohmann::json to_json(const SweepConfig& s) {
  nlohmann::json conds = nlohmann::json::array();
  for (auto c : s.conditions) conds.push_back(to_string(c));
  return {{"conditions", conds},
          {"set_sizes", s.set_sizes},
          {"bar_lengths", s.bar_lengths},
          {"bar_width", s.shared.bar_width},
          {"n_trials_per_class", s.shared.n_trials_per_class},
          {"complementary_target", s.shared.complementary_target},
          {"target_color", to_string(s.shared.target_color)},
          {"target_orientation", to_string(s.shared.target_orientation)},
          {"map_tap", to_string(s.shared.map_tap)},
          {"center_mode", to_string(s.shared.center_mode)},
          {"base_seed", s.base_seed},
          {"output", s.output.string()},
          {"checkpoint_dir", s.checkpoints().string()},
          {"backend", s.backend},
          {"model_manifest", s.model_manifest ? nlohmann::json(s.model_manifest->string()) : nlohmann::json()},
          {"canvas", canvas_json(s.shared.canvas)}};
}

std::vector<CellConfig> expand_grid(const SweepConfig& sweep, const std::string& backend_id) {
  std::vector<CellConfig> cells;
  for (auto cond : sweep.conditions)
    for (int n : sweep.set_sizes)
      for (int len : sweep.bar_lengths) {
        CellConfig c = sweep.shared;
        c.condition = cond;
        c.set_size = n;
        c.bar_length = len;
        c.backend_id = backend_id;
        c.base_seed = derive_cell_seed(sweep.base_seed, cond, n, len, c.bar_width);
        cells.push_back(std::move(c));
      }
  return cells;
}

namespace {

template <typename E>
[[noreturn]] void rethrow_with_cell(const E& e, const CellConfig& cell) {
  throw E(fmt::format("cell {}: {}", cell.key(), e.what()));
}

CellResult run_cell_tagged(const CellConfig& cell, const FeatureBackend& backend) {
  try {
    return run_cell(cell, backend);
  } catch (const IntegrityError& e) {
    rethrow_with_cell(e, cell);
  } catch (const BackendError& e) {
    rethrow_with_cell(e, cell);
  } catch (const ConfigError& e) {
    rethrow_with_cell(e, cell);
  } catch (const InputError& e) {
    rethrow_with_cell(e, cell);
  } catch (const IoError& e) {
    rethrow_with_cell(e, cell);
  } catch (const Error& e) {
    rethrow_with_cell(e, cell);
  }
}

}  // namespace

SweepResult run_sweep(const SweepConfig& sweep, const FeatureBackend& backend,
                      const SweepOptions& options) {
  sweep.validate();
  ensure_writable(sweep.output);
  const fs::path ckdir = sweep.checkpoints();
  {
    std::error_code ec;
    fs::create_directories(ckdir, ec);
    if (ec || !fs::is_directory(ckdir))
      throw IoError(fmt::format("checkpoint directory '{}' cannot be created", ckdir.string()));
  }

  const auto cells = expand_grid(sweep, backend.id());
  for (const auto& c : cells) c.validate();

  std::vector<std::optional<CellResult>> results(cells.size());
  std::vector<std::size_t> pending;
  std::size_t done = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const fs::path file = ckdir / (cells[i].key() + ".json");
    if (fs::exists(file)) {
      try {
        std::ifstream in(file);
        nlohmann::json j;
        in >> j;
        auto r = cell_result_from_json(j);
        if (to_json(r.cell) == to_json(cells[i])) {
          results[i] = std::move(r);
          ++done;
          if (options.progress) options.progress(*results[i], done, cells.size(), true);
          continue;
        }
      } catch (const nlohmann::json::exception&) {
        // Unreadable checkpoint: recompute the cell.
      } catch (const ConfigError&) {
      }
    }
    pending.push_back(i);
  }

  const std::size_t budget = std::min(options.max_new_cells, pending.size());
  unsigned workers = sweep.jobs > 0 ? static_cast<unsigned>(sweep.jobs) : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(budget, 1))));

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= budget) return;
      const std::size_t idx = pending[slot];
      try {
        CellResult r = run_cell_tagged(cells[idx], backend);
        write_json_atomic(ckdir / (cells[idx].key() + ".json"), to_json(r));
        std::lock_guard lock(mu);
        results[idx] = std::move(r);
        ++done;
        if (options.progress) options.progress(*results[idx], done, cells.size(), false);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
        failed = true;
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  SweepResult out;
  for (auto& r : results)
    if (r) out.cells.push_back(std::move(*r));
  out.complete = out.cells.size() == cells.size();
  if (out.complete) {
    SweepTable rows;
    for (const auto& r : out.cells) rows.push_back(to_row(r));
    write_text_atomic(sweep.output, results_csv(rows));
    fs::path sidecar = sweep.output;
    sidecar += ".provenance.json";
    nlohmann::json prov = provenance_block(to_json(sweep));
    prov["backend_id"] = backend.id();
    nlohmann::json seeds = nlohmann::json::object();
    for (const auto& c : cells) seeds[c.key()] = c.base_seed;
    prov["cell_seeds"] = seeds;
    write_json_atomic(sidecar, prov);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

ResultRow to_row(const CellResult& r) {
  ResultRow row;
  row.condition = r.cell.condition;
  row.set_size = r.cell.set_size;
  row.bar_length = r.cell.bar_length;
  row.n_trials = 2 * r.cell.n_trials_per_class;
  row.base_seed = r.cell.base_seed;
  row.backend = r.cell.backend_id;
  row.map_tap = to_string(r.cell.map_tap);
  row.center_mode = to_string(r.cell.center_mode);
  row.criterion = r.criterion.threshold;
  row.pc = r.pc;
  row.pc_gauss = r.pc_gauss;
  row.dprime = r.dprime;
  row.run_id = r.run_id;
  return row;
}

namespace {

std::string opt_num(const std::optional<double>& v) {
  return v ? fmt::format("{:.10g}", *v) : std::string{};
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

template <typename T>
T parse_number(const std::string& s, std::size_t line, const char* field) {
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_same_v<T, double>)
      v = std::stod(s, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>)
      v = std::stoull(s, &used);
    else
      v = static_cast<T>(std::stoll(s, &used));
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(fmt::format("field {} has invalid value '{}'", field, s), line);
  }
}

}  // namespace

std::string results_csv(const SweepTable& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{},{},{},{:.10g},{:.10g},{},{},{}\n", to_string(r.condition),
                       r.set_size, r.bar_length, r.n_trials, r.base_seed, r.backend, r.map_tap,
                       r.center_mode, r.criterion, r.pc, opt_num(r.pc_gauss), opt_num(r.dprime),
                       r.run_id);
  return out;
}

SweepTable parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("results CSV is empty", 1);
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw ParseError("unexpected results CSV header", lineno);
  SweepTable rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv(line);
    if (f.size() != 13) throw ParseError(fmt::format("expected 13 fields, got {}", f.size()), lineno);
    ResultRow r;
    try {
      r.condition = parse_condition(f[0]);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
    r.set_size = parse_number<int>(f[1], lineno, "set_size");
    r.bar_length = parse_number<int>(f[2], lineno, "bar_length");
    r.n_trials = parse_number<int>(f[3], lineno, "n_trials");
    r.base_seed = parse_number<std::uint64_t>(f[4], lineno, "base_seed");
    r.backend = f[5];
    r.map_tap = f[6];
    r.center_mode = f[7];
    r.criterion = parse_number<double>(f[8], lineno, "criterion");
    r.pc = parse_number<double>(f[9], lineno, "pc");
    if (!(r.pc >= 0.0 && r.pc <= 1.0)) throw ParseError("pc outside [0, 1]", lineno);
    if (!f[10].empty()) r.pc_gauss = parse_number<double>(f[10], lineno, "pc_gauss");
    if (!f[11].empty()) r.dprime = parse_number<double>(f[11], lineno, "dprime");
    r.run_id = f[12];
    rows.push_back(std::move(r));
  }
  return rows;
}

SweepTable read_results_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open results CSV '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_results_csv(ss.str());
}

}  // namespace vsearch
