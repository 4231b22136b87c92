// vsearch: stimulus rendering, feature extraction, sweeps and reports.
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error,
// 3 failed checks under --strict.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "vsearch/backend.hpp"
#include "vsearch/detector.hpp"
#include "vsearch/experiment.hpp"
#include "vsearch/onnx_backend.hpp"
#include "vsearch/png_io.hpp"
#include "vsearch/provenance.hpp"
#include "vsearch/report.hpp"
#include "vsearch/stimgen.hpp"

namespace fs = std::filesystem;
using namespace vsearch;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitStrict = 3;

struct UsageError : Error {
  using Error::Error;
};

std::unique_ptr<FeatureBackend> make_backend(const std::string& name,
                                             const std::optional<fs::path>& manifest_flag) {
  if (name == "mock") return std::make_unique<MockBackend>();
  if (name == "onnx" || name == "cnn") {
    auto manifest = resolve_manifest(manifest_flag);
    if (!manifest)
      throw BackendError(fmt::format(
          "no CNN model configured: pass --manifest <manifest.json> or set {} to the exported "
          "model (or its manifest)",
          kModelPathEnv));
    return std::make_unique<OnnxBackend>(std::move(*manifest));
  }
  throw UsageError(fmt::format("unknown backend '{}' (expected mock|onnx)", name));
}

fs::path sidecar(const fs::path& p, const char* suffix) {
  fs::path s = p;
  s += suffix;
  return s;
}

std::string grid_csv(const AttentionMap& map) {
  std::string out;
  for (Eigen::Index y = 0; y < map.rows(); ++y) {
    for (Eigen::Index x = 0; x < map.cols(); ++x)
      out += fmt::format("{}{:.9g}", x ? "," : "", map(y, x));
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

struct RenderArgs {
  std::string condition = "conjunction";
  int set_size = 16;
  int bar_length = 10;
  int bar_width = 3;
  bool present = false;
  bool absent = false;
  bool no_complement = false;
  bool probe = false;
  std::string target_color = "red";
  std::string target_orientation = "horizontal";
  std::uint64_t seed = 0;
  std::string out = "display.png";
  std::string manifest_out;
};

int cmd_render(const RenderArgs& a) {
  if (a.present && a.absent) throw UsageError("--present and --absent are mutually exclusive");
  StimulusSpec spec;
  try {
    spec.condition = parse_condition(a.condition);
    spec.bar = BarSpec{parse_color(a.target_color), parse_orientation(a.target_orientation),
                       a.bar_length, a.bar_width};
    spec.set_size = a.set_size;
    spec.target_present = a.present;
    spec.complementary_target = !a.no_complement;
    spec.seed = a.seed;
    spec.canvas.validate(spec.bar);
    if (spec.set_size < 1 || spec.set_size > spec.canvas.capacity())
      throw ConfigError(fmt::format("--set-size {} out of range: display holds 1 to {} items",
                                    spec.set_size, spec.canvas.capacity()));
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  nlohmann::json effective = {{"subcommand", "render"},
                              {"condition", a.condition},
                              {"set_size", a.set_size},
                              {"bar_length", a.bar_length},
                              {"bar_width", a.bar_width},
                              {"present", a.present},
                              {"complementary_target", !a.no_complement},
                              {"target_color", a.target_color},
                              {"target_orientation", a.target_orientation},
                              {"seed", a.seed},
                              {"probe", a.probe}};
  const fs::path out(a.out);
  const fs::path manifest_path = a.manifest_out.empty() ? fs::path(out).replace_extension(".json")
                                                        : fs::path(a.manifest_out);
  ensure_writable(out);
  ensure_writable(manifest_path);

  nlohmann::json manifest;
  if (a.probe) {
    write_png(out, render_target_probe(spec.bar, spec.canvas));
    manifest = {{"probe", {{"color", a.target_color},
                           {"orientation", a.target_orientation},
                           {"length", a.bar_length},
                           {"width", a.bar_width}}}};
  } else {
    ItemList items;
    try {
      items = generate_items(spec);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    write_png(out, render(items, spec.canvas));
    manifest = to_json(items, spec.condition);
  }
  manifest["provenance"] = provenance_block(effective);
  write_json_atomic(manifest_path, manifest);
  std::cout << fmt::format("wrote {} and {}\n", out.string(), manifest_path.string());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string backend = "mock";
  std::string manifest;
  std::string probe;
  std::string search;
  std::string map_out;
  std::string template_out;
  std::string map_tap = "pre";
  std::string center_mode = "center_2x2_mean";
  std::string target_color = "red";
  std::string target_orientation = "horizontal";
  int bar_length = 10;
  int bar_width = 3;
};

int cmd_extract(const ExtractArgs& a) {
  if (a.map_out.empty() && a.template_out.empty())
    throw UsageError("nothing to do: pass --map-out and/or --template-out");
  if (!a.map_out.empty() && a.search.empty()) throw UsageError("--map-out needs --search");
  MapTap tap;
  CenterMode mode;
  BarSpec bar;
  try {
    tap = parse_map_tap(a.map_tap);
    mode = parse_center_mode(a.center_mode);
    bar = BarSpec{parse_color(a.target_color), parse_orientation(a.target_orientation), a.bar_length,
                  a.bar_width};
    bar.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  std::optional<fs::path> manifest_flag;
  if (!a.manifest.empty()) manifest_flag = a.manifest;
  const auto backend = make_backend(a.backend, manifest_flag);

  // Load inputs before running the network so bad paths fail fast.
  const Image probe = a.probe.empty() ? render_target_probe(bar, CanvasSpec{}) : read_png(a.probe);
  std::optional<Image> search;
  if (!a.search.empty()) search = read_png(a.search);

  const TargetTemplate tmpl = target_template(backend->extract(probe), mode, backend->id());
  nlohmann::json effective = {{"subcommand", "extract"},
                              {"backend", backend->id()},
                              {"probe", a.probe.empty() ? nlohmann::json("rendered") : nlohmann::json(a.probe)},
                              {"search", a.search},
                              {"map_tap", a.map_tap},
                              {"center_mode", a.center_mode}};
  if (a.probe.empty())
    effective["probe_bar"] = {{"color", a.target_color},
                              {"orientation", a.target_orientation},
                              {"length", a.bar_length},
                              {"width", a.bar_width}};

  if (!a.template_out.empty()) {
    std::string text;
    for (Eigen::Index i = 0; i < tmpl.values.size(); ++i)
      text += fmt::format("{:.9g}\n", tmpl.values[i]);
    ensure_writable(a.template_out);
    write_text_atomic(a.template_out, text);
    write_json_atomic(sidecar(a.template_out, ".provenance.json"), provenance_block(effective));
    std::cout << fmt::format("wrote {} ({} channels)\n", a.template_out, tmpl.values.size());
  }
  if (!a.map_out.empty()) {
    const AttentionMap map = attention_map(tmpl, backend->extract(*search), tap);
    ensure_writable(a.map_out);
    write_text_atomic(a.map_out, grid_csv(map));
    write_json_atomic(sidecar(a.map_out, ".provenance.json"), provenance_block(effective));
    std::cout << fmt::format("wrote {} ({}x{} map, max {:.6g})\n", a.map_out, map.rows(), map.cols(),
                             map_max(map));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::string backend;
  std::string manifest;
  std::string output;
  bool ci = false;
  int jobs = -1;
  int trials = -1;
  std::int64_t seed = -1;
  std::size_t max_cells = 0;
  bool quiet = false;
};

int cmd_run(const RunArgs& a) {
  SweepConfig sweep;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw IoError(fmt::format("cannot open config '{}'", a.config));
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(fmt::format("config '{}' is not valid JSON: {}", a.config, e.what()));
    }
    try {
      sweep = sweep_config_from_json(j);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  if (!a.backend.empty()) sweep.backend = a.backend;
  if (!a.manifest.empty()) sweep.model_manifest = a.manifest;
  if (!a.output.empty()) {
    sweep.output = a.output;
    sweep.checkpoint_dir.reset();
  }
  if (a.ci) sweep.shared.n_trials_per_class = 100;
  if (a.trials > 0) sweep.shared.n_trials_per_class = a.trials;
  if (a.jobs >= 0) sweep.jobs = a.jobs;
  if (a.seed >= 0) sweep.base_seed = static_cast<std::uint64_t>(a.seed);
  try {
    sweep.validate();
    for (const auto& c : expand_grid(sweep, sweep.backend)) c.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  // Fail before any cell starts when the backend is unavailable.
  const auto backend = make_backend(sweep.backend, sweep.model_manifest);

  SweepOptions options;
  if (a.max_cells > 0) options.max_new_cells = a.max_cells;
  if (!a.quiet)
    options.progress = [](const CellResult& r, std::size_t done, std::size_t total, bool resumed) {
      std::cerr << fmt::format("[{:>3}/{}] {:<28} pc={:.3f} criterion={:.6g}{}\n", done, total,
                               r.cell.key(), r.pc, r.criterion.threshold, resumed ? " (checkpoint)" : "");
    };
  const SweepResult result = run_sweep(sweep, *backend, options);
  if (!result.complete) {
    std::cerr << fmt::format("sweep stopped with {} cells finished; rerun to resume from {}\n",
                             result.cells.size(), sweep.checkpoints().string());
    return kExitRuntime;
  }
  std::cout << fmt::format("wrote {} ({} cells)\n", sweep.output.string(), result.cells.size());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string results;
  std::string out_dir = "report";
  std::string human;
  bool strict = false;
  std::vector<std::string> checks;
  int far_set_size = 0;
};

int cmd_report(const ReportArgs& a) {
  const SweepTable table = read_results_csv(a.results);
  const auto curves = build_curves(table);
  std::optional<HumanReference> human;
  if (!a.human.empty()) human = ingest_human_reference(a.human);

  CheckThresholds thresholds;
  if (a.far_set_size > 0) thresholds.far_from_perfect_set_size = a.far_set_size;
  const CheckReport report = qualitative_checks(table, thresholds);
  for (const auto& name : a.checks)
    if (!report.checks.count(name)) throw UsageError(fmt::format("unknown check '{}'", name));

  nlohmann::json effective = {{"subcommand", "report"},
                              {"results", a.results},
                              {"human", a.human},
                              {"strict", a.strict},
                              {"checks", a.checks}};
  const auto provenance = provenance_block(effective);
  const auto plots = emit_plots(curves, human, a.out_dir, provenance);

  nlohmann::json out = {{"checks", to_json(report)}, {"provenance", provenance}};
  bool requested_pass = true;
  for (const auto& [name, c] : report.checks) {
    const bool requested =
        a.checks.empty() || std::find(a.checks.begin(), a.checks.end(), name) != a.checks.end();
    if (requested && !c.pass) requested_pass = false;
    std::cout << fmt::format("{:<20} {} margin={:+.4f} tolerance={}{}\n", name,
                             c.pass ? "PASS" : "FAIL", c.margin, c.tolerance, requested ? "" : " (not requested)");
  }
  write_json_atomic(fs::path(a.out_dir) / "checks.json", out);
  for (const auto& p : plots) std::cout << "wrote " << p.string() << "\n";
  return a.strict && !requested_pass ? kExitStrict : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual search simulations with template-matching attention maps"};
  app.require_subcommand(1);

  RenderArgs ra;
  auto* render_cmd = app.add_subcommand("render", "Render a search display (PNG + JSON manifest)");
  render_cmd->add_option("--condition", ra.condition, "feature | conjunction");
  render_cmd->add_option("--set-size", ra.set_size, "Number of items");
  render_cmd->add_option("--bar-length", ra.bar_length, "Bar length in pixels");
  render_cmd->add_option("--bar-width", ra.bar_width, "Bar width in pixels");
  render_cmd->add_flag("--present", ra.present, "Include the target");
  render_cmd->add_flag("--absent", ra.absent, "Target absent (default)");
  render_cmd->add_flag("--no-complement", ra.no_complement, "Omit the complementary target");
  render_cmd->add_flag("--probe", ra.probe, "Render the centered target probe instead");
  render_cmd->add_option("--target-color", ra.target_color, "red | green");
  render_cmd->add_option("--target-orientation", ra.target_orientation, "horizontal | vertical");
  render_cmd->add_option("--seed", ra.seed, "Display seed");
  render_cmd->add_option("-o,--out", ra.out, "Output PNG");
  render_cmd->add_option("--manifest-out", ra.manifest_out, "Item manifest (default: <out>.json)");

  ExtractArgs ea;
  auto* extract_cmd = app.add_subcommand("extract", "Write a target template and/or attention map");
  extract_cmd->add_option("--backend", ea.backend, "mock | onnx");
  extract_cmd->add_option("--manifest", ea.manifest, "Model manifest JSON (onnx backend)");
  extract_cmd->add_option("--probe", ea.probe, "Probe PNG (default: rendered target probe)");
  extract_cmd->add_option("--search", ea.search, "Search display PNG");
  extract_cmd->add_option("--map-out", ea.map_out, "Attention map CSV (H rows x W columns)");
  extract_cmd->add_option("--template-out", ea.template_out, "Template vector CSV (one value per line)");
  extract_cmd->add_option("--map-tap", ea.map_tap, "pre | post");
  extract_cmd->add_option("--center-mode", ea.center_mode, "single_cell | center_2x2_mean");
  extract_cmd->add_option("--target-color", ea.target_color, "Rendered probe color");
  extract_cmd->add_option("--target-orientation", ea.target_orientation, "Rendered probe orientation");
  extract_cmd->add_option("--bar-length", ea.bar_length, "Rendered probe length");
  extract_cmd->add_option("--bar-width", ea.bar_width, "Rendered probe width");

  RunArgs rn;
  auto* run_cmd = app.add_subcommand("run", "Run a sweep with per-cell checkpoints");
  run_cmd->add_option("-c,--config", rn.config, "Sweep config (JSON)");
  run_cmd->add_option("--backend", rn.backend, "mock | onnx (overrides config)");
  run_cmd->add_option("--manifest", rn.manifest, "Model manifest JSON");
  run_cmd->add_option("-o,--output", rn.output, "Results CSV (overrides config)");
  run_cmd->add_flag("--ci", rn.ci, "100 trials per class");
  run_cmd->add_option("-j,--jobs", rn.jobs, "Parallel cells (0: all cores)");
  run_cmd->add_option("--trials", rn.trials, "Trials per class per run");
  run_cmd->add_option("--seed", rn.seed, "Sweep base seed");
  run_cmd->add_option("--max-cells", rn.max_cells, "Stop after computing this many cells")->group("");
  run_cmd->add_flag("-q,--quiet", rn.quiet, "No per-cell progress");

  ReportArgs rp;
  auto* report_cmd = app.add_subcommand("report", "Plots and qualitative checks from a results CSV");
  report_cmd->add_option("results", rp.results, "Results CSV")->required();
  report_cmd->add_option("-o,--out-dir", rp.out_dir, "Output directory");
  report_cmd->add_option("--human", rp.human, "Human reference CSV (condition,set_size,bar_length,pc)");
  report_cmd->add_flag("--strict", rp.strict, "Exit 3 when a requested check fails");
  report_cmd->add_option("--checks", rp.checks, "Checks to enforce (default: all)")->delimiter(',');
  report_cmd->add_option("--far-set-size", rp.far_set_size, "Set size for far_from_perfect (default: largest)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*render_cmd) return cmd_render(ra);
    if (*extract_cmd) return cmd_extract(ea);
    if (*run_cmd) return cmd_run(rn);
    if (*report_cmd) return cmd_report(rp);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
