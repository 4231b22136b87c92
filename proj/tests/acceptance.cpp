// Acceptance run: one PASS/FAIL/SKIP line per criterion; non-zero exit
// when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <unordered_set>

#include <fmt/format.h>

#include "test_support.hpp"
#include "vsearch/detector.hpp"
#include "vsearch/experiment.hpp"
#include "vsearch/onnx_backend.hpp"
#include "vsearch/report.hpp"

using namespace vsearch;
using namespace vsearch::testing;
namespace fs = std::filesystem;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::fail;
  std::string detail;
};

Outcome pass(std::string d) { return {Verdict::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Verdict::fail, std::move(d)}; }

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome math_core() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(515);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const int c = 1 + static_cast<int>(gen() % 8), h = 1 + static_cast<int>(gen() % 4),
              w = 1 + static_cast<int>(gen() % 4);
    FeatureStackT<double> s(c, h, w);
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < h * w; ++j) {
        s.pre(i, j) = u(gen);
        s.post(i, j) = std::max(0.0, s.pre(i, j));
      }
    TargetTemplateT<double> t;
    t.values.resize(c);
    for (int i = 0; i < c; ++i) t.values(i) = u(gen);
    const auto map = attention_map(t, s, MapTap::pre);
    double linear_max = -1e300;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double dot = 0;
        for (int i = 0; i < c; ++i) dot += t.values(i) * s.pre_at(i, y, x);
        if (std::abs(map(y, x) - dot) > 1e-6) return fail(fmt::format("attention map off at stack {}", rep));
        linear_max = std::max(linear_max, map(y, x));
      }
    if (map_max(map) != linear_max) return fail(fmt::format("map_max differs from linear scan at stack {}", rep));
  }
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> p(2 + gen() % 40), a(2 + gen() % 40);
    const double shift = u(gen);
    for (auto& v : p) v = u(gen) + shift;
    for (auto& v : a) v = u(gen);
    if (rep % 4 == 0)
      for (auto& v : p) v = std::round(v * 4) / 4;  // ties
    const auto c = calibrate_criterion(p, a);
    for (int k = 0; k <= 4000; ++k) {
      const double thr = -3.0 + 6.0 * k / 4000.0;
      if (proportion_correct(p, a, thr) > c.calibrated_pc + 1e-12)
        return fail(fmt::format("grid threshold {} beats calibration on set {}", thr, rep));
    }
  }
  const double dt = seconds_since(t0);
  if (dt >= 10.0) return fail(fmt::format("took {:.1f} s (limit 10 s)", dt));
  return pass(fmt::format("200 stacks, 200 statistic sets, {:.2f} s", dt));
}

Outcome stimulus_suite() {
  const auto t0 = Clock::now();
  const CanvasSpec canvas;
  std::size_t displays = 0;
  for (auto cond : {Condition::feature, Condition::conjunction})
    for (bool present : {true, false})
      for (std::uint64_t s = 0; s < 1000; ++s) {
        StimulusSpec spec;
        spec.condition = cond;
        spec.target_present = present;
        spec.set_size = 2 + static_cast<int>(s % 23);
        spec.bar = BarSpec{BarColor::red, Orientation::horizontal, 4 + static_cast<int>(s % 14), 3};
        spec.seed = mix64(s) ^ (present ? 1u : 0u);
        const auto items = generate_items(spec);
        const auto img = render(items, canvas);
        if (auto v = composition_violation(spec, items); !v.empty())
          return fail(fmt::format("{} seed {}: {}", to_string(cond), spec.seed, v));
        if (auto v = raster_violation(items, canvas, img); !v.empty())
          return fail(fmt::format("{} seed {}: {}", to_string(cond), spec.seed, v));
        if (!(render(generate_items(spec), canvas) == img))
          return fail(fmt::format("re-render differs for seed {}", spec.seed));
        ++displays;
      }
  const double dt = seconds_since(t0);
  if (dt >= 60.0) return fail(fmt::format("took {:.1f} s (limit 60 s)", dt));
  return pass(fmt::format("{} displays, {:.1f} s", displays, dt));
}

Outcome mock_end_to_end() {
  const auto t0 = Clock::now();
  const MockBackend mock;
  double worst = 2.0;
  std::string worst_cell;
  for (int n : {2, 4, 8, 16, 24})
    for (int len : {8, 10, 13, 17}) {
      CellConfig c;
      c.condition = Condition::feature;
      c.set_size = n;
      c.bar_length = len;
      c.n_trials_per_class = 100;
      c.backend_id = mock.id();
      c.base_seed = derive_cell_seed(20190101, c.condition, n, len, c.bar_width);
      const auto r = run_cell(c, mock);
      if (r.pc < worst) {
        worst = r.pc;
        worst_cell = c.key();
      }
    }
  CellConfig d;
  d.condition = Condition::feature;
  d.set_size = 8;
  d.bar_length = 10;
  d.n_trials_per_class = 500;
  d.feature_distractor = d.target_bar();
  d.backend_id = mock.id();
  d.base_seed = 777;
  const double degenerate = run_cell(d, mock).pc;
  const double dt = seconds_since(t0);
  const std::string detail = fmt::format("min feature pc {:.3f} ({}), degenerate pc {:.3f}, {:.1f} s", worst,
                                         worst_cell, degenerate, dt);
  if (worst < 0.95 || std::abs(degenerate - 0.5) > 0.05 || dt >= 300.0) return fail(detail);
  return pass(detail);
}

Outcome double_run() {
  const auto t0 = Clock::now();
  const MockBackend mock;
  double sum_cal = 0, sum_eval = 0, sum_sq = 0;
  for (int rep = 0; rep < 20; ++rep) {
    CellConfig c;
    c.condition = Condition::conjunction;
    c.set_size = 8;
    c.bar_length = 6;
    c.n_trials_per_class = 500;
    c.backend_id = mock.id();
    c.base_seed = 9000 + static_cast<std::uint64_t>(rep);
    const auto r = run_cell(c, mock);
    sum_cal += r.criterion.calibrated_pc;
    sum_eval += r.pc;
    sum_sq += (r.criterion.calibrated_pc - r.pc) * (r.criterion.calibrated_pc - r.pc);
    std::unordered_set<std::uint64_t> run1;
    for (auto label : {TrialClass::present, TrialClass::absent})
      for (std::uint64_t i = 0; i < 500; ++i) run1.insert(derive_trial_seed(c.base_seed, 1, label, i));
    for (auto label : {TrialClass::present, TrialClass::absent})
      for (std::uint64_t i = 0; i < 500; ++i)
        if (run1.count(derive_trial_seed(c.base_seed, 2, label, i)))
          return fail(fmt::format("run 2 reuses a run-1 seed in replicate {}", rep));
  }
  const double mc = sum_cal / 20, me = sum_eval / 20, dt = seconds_since(t0);
  // Paired standard error of the run-1 minus run-2 gap, for reading a miss.
  const double gap = mc - me;
  const double se = std::sqrt(std::max(0.0, sum_sq / 20 - gap * gap) / 19.0);
  const std::string detail = fmt::format("mean run-1 pc {:.4f}, mean run-2 pc {:.4f}, gap {:+.4f} (se {:.4f}), {:.1f} s",
                                         mc, me, gap, se, dt);
  if (mc < me || dt >= 120.0) return fail(detail);
  return pass(detail);
}

Outcome cnn_reproduction() {
  const char* env = std::getenv(kModelPathEnv);
  if (env == nullptr || *env == '\0')
    return {Verdict::skip, fmt::format("{} is not set; no CNN model file available", kModelPathEnv)};
  const auto t0 = Clock::now();
  const auto manifest = resolve_manifest(std::nullopt);
  const OnnxBackend backend(*manifest);
  TempDir dir("acceptance-cnn");
  SweepConfig sweep;
  sweep.backend = "onnx";
  sweep.output = dir / "cnn.csv";
  sweep.shared.n_trials_per_class = 500;
  SweepOptions opts;
  opts.progress = [](const CellResult& r, std::size_t done, std::size_t total, bool) {
    std::cerr << fmt::format("  cnn [{}/{}] {} pc={:.3f}\n", done, total, r.cell.key(), r.pc);
  };
  run_sweep(sweep, backend, opts);
  CheckThresholds t;
  t.far_from_perfect_set_size = 16;
  const auto report = qualitative_checks(read_results_csv(sweep.output), t);
  std::string detail;
  bool ok = true;
  for (const char* name : {"conjunction_harder", "set_size_effect", "far_from_perfect", "psychometric_shape"}) {
    const auto& c = report.checks.at(name);
    ok = ok && c.pass;
    detail += fmt::format("{}={} ({:+.3f}) ", name, c.pass ? "ok" : "no", c.margin);
  }
  detail += fmt::format("{:.0f} s", seconds_since(t0));
  return ok ? pass(detail) : fail(detail);
}

Outcome determinism() {
  const auto t0 = Clock::now();
  const MockBackend mock;
  TempDir dir("acceptance-det");
  auto sweep_at = [&](const std::string& name) {
    SweepConfig s;
    s.shared.n_trials_per_class = 100;
    s.output = dir / name;
    return s;
  };
  run_sweep(sweep_at("a.csv"), mock);
  run_sweep(sweep_at("b.csv"), mock);
  SweepOptions stop;
  stop.max_new_cells = 23;
  const auto partial = run_sweep(sweep_at("c.csv"), mock, stop);
  if (partial.complete) return fail("interruption did not stop the sweep");
  run_sweep(sweep_at("c.csv"), mock);
  const auto a = slurp(dir / "a.csv"), b = slurp(dir / "b.csv"), c = slurp(dir / "c.csv");
  const std::string detail =
      fmt::format("60-cell sweep at 100 trials/class, {} bytes, {:.1f} s", a.size(), seconds_since(t0));
  if (a.empty() || a != b) return fail("repeat run differs: " + detail);
  if (a != c) return fail("resumed run differs: " + detail);
  return pass(detail);
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"math-core oracle suite", math_core},
      {"stimulus suite", stimulus_suite},
      {"mock-backend end-to-end", mock_end_to_end},
      {"double-run protocol", double_run},
      {"CNN qualitative reproduction", cnn_reproduction},
      {"determinism", determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(fmt::format("exception: {}", e.what()));
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::skip ? "SKIP" : "FAIL";
    failures += o.verdict == Verdict::fail;
    std::cout << fmt::format("{} {}: {}", tag, c.name, o.detail) << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
