#include "vsearch/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "vsearch/provenance.hpp"

namespace vsearch {

namespace fs = std::filesystem;

std::vector<PsychometricCurve> build_curves(const SweepTable& table) {
  if (table.empty()) throw DataError("cannot build curves from an empty table");
  std::map<std::tuple<int, int, int>, const ResultRow*> cells;
  std::vector<std::string> duplicates;
  for (const auto& r : table) {
    const auto key = std::make_tuple(int(r.condition), r.set_size, r.bar_length);
    if (!cells.emplace(key, &r).second)
      duplicates.push_back(fmt::format("{}/{}/{}", to_string(r.condition), r.set_size, r.bar_length));
  }
  if (!duplicates.empty())
    throw DataError(fmt::format("duplicate cells in results table: {}", fmt::join(duplicates, ", ")));

  std::vector<PsychometricCurve> curves;
  for (const auto& [key, row] : cells) {
    const auto [cond, n, len] = key;
    if (curves.empty() || int(curves.back().condition) != cond || curves.back().set_size != n) {
      curves.push_back({});
      curves.back().condition = row->condition;
      curves.back().set_size = n;
    }
    curves.back().points.push_back({len, row->pc});
    curves.back().n_trials.push_back(row->n_trials);
  }
  return curves;
}

// ---------------------------------------------------------------------------
// Human reference

HumanReference parse_human_reference(const std::string& text, std::string provenance) {
  HumanReference ref;
  ref.provenance = std::move(provenance);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto strip = [](std::string& s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  };
  if (!std::getline(in, line)) throw ParseError("human reference file is empty", 1);
  ++lineno;
  strip(line);
  if (line != "condition,set_size,bar_length,pc")
    throw ParseError("expected header condition,set_size,bar_length,pc", lineno);
  while (std::getline(in, line)) {
    ++lineno;
    strip(line);
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) throw ParseError(fmt::format("expected 4 fields, got {}", f.size()), lineno);
    HumanRow row;
    try {
      row.condition = parse_condition(f[0]);
      std::size_t used = 0;
      row.set_size = std::stoi(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument(f[1]);
      row.bar_length = std::stoi(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
      row.pc = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument(f[3]);
    } catch (const std::exception&) {
      throw ParseError(fmt::format("malformed row '{}'", line), lineno);
    }
    if (!(row.pc >= 0.0 && row.pc <= 1.0))
      throw ParseError(fmt::format("pc {} outside [0, 1]", f[3]), lineno);
    ref.rows.push_back(row);
  }
  return ref;
}

HumanReference ingest_human_reference(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open human reference '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_human_reference(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Checks

bool CheckReport::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& kv) { return kv.second.pass; });
}

nlohmann::json to_json(const CheckReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, c] : report.checks)
    j[name] = {{"pass", c.pass},
               {"margin", c.margin},
               {"tolerance", c.tolerance},
               {"description", c.description},
               {"inputs", c.inputs}};
  return j;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("spearman needs equally long inputs");
  if (a.size() < 2) return std::nan("");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nan("");
  return sab / std::sqrt(saa * sbb);
}

CheckReport qualitative_checks(const SweepTable& table, const CheckThresholds& t) {
  std::map<std::tuple<int, int, int>, double> pc;
  std::set<int> set_sizes, lengths;
  std::set<int> conditions;
  for (const auto& r : table) {
    if (!pc.emplace(std::make_tuple(int(r.condition), r.set_size, r.bar_length), r.pc).second)
      throw DataError(fmt::format("duplicate cell {}/{}/{}", to_string(r.condition), r.set_size,
                                  r.bar_length));
    set_sizes.insert(r.set_size);
    lengths.insert(r.bar_length);
    conditions.insert(int(r.condition));
  }
  if (conditions.size() != 2 || set_sizes.size() < 2 || lengths.size() < 3)
    throw DataError(fmt::format(
        "qualitative checks need both conditions, >= 2 set sizes and >= 3 bar lengths "
        "(got {} condition(s), {} set size(s), {} length(s))",
        conditions.size(), set_sizes.size(), lengths.size()));
  std::vector<std::string> missing;
  for (int c : {int(Condition::feature), int(Condition::conjunction)})
    for (int n : set_sizes)
      for (int len : lengths)
        if (!pc.count({c, n, len}))
          missing.push_back(fmt::format("{}/{}/{}", to_string(Condition(c)), n, len));
  if (!missing.empty())
    throw DataError(fmt::format("results table is missing grid points: {}", fmt::join(missing, ", ")));

  const int F = int(Condition::feature);
  const int C = int(Condition::conjunction);
  const int longest = *lengths.rbegin();
  const int largest = *set_sizes.rbegin();
  CheckReport report;

  {
    double sum = 0.0;
    for (int n : set_sizes)
      for (int len : lengths) sum += pc[{F, n, len}] - pc[{C, n, len}];
    const double gap = sum / static_cast<double>(set_sizes.size() * lengths.size());
    report.checks["conjunction_harder"] = {
        gap >= t.conjunction_gap, gap - t.conjunction_gap, t.conjunction_gap,
        "mean feature pc minus mean conjunction pc over matched cells",
        {{"value", gap}, {"cells", set_sizes.size() * lengths.size()}}};
  }
  {
    int small = *set_sizes.begin();
    if (set_sizes.count(4))
      small = 4;
    else if (set_sizes.count(2))
      small = 2;
    const double drop = pc[{F, small, longest}] - pc[{F, largest, longest}];
    report.checks["set_size_effect"] = {
        drop >= t.set_size_drop, drop - t.set_size_drop, t.set_size_drop,
        "feature pc at a small set size minus pc at the largest set size, longest bar",
        {{"value", drop}, {"small_set_size", small}, {"large_set_size", largest},
         {"bar_length", longest}}};
  }
  {
    const int n = t.far_from_perfect_set_size.value_or(largest);
    if (!set_sizes.count(n))
      throw DataError(fmt::format("results table has no set size {} for the far-from-perfect check", n));
    const double v = pc[{F, n, longest}];
    report.checks["far_from_perfect"] = {
        v < t.far_from_perfect, t.far_from_perfect - v, t.far_from_perfect,
        "feature pc at the longest bar stays below the pop-out level",
        {{"value", v}, {"set_size", n}, {"bar_length", longest}}};
  }
  {
    std::size_t ok = 0, total = 0;
    nlohmann::json per_curve = nlohmann::json::object();
    for (int c : {F, C})
      for (int n : set_sizes) {
        std::vector<double> xs, ys;
        for (int len : lengths) {
          xs.push_back(len);
          ys.push_back(pc[{c, n, len}]);
        }
        const double rho = spearman(xs, ys);
        ++total;
        if (std::isfinite(rho) && rho >= t.spearman_min) ++ok;
        per_curve[fmt::format("{}/{}", to_string(Condition(c)), n)] =
            std::isfinite(rho) ? nlohmann::json(rho) : nlohmann::json();
      }
    const double frac = static_cast<double>(ok) / static_cast<double>(total);
    report.checks["psychometric_shape"] = {
        frac >= t.spearman_fraction, frac - t.spearman_fraction, t.spearman_fraction,
        fmt::format("share of curves with Spearman(pc, bar length) >= {}", t.spearman_min),
        {{"value", frac}, {"spearman", per_curve}}};
  }
  {
    double worst = 1.0;
    bool any = false;
    for (int n : set_sizes)
      for (int len : lengths)
        if (len >= t.popout_min_length) {
          worst = std::min(worst, pc[{F, n, len}]);
          any = true;
        }
    if (any)
      report.checks["feature_popout"] = {
          worst >= t.popout, worst - t.popout, t.popout,
          fmt::format("minimum feature pc over all set sizes at bar length >= {}", t.popout_min_length),
          {{"value", worst}}};
  }
  return report;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr double kWidth = 520, kHeight = 380;
constexpr double kLeft = 60, kRight = 130, kTop = 40, kBottom = 50;
constexpr double kYMin = 0.4, kYMax = 1.0;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(Condition condition, const std::vector<PsychometricCurve>& all_curves,
                       const std::optional<HumanReference>& human, const nlohmann::json& provenance) {
  std::vector<const PsychometricCurve*> curves;
  for (const auto& c : all_curves)
    if (c.condition == condition) curves.push_back(&c);

  int xmin = std::numeric_limits<int>::max(), xmax = std::numeric_limits<int>::min();
  for (const auto* c : curves)
    for (const auto& p : c->points) {
      xmin = std::min(xmin, p.bar_length);
      xmax = std::max(xmax, p.bar_length);
    }
  std::map<int, std::vector<const HumanRow*>> human_series;
  if (human)
    for (const auto& r : human->rows)
      if (r.condition == condition) {
        human_series[r.set_size].push_back(&r);
        xmin = std::min(xmin, r.bar_length);
        xmax = std::max(xmax, r.bar_length);
      }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (xmin == xmax) {
    --xmin;
    ++xmax;
  }

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - xmin) / double(xmax - xmin) * pw; };
  auto sy = [&](double y) { return kTop + (kYMax - y) / (kYMax - kYMin) * ph; };

  std::string svg;
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      kWidth, kHeight);
  if (!provenance.is_null())
    svg += "<metadata id=\"provenance\">" + xml_escape(provenance.dump()) + "</metadata>\n";
  svg += fmt::format("<title>{} search</title>\n", to_string(condition));
  svg += fmt::format("<defs><clipPath id=\"plot\"><rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/></clipPath></defs>\n",
                     kLeft, kTop, pw, ph);
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{} search</text>\n",
                     kLeft + pw / 2, condition == Condition::feature ? "Feature" : "Conjunction");

  // Axes and ticks.
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                     kLeft, kTop, pw, ph);
  for (int i = 0; i <= 6; ++i) {
    const double y = kYMin + 0.1 * i;
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"black\"/>"
        "<text x=\"{3}\" y=\"{4:.2f}\" text-anchor=\"end\">{5:.1f}</text>\n",
        kLeft - 4, sy(y), kLeft, kLeft - 7, sy(y) + 4, y);
  }
  const int step = std::max(1, (xmax - xmin) / 8);
  for (int x = xmin; x <= xmax; x += step)
    svg += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"black\"/>"
        "<text x=\"{0:.2f}\" y=\"{3}\" text-anchor=\"middle\">{4}</text>\n",
        sx(x), kTop + ph, kTop + ph + 4, kTop + ph + 18, x);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">bar length (px)</text>\n",
                     kLeft + pw / 2, kHeight - 12);
  svg += fmt::format(
      "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">proportion correct</text>\n",
      kTop + ph / 2);

  // Guessing line.
  svg += fmt::format(
      "<line class=\"chance\" x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"#999\" stroke-dasharray=\"2,3\"/>\n",
      kLeft, sy(0.5), kLeft + pw);

  std::map<int, std::string> colour;
  {
    std::set<int> sizes;
    for (const auto* c : curves) sizes.insert(c->set_size);
    for (const auto& [n, rows] : human_series) sizes.insert(n);
    std::size_t i = 0;
    for (int n : sizes) colour[n] = kPalette[i++ % std::size(kPalette)];
  }

  svg += "<g clip-path=\"url(#plot)\">\n";
  for (const auto* c : curves) {
    std::string pts;
    for (const auto& p : c->points) pts += fmt::format("{:.2f},{:.2f} ", sx(p.bar_length), sy(p.pc));
    if (!pts.empty()) pts.pop_back();
    svg += fmt::format(
        "<polyline class=\"model\" data-set-size=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
        c->set_size, pts, colour[c->set_size]);
    for (const auto& p : c->points)
      svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", sx(p.bar_length),
                         sy(p.pc), colour[c->set_size]);
  }
  for (auto& [n, rows] : human_series) {
    std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->bar_length < b->bar_length; });
    std::string pts;
    for (const auto* r : rows) pts += fmt::format("{:.2f},{:.2f} ", sx(r->bar_length), sy(r->pc));
    if (!pts.empty()) pts.pop_back();
    svg += fmt::format(
        "<polyline class=\"human\" data-set-size=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{}\" "
        "stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n",
        n, pts, colour[n]);
  }
  svg += "</g>\n";

  // Legend.
  double ly = kTop + 10;
  const double lx = kLeft + pw + 15;
  for (const auto& [n, col] : colour) {
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"{3}\" stroke-width=\"2\"/>"
        "<text x=\"{4}\" y=\"{5:.2f}\">set size {6}</text>\n",
        lx, ly, lx + 20, col, lx + 25, ly + 4, n);
    ly += 18;
  }
  if (!human_series.empty()) {
    svg += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"black\" stroke-dasharray=\"6,4\"/>"
        "<text x=\"{3}\" y=\"{4:.2f}\">human</text>\n",
        lx, ly, lx + 20, lx + 25, ly + 4);
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<fs::path> emit_plots(const std::vector<PsychometricCurve>& curves,
                                 const std::optional<HumanReference>& human, const fs::path& out_dir,
                                 const nlohmann::json& provenance) {
  if (curves.empty()) throw DataError("no curves to plot");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    throw IoError(fmt::format("plot directory '{}' cannot be created", out_dir.string()));

  std::vector<fs::path> written;
  for (Condition cond : {Condition::conjunction, Condition::feature}) {
    if (std::none_of(curves.begin(), curves.end(), [&](const auto& c) { return c.condition == cond; }))
      continue;
    const fs::path path = out_dir / (std::string(to_string(cond)) + ".svg");
    write_text_atomic(path, render_svg(cond, curves, human, provenance));
    written.push_back(path);
  }
  return written;
}

}  // namespace vsearch
