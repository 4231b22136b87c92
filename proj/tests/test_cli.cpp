#include <doctest.h>

#include <cstdio>
#include <sys/wait.h>

#include "test_support.hpp"
#include "vsearch/experiment.hpp"
#include "vsearch/png_io.hpp"

using namespace vsearch;
using namespace vsearch::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = VSEARCH_FIXTURES;

struct Outcome {
  int code = -1;
  std::string output;  // stdout and stderr
};

Outcome cli(const std::string& args, const std::string& env = "env -u VSEARCH_MODEL_PATH") {
  const std::string cmd = env + " '" + std::string(VSEARCH_CLI) + "' " + args + " 2>&1";
  Outcome o;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) o.output.append(buf, n);
  const int status = ::pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("render writes a reproducible PNG and manifest") {
  TempDir dir("cli-render");
  const auto a = cli("render --condition conjunction --set-size 16 --present --seed 7 -o " + q(dir / "a.png"));
  REQUIRE(a.code == 0);
  const auto b = cli("render --condition conjunction --set-size 16 --present --seed 7 -o " + q(dir / "b.png"));
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
  const auto img = read_png(dir / "a.png");
  CHECK(img.width == 224);
  CHECK(count_components(img, Rgb{128, 128, 128}) == 16);
  const auto j = nlohmann::json::parse(slurp(dir / "a.json"));
  CHECK(j.at("items").size() == 16);
  CHECK(j.contains("provenance"));
}

TEST_CASE("render usage errors exit 2") {
  TempDir dir("cli-usage");
  CHECK(cli("render --set-size 25 -o " + q(dir / "x.png")).code == 2);
  CHECK(cli("render --condition serial -o " + q(dir / "x.png")).code == 2);
  CHECK(cli("render --present --absent -o " + q(dir / "x.png")).code == 2);
  CHECK(cli("render --bogus").code == 2);
  CHECK(cli("").code == 2);
  const auto msg = cli("render --set-size 25 -o " + q(dir / "x.png"));
  CHECK(msg.output.find("24") != std::string::npos);
}

TEST_CASE("extract writes a 14x14 map and a template") {
  TempDir dir("cli-extract");
  REQUIRE(cli("render --condition feature --set-size 8 --present --bar-length 10 -o " + q(dir / "s.png")).code == 0);
  const auto r = cli("extract --backend mock --search " + q(dir / "s.png") + " --map-out " + q(dir / "map.csv") +
                     " --template-out " + q(dir / "t.csv"));
  REQUIRE(r.code == 0);
  const auto map = slurp(dir / "map.csv");
  CHECK(count_lines(map) == 14);
  CHECK(std::count(map.begin(), map.end(), ',') == 14 * 13);
  CHECK(count_lines(slurp(dir / "t.csv")) == 4);
  CHECK(fs::exists(dir / "map.csv.provenance.json"));

  const auto onnx = cli("extract --backend onnx --template-out " + q(dir / "t2.csv"));
  CHECK(onnx.code == 1);
  CHECK(onnx.output.find("VSEARCH_MODEL_PATH") != std::string::npos);
  CHECK(cli("extract --backend mock").code == 2);
}

TEST_CASE("extract with the ONNX fixture via the environment") {
  TempDir dir("cli-onnx");
  REQUIRE(cli("render --condition feature --set-size 4 --present -o " + q(dir / "s.png")).code == 0);
  const auto r = cli("extract --backend onnx --search " + q(dir / "s.png") + " --map-out " + q(dir / "m.csv"),
                     "VSEARCH_MODEL_PATH=" + q(kFixtures / "tiny_vgg.onnx"));
  REQUIRE(r.code == 0);
  CHECK(count_lines(slurp(dir / "m.csv")) == 14);
}

TEST_CASE("run, interrupt, resume and report") {
  TempDir dir("cli-run");
  const auto cfg = dir / "small.sweep";
  spit(cfg, R"({"set_sizes": [2, 8], "bar_lengths": [4, 8, 13], "n_trials_per_class": 20, "jobs": 1})");

  const auto full = cli("run -q -c " + q(cfg) + " -o " + q(dir / "full.csv"));
  REQUIRE(full.code == 0);
  CHECK(read_results_csv(dir / "full.csv").size() == 12);

  const auto cut = cli("run -q -c " + q(cfg) + " -o " + q(dir / "part.csv") + " --max-cells 5");
  CHECK(cut.code == 1);
  CHECK(cut.output.find("resume") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "part.csv"));
  REQUIRE(cli("run -q -c " + q(cfg) + " -o " + q(dir / "part.csv")).code == 0);
  CHECK(slurp(dir / "part.csv") == slurp(dir / "full.csv"));

  const auto rep = cli("report " + q(dir / "full.csv") + " -o " + q(dir / "report"));
  CHECK(rep.code == 0);
  CHECK(fs::exists(dir / "report" / "feature.svg"));
  CHECK(fs::exists(dir / "report" / "conjunction.svg"));
  const auto checks = nlohmann::json::parse(slurp(dir / "report" / "checks.json"));
  CHECK(checks.at("checks").contains("conjunction_harder"));
  CHECK(checks.contains("provenance"));

  // The mock backend pops out, so far_from_perfect fails under --strict.
  CHECK(cli("report " + q(dir / "full.csv") + " -o " + q(dir / "r2") + " --strict --checks far_from_perfect").code == 3);
  CHECK(cli("report " + q(dir / "full.csv") + " -o " + q(dir / "r3") + " --strict --checks nonsense").code == 2);

  spit(dir / "human.csv", "condition,set_size,bar_length,pc\nfeature,2,8,0.8\nfeature,2,13,0.9\n");
  REQUIRE(cli("report " + q(dir / "full.csv") + " -o " + q(dir / "r4") + " --human " + q(dir / "human.csv")).code == 0);
  CHECK(slurp(dir / "r4" / "feature.svg").find("class=\"human\"") != std::string::npos);

  spit(dir / "bad.csv", "condition,set_size,bar_length,pc\nfeature,2,8,1.8\n");
  const auto bad = cli("report " + q(dir / "full.csv") + " -o " + q(dir / "r5") + " --human " + q(dir / "bad.csv"));
  CHECK(bad.code == 1);
  CHECK(bad.output.find("line 2") != std::string::npos);
}

TEST_CASE("run failures") {
  TempDir dir("cli-fail");
  spit(dir / "typo.sweep", R"({"set_size": [2]})");
  CHECK(cli("run -q -c " + q(dir / "typo.sweep") + " -o " + q(dir / "x.csv")).code == 2);
  CHECK(cli("run -q -c " + q(dir / "missing.sweep")).code == 1);
  spit(dir / "blocker", "x");
  CHECK(cli("run -q --trials 5 -o " + q(dir / "blocker" / "x.csv")).code == 1);
  const auto onnx = cli("run -q --backend onnx --trials 5 -o " + q(dir / "y.csv"));
  CHECK(onnx.code == 1);
  CHECK(onnx.output.find("VSEARCH_MODEL_PATH") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "y.csv.cells"));
}
