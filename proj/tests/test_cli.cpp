// Drives the installed binary (path in REFPRIOR_CLI) through its
// subcommands and checks the process-level contract: exit codes, report
// files, determinism, and the finite-or-"-inf" serialization rule.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "json.hpp"
#include "refprior/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli_path() {
  const char* p = std::getenv("REFPRIOR_CLI");
  REQUIRE_MESSAGE(p != nullptr, "REFPRIOR_CLI must point at the binary");
  return p;
}

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) {
    dir = fs::temp_directory_path() / "refprior_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  void file(const std::string& name, const std::string& content) const {
    std::ofstream(dir / name) << content;
  }
  std::string slurp(const std::string& name) const {
    std::ifstream in(dir / name, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), ("missing file: " + name).c_str());
    std::ostringstream body;
    body << in.rdbuf();
    return body.str();
  }

  RunResult run(const std::string& args) const {
    const std::string cmd = "cd '" + dir.string() + "' && '" + cli_path() +
                            "' " + args + " > run_stdout.txt 2> run_stderr.txt";
    const int raw = std::system(cmd.c_str());
    RunResult res;
    res.exit_code = WEXITSTATUS(raw);
    res.out = slurp("run_stdout.txt");
    res.err = slurp("run_stderr.txt");
    return res;
  }
};

const char* kDesign5 = "x\n0\n0.7\n1.6\n2.4\n3.3\n";
const char* kObs5 = "y\n0.3\n1.1\n0.2\n-0.7\n0.9\n";

// Every cell must be a finite numeric token or exactly "-inf" / "inf",
// never any spelling of NaN.
void check_serialization(const std::string& text) {
  CHECK(text.find("nan") == std::string::npos);
  CHECK(text.find("NaN") == std::string::npos);
  CHECK(text.find("NAN") == std::string::npos);
  CHECK(text.find("null") == std::string::npos);
}

// theta column of a curve CSV, tolerating "-inf" in the value columns.
std::vector<std::vector<std::string>> csv_cells(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

bool numeric_or_inf_token(const std::string& cell) {
  if (cell == "inf" || cell == "-inf") return true;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  return end == cell.c_str() + cell.size() && std::isfinite(v);
}

}  // namespace

TEST_CASE("prior subcommand writes a monotone curve and exits zero") {
  Scratch tmp("prior");
  tmp.file("d.csv", kDesign5);
  RunResult res = tmp.run(
      "prior --design d.csv --kernel se --basis constant --grid 41 "
      "--output-dir out");
  CHECK(res.exit_code == 0);

  const std::string text = tmp.slurp("out/prior.csv");
  check_serialization(text);
  auto rows = csv_cells(text);
  REQUIRE(rows.size() == 42);  // header + 41 nodes
  CHECK(rows[0] == std::vector<std::string>{"theta", "log_prior"});
  double prev = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 2);
    const double theta = std::strtod(rows[i][0].c_str(), nullptr);
    CHECK(theta > prev);
    prev = theta;
    CHECK(numeric_or_inf_token(rows[i][1]));
  }

  json man = json::parse(tmp.slurp("out/manifest.json"));
  CHECK(man["command"] == "prior");
  CHECK(man["status"] == "ok");
  CHECK(man["outputs"] == json::array({"prior.csv"}));
  CHECK(man["config"]["kernel"]["family"] == "squared_exponential");
}

TEST_CASE("validate --all passes on the built-in corpus") {
  Scratch tmp("validate");
  RunResult res = tmp.run("validate --all --output-dir out");
  CHECK(res.exit_code == 0);
  json rep = json::parse(tmp.slurp("out/validate.json"));
  CHECK(rep["passed"] == true);
  CHECK(rep.contains("identities"));
  CHECK(rep.contains("spectral"));
  CHECK(rep.contains("bounds"));
  // the table also lands on stdout
  CHECK(json::parse(res.out) == rep);
}

TEST_CASE("validate --spectral runs only the frequency-domain table") {
  Scratch tmp("validate_spectral");
  RunResult res = tmp.run("validate --spectral --output-dir out");
  CHECK(res.exit_code == 0);
  json rep = json::parse(res.out);
  CHECK(rep.contains("spectral"));
  CHECK_FALSE(rep.contains("identities"));
  CHECK_FALSE(rep.contains("bounds"));
  for (const auto& row : rep["spectral"]) CHECK(row["pass"] == true);
}

TEST_CASE("basis-spanned observations exit two citing nondegeneracy") {
  Scratch tmp("degenerate");
  tmp.file("d.csv", kDesign5);
  tmp.file("y.csv", "y\n2\n2\n2\n2\n2\n");
  RunResult res = tmp.run(
      "posterior --design d.csv --obs y.csv --kernel se --basis constant "
      "--output-dir out");
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("nondegeneracy") != std::string::npos);
  json rep = json::parse(tmp.slurp("out/nondegeneracy.json"));
  CHECK(rep["passes"] == false);
  json man = json::parse(tmp.slurp("out/manifest.json"));
  CHECK(man["status"] != "ok");
}

TEST_CASE("identical config and seed give byte-identical outputs") {
  Scratch a("det_a"), b("det_b");
  for (const Scratch* s : {&a, &b}) {
    s->file("d.csv", kDesign5);
    s->file("y.csv", kObs5);
    RunResult res = s->run(
        "posterior --design d.csv --obs y.csv --kernel se --basis constant "
        "--grid 129 --threads 2 --seed 7 --output-dir out");
    CHECK(res.exit_code == 0);
  }
  for (const char* name :
       {"out/posterior.csv", "out/posterior.json", "out/manifest.json"}) {
    CHECK(a.slurp(name) == b.slurp(name));
  }

  const std::string curve = a.slurp("out/posterior.csv");
  check_serialization(curve);
  // the flat small-theta regime underflows the prior, so the token form
  // of negative infinity must actually appear
  CHECK(curve.find("-inf") != std::string::npos);
}

TEST_CASE("flags override the config file which overrides defaults") {
  Scratch tmp("precedence");
  tmp.file("d.csv", kDesign5);
  tmp.file("config.json",
           "{\"design\": \"d.csv\", \"kernel\": {\"family\": \"matern\", "
           "\"nu\": 2.0}, \"rtol\": 1e-5, \"grid\": 65}");
  RunResult res = tmp.run("prior --config config.json --nu 1.0 --dump-config");
  CHECK(res.exit_code == 0);
  json cfg = json::parse(res.out);
  CHECK(cfg["kernel"]["family"] == "matern");
  CHECK(cfg["kernel"]["nu"] == 1.0);       // flag beats config
  CHECK(cfg["rtol"] == 1e-5);              // config beats default
  CHECK(cfg["grid"] == 65);
  CHECK(cfg["basis"] == "constant");       // untouched default
  // dump-config only prints; no reports appear
  CHECK_FALSE(fs::exists(tmp.dir / "manifest.json"));

  RunResult bad = tmp.run("prior --config nope.json");
  CHECK(bad.exit_code == 1);
}

TEST_CASE("unknown flags produce usage text and exit one") {
  Scratch tmp("unknown_flag");
  RunResult res = tmp.run("prior --bogus 3");
  CHECK(res.exit_code == 1);
  CHECK(res.err.find("--bogus") != std::string::npos);
  CHECK(res.err.find("Usage") != std::string::npos);

  RunResult none = tmp.run("");
  CHECK(none.exit_code == 1);

  RunResult help = tmp.run("--help");
  CHECK(help.exit_code == 0);
  CHECK(help.out.find("posterior") != std::string::npos);
}

TEST_CASE("predict emits one interval per new location") {
  Scratch tmp("predict");
  tmp.file("d.csv", kDesign5);
  tmp.file("y.csv", kObs5);
  tmp.file("np.csv", "0.35\n1.6\n2.9\n");
  RunResult res = tmp.run(
      "predict --design d.csv --obs y.csv --kernel se --basis constant "
      "--new-points np.csv --output-dir out");
  CHECK(res.exit_code == 0);

  const std::string text = tmp.slurp("out/predictions.csv");
  check_serialization(text);
  auto rows = csv_cells(text);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"x1", "mean", "lo95", "hi95"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double mean = std::strtod(rows[i][1].c_str(), nullptr);
    const double lo = std::strtod(rows[i][2].c_str(), nullptr);
    const double hi = std::strtod(rows[i][3].c_str(), nullptr);
    // collapsed intervals at interpolation points can invert by an ulp
    CHECK(lo <= mean + 1e-9);
    CHECK(mean <= hi + 1e-9);
  }
  // row 2 sits exactly on a design point, so its interval collapses
  const double lo2 = std::strtod(rows[2][2].c_str(), nullptr);
  const double hi2 = std::strtod(rows[2][3].c_str(), nullptr);
  CHECK(hi2 - lo2 < 1e-9);
}

TEST_CASE("map reports a finite interior mode") {
  Scratch tmp("map");
  tmp.file("d.csv", kDesign5);
  tmp.file("y.csv", kObs5);
  RunResult res = tmp.run(
      "map --design d.csv --obs y.csv --kernel se --basis constant "
      "--output-dir out");
  CHECK(res.exit_code == 0);
  json rep = json::parse(tmp.slurp("out/map.json"));
  CHECK(rep["theta"].is_number());
  CHECK(rep["theta"].get<double>() > 0.0);
  CHECK(rep["at_boundary"] == false);
}

TEST_CASE("diagnose embeds the structure reports and passes its bounds") {
  Scratch tmp("diagnose");
  tmp.file("d.csv", kDesign5);
  tmp.file("y.csv", kObs5);
  RunResult res = tmp.run(
      "diagnose --design d.csv --obs y.csv --kernel matern --nu 1.5 "
      "--basis constant --output-dir out");
  CHECK(res.exit_code == 0);
  json rep = json::parse(tmp.slurp("out/diagnose.json"));
  CHECK(rep["bounds_violated"] == false);
  CHECK(rep["expansion"].contains("case"));
  CHECK(rep["nondegeneracy"]["passes"] == true);
  CHECK(rep["signed_spectrum"]["n_positive"] == 1);
  CHECK(rep["tail_fits"]["prior"]["pass"] == true);
  CHECK(rep["tail_fits"]["likelihood"]["pass"] == true);
  CHECK(rep["tail_fits"]["inverse_norm"]["pass"] == true);
}

TEST_CASE("missing or malformed inputs exit one") {
  Scratch tmp("bad_inputs");
  tmp.file("d.csv", kDesign5);
  CHECK(tmp.run("posterior --design d.csv --kernel se").exit_code == 1);
  CHECK(tmp.run("posterior --design absent.csv --obs absent.csv").exit_code ==
        1);
  tmp.file("ragged.csv", "0,1\n2\n");
  CHECK(tmp.run("prior --design ragged.csv").exit_code == 1);
  tmp.file("y.csv", kObs5);
  CHECK(tmp.run("predict --design d.csv --obs y.csv").exit_code == 1);
  CHECK(tmp.run("prior --design d.csv --kernel rq --nu -2").exit_code == 1);
}
