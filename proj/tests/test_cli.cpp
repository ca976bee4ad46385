#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pathoed/commands.hpp"

using namespace pathoed;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

fs::path work_dir() {
  static const fs::path d = [] {
    const fs::path p = fs::temp_directory_path() / "pathoed_test_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

Run cli(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd =
      std::string("\"") + PATHOED_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// Small problem that keeps every subcommand well under a second.
Json desk_config() {
  return Json::parse(R"({
    "experiment": {"name": "desk"},
    "mesh": {"n_side": 12},
    "model": {"alpha": 0.15, "velocity": "constant-diagonal", "amplitude": "oscillating"},
    "time": {"T": 1.0, "n_t": 80},
    "bc": {"dirichlet_edges": ["left", "top"]},
    "prior": {"a1": 0.55, "a2": 0.006, "mean": 672.0},
    "noise": {"sigma2": 1e-3},
    "obs": {"window": [0.2, 0.4], "stride": 2},
    "goal": {"box": [[0.5, 0.1], [0.9, 0.5]], "window": [0.8, 1.0]},
    "path": {"family": "bezier", "degree": 5, "endpoints": "fixed", "points": [[0.8, 0.2], [0.2, 0.8]],
             "design": [0.3, 0.3, 0.5, 0.5, 0.6, 0.4, 0.4, 0.7]},
    "truth": {"kind": "bump", "center": [0.25, 0.75], "width": 0.1, "amplitude": 300.0, "background": 672.0},
    "data": {"seed": 1, "noise": true},
    "opt": {"n_starts": 2, "seed": 3, "max_iter": 15, "fine_max_iter": 20},
    "baseline": {"n": 25, "seed": 4},
    "density": {"n_points": 401, "span": 8},
    "output": {"dir": "unused", "posterior_samples": 2}
  })");
}

fs::path write_config(const std::string& name, const Json& j) {
  const fs::path p = work_dir() / (name + ".json");
  write_file(p, j.dump(2));
  return p;
}

std::string opts(const fs::path& config, const std::string& out) {
  return "--config \"" + config.string() + "\" --out \"" + (work_dir() / out).string() + "\"";
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

// Data rows of a CSV written by the tool: comment lines and the header dropped.
std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("usage and configuration errors exit with 2 and a structured message") {
  Run r = cli("");
  CHECK(r.code == 2);
  CHECK(Json::parse(r.err)["error"]["kind"] == "usage");

  r = cli("forward");
  CHECK(r.code == 2);

  r = cli("forward --config \"" + (work_dir() / "nope.json").string() + "\"");
  CHECK(r.code == 2);
  CHECK(Json::parse(r.err)["error"]["kind"] == "config");

  Json bad = desk_config();
  bad["mesh"]["n_sides"] = 4;
  r = cli("forward " + opts(write_config("unknown_key", bad), "err"));
  CHECK(r.code == 2);
  const Json e = Json::parse(r.err)["error"];
  CHECK(e["kind"] == "config");
  CHECK(e["key"] == "mesh.n_sides");

  bad = desk_config();
  bad["noise"]["sigma2"] = -1.0;
  r = cli("invert " + opts(write_config("bad_value", bad), "err"));
  CHECK(r.code == 2);
  CHECK(Json::parse(r.err)["error"]["key"] == "noise.sigma2");
}

TEST_CASE("runtime errors exit with 1") {
  const fs::path cfg = write_config("desk", desk_config());
  write_file(work_dir() / "short_design.txt", "0.1\n0.2\n0.3\n");
  Run r = cli("forward " + opts(cfg, "err") + " --design \"" + (work_dir() / "short_design.txt").string() + "\"");
  CHECK(r.code == 1);
  CHECK(Json::parse(r.err)["error"]["kind"] == "runtime");

  r = cli("invert " + opts(cfg, "err") + " --data \"" + (work_dir() / "missing.csv").string() + "\"");
  CHECK(r.code == 1);
}

TEST_CASE("zero source gives all-zero measurements") {
  Json j = desk_config();
  j["truth"] = {{"kind", "constant"}, {"background", 0.0}};
  j["data"]["noise"] = false;
  const Run r = cli("forward " + opts(write_config("zero", j), "zero"));
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(work_dir() / "zero" / "measurements.csv");
  REQUIRE(!rows.empty());
  for (const auto& row : rows) {
    CHECK(std::stod(row[4]) == 0.0);
    CHECK(std::stod(row[5]) == 0.0);
  }
}

TEST_CASE("full-scale schedules have 40 and 50 measurements") {
  write_file(work_dir() / "bezier_design.txt", "0.3\n0.3\n0.5\n0.5\n0.6\n0.4\n0.4\n0.7\n");
  Run r = cli("forward " + opts(fs::path(PATHOED_CONFIG_DIR) / "bezier_fixed.json", "full_bezier") + " --design \"" +
              (work_dir() / "bezier_design.txt").string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(Json::parse(r.out)["n_y"] == 40);
  CHECK(csv_rows(work_dir() / "full_bezier" / "measurements.csv").size() == 40);

  write_file(work_dir() / "fourier_design.json", "[0.1, 0.05, -0.1, 0.2]");
  r = cli("forward " + opts(fs::path(PATHOED_CONFIG_DIR) / "fourier_nf1.json", "full_fourier") + " --design \"" +
          (work_dir() / "fourier_design.json").string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(Json::parse(r.out)["n_y"] == 50);
}

TEST_CASE("optimize is deterministic and its criterion round-trips") {
  const fs::path cfg = write_config("desk", desk_config());
  REQUIRE(cli("optimize " + opts(cfg, "opt_a")).code == 0);
  REQUIRE(cli("optimize " + opts(cfg, "opt_b")).code == 0);
  CHECK(slurp(work_dir() / "opt_a" / "optimize.json") == slurp(work_dir() / "opt_b" / "optimize.json"));
  CHECK(slurp(work_dir() / "opt_a" / "path.csv") == slurp(work_dir() / "opt_b" / "path.csv"));

  const Json j = read_json(work_dir() / "opt_a" / "optimize.json");
  const std::vector<double> xv = j["xi"].get<std::vector<double>>();
  REQUIRE(xv.size() == 8);
  const Eigen::VectorXd xi = Eigen::Map<const Eigen::VectorXd>(xv.data(), 8);

  const ExperimentConfig c = load_config(cfg);
  const ProblemSetup s(problem_spec(c));
  const auto path = make_path(c);
  const double psi = criterion_and_gradient(s, *path, xi, criterion_options(c, false)).psi;
  CHECK(std::abs(j["psi"].get<double>() - psi) <= 1e-12 * psi);
  for (const auto& st : j["starts"]) CHECK(j["psi"].get<double>() <= st["psi"].get<double>() * (1.0 + 1e-12));
  CHECK(j["config_hash"] == config_hash(c.source));
}

TEST_CASE("baseline writes one row per design") {
  const fs::path cfg = write_config("desk", desk_config());
  const Run r = cli("baseline " + opts(cfg, "base"));
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(work_dir() / "base" / "baseline.csv");
  CHECK(rows.size() == 25);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][1]) >= std::stod(rows[i - 1][1]));
  const Json j = read_json(work_dir() / "base" / "baseline.json");
  CHECK(j["n"] == 25);
  CHECK(j.contains("optimal_psi"));
}

TEST_CASE("goal densities integrate to one and match the criterion") {
  const fs::path cfg = write_config("desk", desk_config());
  const Run r = cli("goal-density " + opts(cfg, "density"));
  REQUIRE(r.code == 0);
  const Json j = read_json(work_dir() / "density" / "goal_density.json");
  CHECK(std::abs(j["prior"]["integral"].get<double>() - 1.0) <= 1e-3);
  CHECK(std::abs(j["posterior"]["integral"].get<double>() - 1.0) <= 1e-3);
  const double psi = j["psi"].get<double>();
  CHECK(std::abs(j["posterior"]["variance"].get<double>() - psi) <= 1e-10 * psi);
  CHECK(csv_rows(work_dir() / "density" / "goal_density.csv").size() == 2 * 401);
}

TEST_CASE("invert writes every node and noiseless MAP moves toward the truth") {
  Json j = desk_config();
  j["data"]["noise"] = false;
  const fs::path cfg = write_config("noiseless", j);
  const Run r = cli("invert " + opts(cfg, "invert"));
  REQUIRE(r.code == 0);
  const auto rows = csv_rows(work_dir() / "invert" / "fields.csv");
  CHECK(rows.size() == 144);
  REQUIRE(rows.front().size() == 9);  // node,x1,x2,truth,map,variance,prior_variance + 2 samples

  const Json out = Json::parse(r.out);
  const double truth = out["truth_goal"].get<double>();
  const double map = out["posterior"]["mean"].get<double>();
  const double prior = out["prior_mean_goal"].get<double>();
  CHECK(std::abs(map - truth) < std::abs(prior - truth));

  // Feeding the written measurements back reproduces the synthetic inversion.
  REQUIRE(cli("forward " + opts(cfg, "invert")).code == 0);
  const Run again = cli("invert " + opts(cfg, "invert_data") + " --data \"" +
                        (work_dir() / "invert" / "measurements.csv").string() + "\"");
  REQUIRE(again.code == 0);
  const double map2 = Json::parse(again.out)["posterior"]["mean"].get<double>();
  CHECK(std::abs(map2 - map) <= 1e-9 * std::abs(map));
}

TEST_CASE("outputs carry the configuration hash and seeds") {
  const fs::path cfg = write_config("desk", desk_config());
  REQUIRE(cli("forward " + opts(cfg, "prov")).code == 0);
  const std::string csv = slurp(work_dir() / "prov" / "measurements.csv");
  const ExperimentConfig c = load_config(cfg);
  CHECK(csv.rfind("# pathoed forward experiment=desk config_hash=" + config_hash(c.source), 0) == 0);
  CHECK(csv.find("data_seed=1") != std::string::npos);
  const Json j = read_json(work_dir() / "prov" / "forward.json");
  CHECK(j["seeds"]["data"] == 1);
}
