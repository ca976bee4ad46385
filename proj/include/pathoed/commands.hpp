#pragma once

// Subcommands: run one experiment stage and write its outputs (CSV for
// fields, curves and histograms; JSON for scalars and audit trails). Every
// file starts with the configuration hash and the seeds in use.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pathoed/config.hpp"
#include "pathoed/experiment.hpp"

namespace pathoed {

struct CommandOptions {
  std::string out_dir;           // overrides output.dir when set
  std::string design_file;       // JSON with "xi", or one value per line
  std::string data_file;         // measurements CSV with a "value" column
};

/// 64-bit FNV-1a of the canonical JSON text.
inline std::string config_hash(const Json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline Json provenance(const ExperimentConfig& c, const std::string& command) {
  return Json{{"command", command},
              {"experiment", c.name},
              {"config_hash", config_hash(c.source)},
              {"seeds",
               {{"data", c.data_seed}, {"opt", c.opt.seed}, {"baseline", c.baseline_seed}, {"lowrank", c.lowrank.seed}}}};
}

inline std::string csv_header(const ExperimentConfig& c, const std::string& command) {
  std::ostringstream os;
  os << "# pathoed " << command << " experiment=" << c.name << " config_hash=" << config_hash(c.source)
     << " data_seed=" << c.data_seed << " opt_seed=" << c.opt.seed << " baseline_seed=" << c.baseline_seed
     << " lowrank_seed=" << c.lowrank.seed << "\n";
  return os.str();
}

inline std::filesystem::path output_dir(const ExperimentConfig& c, const CommandOptions& o) {
  std::filesystem::path dir = o.out_dir.empty() ? std::filesystem::path(c.output.dir) : std::filesystem::path(o.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + file.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + file.string() + "'");
}

inline void write_json(const std::filesystem::path& file, const Json& j) { write_text(file, j.dump(2) + "\n"); }

inline Json to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Json density_json(const GoalDensity& g) {
  Json j{{"mean", g.mean}, {"variance", g.variance}};
  j["cv"] = g.cv_defined ? Json(g.cv) : Json(nullptr);
  return j;
}

/// Design vector from a JSON file ("xi" array, or a bare array) or from a
/// text file with one value per line.
inline Eigen::VectorXd read_design_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open design file '" + file.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '{' || text[first] == '[')) {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw std::runtime_error("design file '" + file.string() + "': " + e.what());
    }
    const Json& a = j.is_object() ? j.at("xi") : j;
    std::vector<double> v = a.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return read_vector_file(file, "--design");
}

/// "value" column of a measurements CSV (comment lines start with '#').
inline Vector read_measurements(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open data file '" + file.string() + "'");
  std::string line;
  int col = -1;
  std::vector<double> vals;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    if (col < 0) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "value") col = static_cast<int>(i);
      }
      if (col < 0) throw std::runtime_error("data file '" + file.string() + "' has no 'value' column");
      continue;
    }
    if (static_cast<int>(cells.size()) <= col) throw std::runtime_error("short row in '" + file.string() + "'");
    vals.push_back(std::stod(cells[static_cast<std::size_t>(col)]));
  }
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline Eigen::VectorXd design_override(const CommandOptions& o) {
  return o.design_file.empty() ? Eigen::VectorXd() : read_design_file(o.design_file);
}

inline Json cmd_forward(const ExperimentConfig& c, const CommandOptions& o) {
  const ProblemSetup s(problem_spec(c));
  const auto path = make_path(c);
  const Eigen::VectorXd xi = require_design(c, *path, design_override(o));
  const ForwardOutcome f = run_forward(c, s, *path, xi);
  const auto dir = output_dir(c, o);

  std::ostringstream m;
  m << csv_header(c, "forward") << "k,t,x1,x2,value,clean\n";
  for (int k = 0; k < f.obs.n_y(); ++k) {
    const Point& r = f.obs.points[static_cast<std::size_t>(k)];
    m << k << ',' << fmt(f.obs.schedule.times[static_cast<std::size_t>(k)]) << ',' << fmt(r[0]) << ','
      << fmt(r[1]) << ',' << fmt(f.data.noisy[k]) << ',' << fmt(f.data.clean[k]) << '\n';
  }
  write_text(dir / "measurements.csv", m.str());

  std::vector<int> cols;
  for (int l = c.output.snapshot_stride - 1; l < s.forward().n_t(); l += c.output.snapshot_stride) cols.push_back(l);
  std::ostringstream u;
  u << csv_header(c, "forward") << "node,x1,x2,truth";
  for (int l : cols) u << ",t=" << fmt(s.forward().time_of(l));
  u << '\n';
  for (int i = 0; i < s.n_x(); ++i) {
    const Point& x = s.mesh().node(i);
    u << i << ',' << fmt(x[0]) << ',' << fmt(x[1]) << ',' << fmt(f.truth[i]);
    for (int l : cols) u << ',' << fmt(f.states.values(i, l));
    u << '\n';
  }
  write_text(dir / "snapshots.csv", u.str());

  Json j = provenance(c, "forward");
  j["n_y"] = f.obs.n_y();
  j["clamped"] = f.obs.clamped;
  j["xi"] = to_json(xi);
  j["truth_goal"] = goal_value(s, f.truth);
  j["files"] = {"measurements.csv", "snapshots.csv"};
  write_json(dir / "forward.json", j);
  return j;
}

inline Json cmd_invert(const ExperimentConfig& c, const CommandOptions& o) {
  const ProblemSetup s(problem_spec(c));
  const auto path = make_path(c);
  const Eigen::VectorXd xi = require_design(c, *path, design_override(o));
  const Vector data = o.data_file.empty() ? Vector() : read_measurements(o.data_file);
  const InversionOutcome inv = run_inversion(c, s, *path, xi, data);
  const auto dir = output_dir(c, o);

  std::ostringstream f;
  f << csv_header(c, "invert") << "node,x1,x2,truth,map,variance,prior_variance";
  for (std::size_t k = 0; k < inv.samples.size(); ++k) f << ",sample_" << k;
  f << '\n';
  for (int i = 0; i < s.n_x(); ++i) {
    const Point& x = s.mesh().node(i);
    f << i << ',' << fmt(x[0]) << ',' << fmt(x[1]) << ',' << fmt(inv.truth[i]) << ',' << fmt(inv.map[i]) << ','
      << fmt(inv.variance[i]) << ',' << fmt(inv.prior_variance[i]);
    for (const auto& smp : inv.samples) f << ',' << fmt(smp[i]);
    f << '\n';
  }
  write_text(dir / "fields.csv", f.str());

  Json j = provenance(c, "invert");
  j["data_source"] = o.data_file.empty() ? "synthetic" : o.data_file;
  j["n_y"] = inv.obs.n_y() + inv.dropped;
  j["n_used"] = inv.obs.n_y();
  j["n_dropped"] = inv.dropped;
  j["rank"] = inv.post.rank();
  j["xi"] = to_json(xi);
  j["prior"] = density_json(inv.prior_goal);
  j["posterior"] = density_json(inv.post_goal);
  j["truth_goal"] = inv.truth_goal;
  j["prior_mean_goal"] = inv.prior_goal.mean;
  j["files"] = {"fields.csv"};
  write_json(dir / "invert.json", j);
  return j;
}

inline Json cmd_optimize(const ExperimentConfig& c, const CommandOptions& o) {
  const ProblemSetup s(problem_spec(c));
  const auto path = make_path(c);
  const OptimizationOutcome opt = run_optimization(c, s, *path);
  const auto dir = output_dir(c, o);
  const Bounds b = design_bounds(c, *path);

  Json starts = Json::array();
  for (const auto& st : opt.ms.starts) {
    starts.push_back({{"index", st.index},
                      {"x0", to_json(st.x0)},
                      {"xi", to_json(st.result.x)},
                      {"psi", std::exp(st.result.f)},
                      {"iterations", st.result.iterations},
                      {"evaluations", st.result.evaluations},
                      {"converged", st.result.converged},
                      {"status", st.result.status}});
  }
  Json j = provenance(c, "optimize");
  j["family"] = path->family();
  j["dim"] = path->dim();
  j["xi"] = to_json(opt.xi);
  j["psi"] = opt.final.psi;
  j["psi_data"] = opt.final.psi_data;
  j["penalty"] = opt.final.penalty;
  j["n_y"] = opt.final.n_y;
  j["clamped"] = opt.final.clamped;
  j["prior_goal_variance"] = s.prior_goal_variance();
  j["filtered"] = criterion_options(c, false).filtered;
  j["bounds"] = {{"lower", to_json(b.lower)}, {"upper", to_json(b.upper)}};
  if (b.has_ball()) j["bounds"]["ball_radius"] = b.ball_radius;
  if (path->family() == "bezier") {
    Json cp = Json::array();
    for (const Point& p : static_cast<const BezierPath&>(*path).control_points(opt.xi)) cp.push_back({p[0], p[1]});
    j["control_points"] = cp;
  }
  j["best_start"] = opt.ms.best_start;
  j["starts"] = starts;
  auto exp_trace = [](const std::vector<double>& t) {
    Json a = Json::array();
    for (double v : t) a.push_back(std::exp(v));
    return a;
  };
  j["refine"] = {{"psi", std::exp(opt.ms.refine.f)},
                 {"iterations", opt.ms.refine.iterations},
                 {"evaluations", opt.ms.refine.evaluations},
                 {"converged", opt.ms.refine.converged},
                 {"status", opt.ms.refine.status},
                 {"trace", exp_trace(opt.ms.refine.trace)}};
  const auto& coarse = opt.ms.starts[static_cast<std::size_t>(opt.ms.best_start)].result;
  Json trace = exp_trace(coarse.trace);
  for (std::size_t i = 1; i < opt.ms.refine.trace.size(); ++i) trace.push_back(std::exp(opt.ms.refine.trace[i]));
  j["trace"] = trace;
  j["files"] = {"optimize.json", "path.csv"};
  write_json(dir / "optimize.json", j);

  std::ostringstream p;
  p << csv_header(c, "optimize") << "t,x1,x2\n";
  for (const auto& [t, x] : sample_path(*path, opt.xi, c.output.path_samples)) {
    p << fmt(t) << ',' << fmt(x[0]) << ',' << fmt(x[1]) << '\n';
  }
  write_text(dir / "path.csv", p.str());
  return j;
}

inline Json cmd_baseline(const ExperimentConfig& c, const CommandOptions& o) {
  const ProblemSetup s(problem_spec(c));
  const auto path = make_path(c);
  const BaselineOutcome base = run_baseline(c, s, *path);
  Eigen::VectorXd xi = design_override(o);
  if (xi.size() == 0) xi = configured_design(c, *path);
  std::optional<double> optimal;
  if (xi.size() > 0) {
    optimal = criterion_and_gradient(s, *path, require_design(c, *path, xi), criterion_options(c, false)).psi_data;
  }
  const auto dir = output_dir(c, o);

  std::ostringstream h;
  h << csv_header(c, "baseline") << "rank,psi,objective" << (optimal ? ",optimal" : "") << '\n';
  for (std::size_t i = 0; i < base.psi.size(); ++i) {
    h << i << ',' << fmt(base.psi[i]) << ',' << fmt(base.objective[i]);
    if (optimal) h << ',' << fmt(*optimal);
    h << '\n';
  }
  write_text(dir / "baseline.csv", h.str());

  Json j = provenance(c, "baseline");
  j["n"] = base.psi.size();
  j["min"] = base.min;
  j["max"] = base.max;
  j["mean"] = base.mean;
  j["median"] = base.median;
  if (optimal) {
    j["optimal_psi"] = *optimal;
    j["optimal_below_min"] = base.psi.empty() || *optimal < base.min;
  }
  j["files"] = {"baseline.csv"};
  write_json(dir / "baseline.json", j);
  return j;
}

inline Json cmd_goal_density(const ExperimentConfig& c, const CommandOptions& o) {
  const ProblemSetup s(problem_spec(c));
  const auto path = make_path(c);
  const Eigen::VectorXd xi = require_design(c, *path, design_override(o));
  const Vector data = o.data_file.empty() ? Vector() : read_measurements(o.data_file);
  ExperimentConfig cc = c;
  cc.output.posterior_samples = 0;
  const InversionOutcome inv = run_inversion(cc, s, *path, xi, data);
  const double psi = criterion_and_gradient(s, *path, xi, criterion_options(c, false)).psi_data;
  const auto dir = output_dir(c, o);

  const DensityCurve prior = density_curve(inv.prior_goal, c.density);
  const DensityCurve post = density_curve(inv.post_goal, c.density);
  std::ostringstream d;
  d << csv_header(c, "goal-density") << "measure,z,pdf\n";
  for (std::size_t i = 0; i < prior.z.size(); ++i) d << "prior," << fmt(prior.z[i]) << ',' << fmt(prior.pdf[i]) << '\n';
  for (std::size_t i = 0; i < post.z.size(); ++i) d << "posterior," << fmt(post.z[i]) << ',' << fmt(post.pdf[i]) << '\n';
  write_text(dir / "goal_density.csv", d.str());

  Json j = provenance(c, "goal-density");
  j["xi"] = to_json(xi);
  j["prior"] = density_json(inv.prior_goal);
  j["posterior"] = density_json(inv.post_goal);
  j["prior"]["integral"] = trapezoid(prior);
  j["posterior"]["integral"] = trapezoid(post);
  j["psi"] = psi;
  j["truth_goal"] = inv.truth_goal;
  j["n_used"] = inv.obs.n_y();
  j["n_dropped"] = inv.dropped;
  j["files"] = {"goal_density.csv"};
  write_json(dir / "goal_density.json", j);
  return j;
}

}  // namespace pathoed
