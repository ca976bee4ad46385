#pragma once

// Experiment configuration: JSON file -> validated ExperimentConfig. Every
// key is checked against the schema below; unknown keys, wrong types and
// out-of-range values raise ConfigError naming the offending key path.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pathoed/oed.hpp"
#include "pathoed/optimize.hpp"

namespace pathoed {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& msg)
      : std::runtime_error(key.empty() ? msg : key + ": " + msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct PathConfig {
  std::string family = "bezier";  // bezier | fourier
  // Bezier
  int degree = 5;
  Pinning endpoints = Pinning::fixed_endpoints;
  std::vector<Point> pinned;
  std::vector<Point> control_points;  // optional full control polygon (nominal path)
  // Fourier
  int modes = 1;
  Point center = Point(0.5, 0.5);
  // Constraint
  std::string constraint = "hull-box";  // hull-box | fourier-box | disk
  Point hull_lo = Point(0.0, 0.0);
  Point hull_hi = Point(1.0, 1.0);
  Point half_width = Point(0.4, 0.4);
  double radius = 0.4;
  double gamma = 0.0;
  Eigen::VectorXd design;  // optional explicit xi
};

struct TruthConfig {
  std::string kind = "bump";  // bump | constant | file
  Point center = Point(0.25, 0.75);
  double width = 0.1;
  double amplitude = 1.0;
  double background = 0.0;
  std::string file;
};

struct DensityConfig {
  int n_points = 801;
  double span = 6.0;  // half-width of each curve in standard deviations
};

struct OutputConfig {
  std::string dir = "out";
  int snapshot_stride = 40;
  int path_samples = 201;
  int posterior_samples = 3;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ProblemSpec problem;
  std::string velocity_name = "constant-diagonal";
  std::string amplitude_name = "oscillating";
  std::string prior_mean_file;
  bool filtered = true;  // only meaningful with an obscured region
  LowRankOptions lowrank;
  PathConfig path;
  TruthConfig truth;
  std::uint64_t data_seed = 1;
  bool data_noise = true;
  MultistartOptions opt;
  int baseline_n = 1000;
  std::uint64_t baseline_seed = 99;
  DensityConfig density;
  OutputConfig output;
  std::filesystem::path base_dir;  // directory of the config file
  Json source;                      // validated input, for provenance
};

namespace detail {

inline std::string join_key(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

/// Typed access to one JSON object; records which keys were read so that
/// leftovers can be reported.
class Section {
 public:
  Section(const Json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(path_, "expected an object");
  }

  bool present() const { return j_ != nullptr; }
  bool has(const std::string& key) const { return j_ && j_->contains(key); }
  std::string key(const std::string& k) const { return join_key(path_, k); }

  const Json* raw(const std::string& k) {
    seen_.insert(k);
    if (!j_) return nullptr;
    auto it = j_->find(k);
    return it == j_->end() ? nullptr : &*it;
  }

  Section sub(const std::string& k) {
    const Json* v = raw(k);
    return Section(v, key(k));
  }

  double number(const std::string& k, double def) {
    const Json* v = raw(k);
    if (!v) return def;
    if (!v->is_number()) throw ConfigError(key(k), "expected a number");
    return v->get<double>();
  }

  double positive(const std::string& k, double def) {
    const double x = number(k, def);
    if (!(x > 0.0)) throw ConfigError(key(k), "must be positive");
    return x;
  }

  double nonnegative(const std::string& k, double def) {
    const double x = number(k, def);
    if (!(x >= 0.0)) throw ConfigError(key(k), "must be nonnegative");
    return x;
  }

  int integer(const std::string& k, int def, int min_value) {
    const Json* v = raw(k);
    if (!v) return def;
    if (!v->is_number_integer()) throw ConfigError(key(k), "expected an integer");
    const auto x = v->get<long long>();
    if (x < min_value) throw ConfigError(key(k), "must be >= " + std::to_string(min_value));
    if (x > 1000000000LL) throw ConfigError(key(k), "value too large");
    return static_cast<int>(x);
  }

  std::uint64_t seed(const std::string& k, std::uint64_t def) {
    const Json* v = raw(k);
    if (!v) return def;
    if (!v->is_number_unsigned()) throw ConfigError(key(k), "expected a nonnegative integer");
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& k, bool def) {
    const Json* v = raw(k);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(key(k), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& k, const std::string& def) {
    const Json* v = raw(k);
    if (!v) return def;
    if (!v->is_string()) throw ConfigError(key(k), "expected a string");
    return v->get<std::string>();
  }

  std::string choice(const std::string& k, const std::string& def, const std::vector<std::string>& allowed) {
    const std::string s = string(k, def);
    for (const auto& a : allowed) {
      if (s == a) return s;
    }
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : " | ") + a;
    throw ConfigError(key(k), "unknown value '" + s + "' (" + list + ")");
  }

  Point point(const std::string& k, const Point& def) {
    const Json* v = raw(k);
    if (!v) return def;
    return as_point(*v, key(k));
  }

  std::vector<Point> points(const std::string& k) {
    const Json* v = raw(k);
    if (!v) return {};
    if (!v->is_array()) throw ConfigError(key(k), "expected an array of [x, y] pairs");
    std::vector<Point> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(as_point((*v)[i], key(k) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  std::vector<double> numbers(const std::string& k) {
    const Json* v = raw(k);
    if (!v) return {};
    if (!v->is_array()) throw ConfigError(key(k), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) throw ConfigError(key(k) + "[" + std::to_string(i) + "]", "expected a number");
      out.push_back((*v)[i].get<double>());
    }
    return out;
  }

  std::pair<double, double> window(const std::string& k, std::pair<double, double> def) {
    if (!has(k)) {
      raw(k);
      return def;
    }
    const std::vector<double> w = numbers(k);
    if (w.size() != 2) throw ConfigError(key(k), "expected [begin, end]");
    if (!(w[1] > w[0])) throw ConfigError(key(k), "window end must exceed its begin");
    return {w[0], w[1]};
  }

  std::vector<std::string> strings(const std::string& k) {
    const Json* v = raw(k);
    if (!v) return {};
    if (!v->is_array()) throw ConfigError(key(k), "expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_string()) throw ConfigError(key(k) + "[" + std::to_string(i) + "]", "expected a string");
      out.push_back((*v)[i].get<std::string>());
    }
    return out;
  }

  /// Reports the first key that no reader asked for.
  void finish() const {
    if (!j_) return;
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
    }
  }

 private:
  static Point as_point(const Json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(where, "expected [x, y]");
    }
    return Point(v[0].get<double>(), v[1].get<double>());
  }

  const Json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline VelocityField velocity_preset(const std::string& name) {
  if (name == "constant-diagonal") return velocity::constant_diagonal();
  if (name == "recirculating") return velocity::recirculating();
  return velocity::constant(0.0, 0.0);
}

inline AmplitudeFn amplitude_preset(const std::string& name) {
  if (name == "oscillating") return amplitude::oscillating();
  if (name == "decaying") return amplitude::decaying();
  return amplitude::constant(1.0);
}

}  // namespace detail

/// Reads one column of numbers (one value per line, '#' comments and an
/// optional non-numeric header line allowed).
inline Vector read_vector_file(const std::filesystem::path& file, const std::string& key) {
  std::ifstream in(file);
  if (!in) throw ConfigError(key, "cannot open '" + file.string() + "'");
  std::vector<double> vals;
  std::string line;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::string cell = line.substr(line.find_last_of(',') == std::string::npos ? 0 : line.find_last_of(',') + 1);
    try {
      std::size_t used = 0;
      const double v = std::stod(cell, &used);
      vals.push_back(v);
      header_allowed = false;
    } catch (const std::exception&) {
      if (!header_allowed) throw ConfigError(key, "non-numeric entry '" + cell + "' in '" + file.string() + "'");
      header_allowed = false;
    }
  }
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline ExperimentConfig parse_config(const Json& root, const std::filesystem::path& base_dir = {}) {
  using detail::Section;
  if (!root.is_object()) throw ConfigError("", "configuration must be a JSON object");
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.source = root;
  Section top(&root, "");

  {
    Section s = top.sub("experiment");
    c.name = s.string("name", c.name);
    s.finish();
  }
  {
    Section s = top.sub("mesh");
    c.problem.n_side = s.integer("n_side", c.problem.n_side, 2);
    s.finish();
  }
  {
    Section s = top.sub("model");
    c.problem.alpha = s.nonnegative("alpha", c.problem.alpha);
    if (s.has("velocity") && s.raw("velocity")->is_array()) {
      const Point v = s.point("velocity", Point::Zero());
      c.velocity_name = "constant";
      c.problem.velocity = velocity::constant(v[0], v[1]);
    } else {
      c.velocity_name = s.choice("velocity", c.velocity_name, {"constant-diagonal", "recirculating", "none"});
      c.problem.velocity = detail::velocity_preset(c.velocity_name);
    }
    if (s.has("amplitude") && s.raw("amplitude")->is_number()) {
      const double a = s.number("amplitude", 1.0);
      c.amplitude_name = "constant";
      c.problem.amplitude = amplitude::constant(a);
    } else {
      c.amplitude_name = s.choice("amplitude", c.amplitude_name, {"oscillating", "decaying"});
      c.problem.amplitude = detail::amplitude_preset(c.amplitude_name);
    }
    s.finish();
  }
  {
    Section s = top.sub("time");
    c.problem.T = s.positive("T", c.problem.T);
    c.problem.n_t = s.integer("n_t", c.problem.n_t, 1);
    s.finish();
  }
  {
    Section s = top.sub("bc");
    if (s.has("dirichlet_edges")) {
      c.problem.dirichlet_edges = s.strings("dirichlet_edges");
      for (const auto& e : c.problem.dirichlet_edges) {
        if (e != "left" && e != "right" && e != "top" && e != "bottom") {
          throw ConfigError(s.key("dirichlet_edges"), "unknown edge '" + e + "' (left | right | top | bottom)");
        }
      }
    } else {
      c.problem.dirichlet_edges = {"left", "top"};
      s.raw("dirichlet_edges");
    }
    s.finish();
  }
  {
    Section s = top.sub("prior");
    c.problem.a1 = s.positive("a1", c.problem.a1);
    c.problem.a2 = s.positive("a2", c.problem.a2);
    if (s.has("mean") && s.raw("mean")->is_string()) {
      c.prior_mean_file = s.string("mean", "");
    } else {
      c.problem.prior_mean_value = s.number("mean", 0.0);
    }
    s.finish();
  }
  {
    Section s = top.sub("noise");
    c.problem.sigma2 = s.positive("sigma2", c.problem.sigma2);
    s.finish();
  }
  {
    Section s = top.sub("obs");
    const auto w = s.window("window", {c.problem.obs_ta, c.problem.obs_tb});
    c.problem.obs_ta = w.first;
    c.problem.obs_tb = w.second;
    if (c.problem.obs_ta < 0.0 || c.problem.obs_tb > c.problem.T + 1e-12) {
      throw ConfigError(s.key("window"), "must lie inside [0, time.T]");
    }
    c.problem.obs_stride = s.integer("stride", c.problem.obs_stride, 1);
    s.finish();
  }
  {
    Section s = top.sub("obscured");
    if (s.present()) {
      ObscuredRegion D;
      D.center = s.point("center", D.center);
      D.radius = s.positive("radius", D.radius);
      D.beta = s.positive("beta", D.beta);
      c.filtered = s.boolean("filtered", true);
      c.problem.obscured = D;
    }
    s.finish();
  }
  {
    Section s = top.sub("goal");
    if (s.has("box")) {
      const std::vector<Point> box = s.points("box");
      if (box.size() != 2) throw ConfigError(s.key("box"), "expected [[x_lo, y_lo], [x_hi, y_hi]]");
      if (!(box[1][0] > box[0][0]) || !(box[1][1] > box[0][1])) {
        throw ConfigError(s.key("box"), "upper corner must exceed the lower corner");
      }
      c.problem.goal_lo = box[0];
      c.problem.goal_hi = box[1];
    } else {
      s.raw("box");
    }
    if (s.has("window")) {
      const std::vector<double> w = s.numbers("window");
      if (w.size() != 2 || !(w[1] >= w[0])) throw ConfigError(s.key("window"), "expected [begin, end] with begin <= end");
      c.problem.goal_t0 = w[0];
      c.problem.goal_t1 = w[1];
    } else {
      s.raw("window");
    }
    s.finish();
  }
  {
    Section s = top.sub("lowrank");
    c.lowrank.method = parse_lowrank_method(s.choice("method", "measurement-space", {"measurement-space", "lanczos"}));
    c.lowrank.r = s.integer("r", -1, -1);
    c.lowrank.k = s.integer("k", -1, -1);
    if (c.lowrank.k >= 0 && c.lowrank.r >= 0 && c.lowrank.k < c.lowrank.r) {
      throw ConfigError(s.key("k"), "must be >= lowrank.r");
    }
    c.lowrank.seed = s.seed("seed", c.lowrank.seed);
    s.finish();
  }
  {
    Section s = top.sub("path");
    PathConfig& p = c.path;
    p.family = s.choice("family", p.family, {"bezier", "fourier"});
    if (p.family == "bezier") {
      p.degree = s.integer("degree", p.degree, 1);
      p.endpoints = parse_pinning(s.choice("endpoints", "fixed", {"free", "fixed", "closed"}));
      const std::size_t need = p.endpoints == Pinning::fixed_endpoints ? 2 : p.endpoints == Pinning::closed ? 1 : 0;
      if (s.has("points")) {
        p.pinned = s.points("points");
      } else {
        s.raw("points");
        const std::vector<Point> def = {Point(0.8, 0.2), Point(0.2, 0.8)};
        p.pinned.assign(def.begin(), def.begin() + static_cast<std::ptrdiff_t>(need));
      }
      if (p.pinned.size() != need) {
        throw ConfigError(s.key("points"), "endpoint mode needs " + std::to_string(need) + " point(s)");
      }
      if (p.endpoints == Pinning::closed && p.degree < 2) {
        throw ConfigError(s.key("degree"), "closed curves need degree >= 2");
      }
      p.control_points = s.points("control_points");
      if (!p.control_points.empty() && static_cast<int>(p.control_points.size()) != p.degree + 1) {
        throw ConfigError(s.key("control_points"), "expected degree + 1 points");
      }
      p.constraint = s.choice("constraint", "hull-box", {"hull-box"});
      if (s.has("hull_box")) {
        const std::vector<Point> hb = s.points("hull_box");
        if (hb.size() != 2 || !(hb[1][0] > hb[0][0]) || !(hb[1][1] > hb[0][1])) {
          throw ConfigError(s.key("hull_box"), "expected [[x_lo, y_lo], [x_hi, y_hi]]");
        }
        p.hull_lo = hb[0];
        p.hull_hi = hb[1];
      } else {
        s.raw("hull_box");
      }
    } else {
      p.modes = s.integer("modes", p.modes, 1);
      p.center = s.point("center", p.center);
      p.constraint = s.choice("constraint", "disk", {"disk", "fourier-box"});
      p.radius = s.positive("radius", p.radius);
      p.half_width = s.point("half_width", p.half_width);
      if (!(p.half_width[0] > 0.0) || !(p.half_width[1] > 0.0)) {
        throw ConfigError(s.key("half_width"), "must be positive");
      }
    }
    p.gamma = s.nonnegative("gamma", 0.0);
    const std::vector<double> d = s.numbers("design");
    if (!d.empty()) p.design = Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
    s.finish();
  }
  {
    Section s = top.sub("truth");
    TruthConfig& t = c.truth;
    t.kind = s.choice("kind", t.kind, {"bump", "constant", "file"});
    t.center = s.point("center", t.center);
    t.width = s.positive("width", t.width);
    t.amplitude = s.number("amplitude", t.amplitude);
    t.background = s.number("background", t.background);
    t.file = s.string("file", "");
    if (t.kind == "file" && t.file.empty()) throw ConfigError(s.key("file"), "required when kind is 'file'");
    s.finish();
  }
  {
    Section s = top.sub("data");
    c.data_seed = s.seed("seed", c.data_seed);
    c.data_noise = s.boolean("noise", c.data_noise);
    s.finish();
  }
  {
    Section s = top.sub("opt");
    c.opt.n_starts = s.integer("n_starts", 10, 1);
    c.opt.seed = s.seed("seed", c.opt.seed);
    c.opt.coarse.gtol = s.positive("coarse_tol", 1e-4);
    c.opt.coarse.ftol = c.opt.coarse.gtol;
    c.opt.fine.gtol = s.positive("fine_tol", 1e-7);
    c.opt.fine.ftol = c.opt.fine.gtol;
    c.opt.coarse.max_iter = s.integer("max_iter", 200, 1);
    c.opt.fine.max_iter = s.integer("fine_max_iter", 500, 1);
    s.finish();
  }
  {
    Section s = top.sub("baseline");
    c.baseline_n = s.integer("n", c.baseline_n, 0);
    c.baseline_seed = s.seed("seed", c.baseline_seed);
    s.finish();
  }
  {
    Section s = top.sub("density");
    c.density.n_points = s.integer("n_points", c.density.n_points, 3);
    c.density.span = s.positive("span", c.density.span);
    s.finish();
  }
  {
    Section s = top.sub("output");
    c.output.dir = s.string("dir", c.output.dir);
    c.output.snapshot_stride = s.integer("snapshot_stride", c.output.snapshot_stride, 1);
    c.output.path_samples = s.integer("path_samples", c.output.path_samples, 2);
    c.output.posterior_samples = s.integer("posterior_samples", c.output.posterior_samples, 0);
    s.finish();
  }
  top.finish();

  // Cross-section checks.
  if (c.problem.goal_t1 > c.problem.T + 1e-12) throw ConfigError("goal.window", "must lie inside [0, time.T]");
  if (c.path.family == "fourier" && c.path.constraint == "disk") {
    const Point& x = c.path.center;
    const double R = c.path.radius;
    if (x[0] - R < -1e-12 || x[0] + R > 1.0 + 1e-12 || x[1] - R < -1e-12 || x[1] + R > 1.0 + 1e-12) {
      throw ConfigError("path.radius", "disk around path.center leaves the unit square");
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("", "cannot open configuration file '" + file.string() + "'");
  Json root;
  try {
    root = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(root, file.parent_path());
}

inline std::filesystem::path resolve(const ExperimentConfig& c, const std::string& file) {
  const std::filesystem::path p(file);
  return p.is_absolute() ? p : c.base_dir / p;
}

/// Problem specification with file-backed fields loaded.
inline ProblemSpec problem_spec(const ExperimentConfig& c) {
  ProblemSpec spec = c.problem;
  if (!c.prior_mean_file.empty()) {
    spec.prior_mean = read_vector_file(resolve(c, c.prior_mean_file), "prior.mean");
    const int n = spec.n_side * spec.n_side;
    if (spec.prior_mean.size() != n) {
      throw ConfigError("prior.mean", "file has " + std::to_string(spec.prior_mean.size()) +
                                          " values, mesh has " + std::to_string(n) + " nodes");
    }
  }
  return spec;
}

}  // namespace pathoed
