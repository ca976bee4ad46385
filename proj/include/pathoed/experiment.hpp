#pragma once

// Experiment pipeline on top of a validated configuration: path and bounds
// construction, synthetic data, inversion, design optimization, random
// baselines and goal statistics. No file I/O here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pathoed/config.hpp"
#include "pathoed/oed.hpp"
#include "pathoed/optimize.hpp"
#include "pathoed/paths.hpp"

namespace pathoed {

inline std::unique_ptr<PathModel> make_path(const ExperimentConfig& c) {
  const PathConfig& p = c.path;
  const double ta = c.problem.obs_ta;
  const double tb = c.problem.obs_tb;
  if (p.family == "bezier") return std::make_unique<BezierPath>(p.degree, p.endpoints, p.pinned, ta, tb);
  return std::make_unique<FourierPath>(p.modes, p.center, ta, tb);
}

inline Bounds design_bounds(const ExperimentConfig& c, const PathModel& path) {
  const PathConfig& p = c.path;
  if (p.family == "bezier") {
    return static_cast<const BezierPath&>(path).hull_box_bounds(p.hull_lo, p.hull_hi);
  }
  const auto& f = static_cast<const FourierPath&>(path);
  if (p.constraint == "disk") return f.disk_bounds(p.radius);
  return f.box_constraint_bounds(p.half_width);
}

/// Design named by the configuration: path.design, else the design extracted
/// from path.control_points. Empty when neither is given.
inline Eigen::VectorXd configured_design(const ExperimentConfig& c, const PathModel& path) {
  if (c.path.design.size() > 0) {
    if (c.path.design.size() != path.dim()) {
      throw ConfigError("path.design", "expected " + std::to_string(path.dim()) + " entries, got " +
                                           std::to_string(c.path.design.size()));
    }
    return c.path.design;
  }
  if (!c.path.control_points.empty()) {
    return static_cast<const BezierPath&>(path).design_from_points(c.path.control_points);
  }
  return Eigen::VectorXd();
}

inline Eigen::VectorXd require_design(const ExperimentConfig& c, const PathModel& path,
                                      const Eigen::VectorXd& override_design) {
  if (override_design.size() > 0) {
    if (override_design.size() != path.dim()) {
      throw std::invalid_argument("design has " + std::to_string(override_design.size()) +
                                  " entries, path needs " + std::to_string(path.dim()));
    }
    return override_design;
  }
  Eigen::VectorXd xi = configured_design(c, path);
  if (xi.size() == 0) {
    throw ConfigError("path.design", "a design is required (path.design, path.control_points or --design)");
  }
  return xi;
}

/// Nodal values of the ground-truth parameter.
inline Vector truth_field(const ExperimentConfig& c, const StructuredMesh& mesh) {
  const TruthConfig& t = c.truth;
  const int n = mesh.num_nodes();
  if (t.kind == "file") {
    Vector m = read_vector_file(resolve(c, t.file), "truth.file");
    if (m.size() != n) {
      throw ConfigError("truth.file", "file has " + std::to_string(m.size()) + " values, mesh has " +
                                          std::to_string(n) + " nodes");
    }
    return m;
  }
  Vector m = Vector::Constant(n, t.background);
  if (t.kind == "constant") return m;
  for (int i = 0; i < n; ++i) {
    const double d2 = (mesh.node(i) - t.center).squaredNorm();
    m[i] += t.amplitude * std::exp(-d2 / (2.0 * t.width * t.width));
  }
  return m;
}

inline double goal_value(const ProblemSetup& s, const Vector& m) { return m_inner(s.goal().c, m, s.mass()); }

inline CriterionOptions criterion_options(const ExperimentConfig& c, bool gradient) {
  CriterionOptions o;
  o.filtered = c.filtered && c.problem.obscured.has_value();
  o.gamma = c.path.gamma;
  o.gradient = gradient;
  o.lowrank = c.lowrank;
  return o;
}

/// Measurements kept for inversion: in filtered mode, points with p_k > 1/2
/// lie inside the obscured region and are discarded.
inline std::vector<bool> kept_measurements(const ExperimentConfig& c, const PathObservation& obs) {
  std::vector<bool> keep(static_cast<std::size_t>(obs.n_y()), true);
  if (!(c.filtered && c.problem.obscured)) return keep;
  for (int k = 0; k < obs.n_y(); ++k) {
    keep[static_cast<std::size_t>(k)] = rbf_weight(*c.problem.obscured, obs.points[static_cast<std::size_t>(k)]) <= 0.5;
  }
  return keep;
}

struct SyntheticData {
  Vector clean;
  Vector noisy;
};

inline Vector add_noise(const Vector& clean, double sigma2, std::uint64_t seed) {
  Vector y = clean;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(sigma2));
  for (int k = 0; k < y.size(); ++k) y[k] += normal(rng);
  return y;
}

/// y = F m_true + eta, eta ~ N(0, sigma^2 I) drawn from the data seed.
inline SyntheticData synthesize_data(const ProblemSetup& s, const PathObservation& obs, const Vector& m_true,
                                     std::uint64_t seed, bool noise) {
  SyntheticData d;
  d.clean = apply_f(s, obs, m_true);
  d.noisy = noise ? add_noise(d.clean, s.sigma2(), seed) : d.clean;
  return d;
}

struct ForwardOutcome {
  Snapshot states;
  PathObservation obs;
  SyntheticData data;
  Vector truth;
};

inline ForwardOutcome run_forward(const ExperimentConfig& c, const ProblemSetup& s, const PathModel& path,
                                  const Eigen::VectorXd& xi) {
  Vector truth = truth_field(c, s.mesh());
  Snapshot states = s.forward().solve_forward(truth);
  PathObservation obs = build_observation(s.mesh(), path, xi, s.schedule());
  SyntheticData data;
  data.clean = observe(obs, states);
  data.noisy = c.data_noise ? add_noise(data.clean, s.sigma2(), c.data_seed) : data.clean;
  return ForwardOutcome{std::move(states), std::move(obs), std::move(data), std::move(truth)};
}

struct InversionOutcome {
  PathObservation obs;  // measurements used
  int dropped = 0;
  Vector data;
  LowRankPosterior post;
  Vector map;
  Vector variance;
  Vector prior_variance;
  std::vector<Vector> samples;
  Vector truth;
  GoalDensity prior_goal;
  GoalDensity post_goal;
  double truth_goal = 0.0;
};

/// `data` holds one value per scheduled measurement; when empty, synthetic
/// data are generated from the configured truth.
inline InversionOutcome run_inversion(const ExperimentConfig& c, const ProblemSetup& s, const PathModel& path,
                                      const Eigen::VectorXd& xi, const Vector& data = Vector()) {
  InversionOutcome out;
  const PathObservation full = build_observation(s.mesh(), path, xi, s.schedule());
  out.truth = truth_field(c, s.mesh());
  Vector y_full = data;
  if (y_full.size() == 0) {
    y_full = synthesize_data(s, full, out.truth, c.data_seed, c.data_noise).noisy;
  } else if (y_full.size() != full.n_y()) {
    throw std::invalid_argument("data file has " + std::to_string(y_full.size()) + " measurements, schedule has " +
                                std::to_string(full.n_y()));
  }
  const std::vector<bool> keep = kept_measurements(c, full);
  out.obs = full.subset(keep);
  out.dropped = full.n_y() - out.obs.n_y();
  out.data.resize(out.obs.n_y());
  for (int k = 0, j = 0; k < full.n_y(); ++k) {
    if (keep[static_cast<std::size_t>(k)]) out.data[j++] = y_full[k];
  }
  LowRankOptions lr = c.lowrank;
  if (lr.r > out.obs.n_y()) lr.r = out.obs.n_y();
  out.post = build_low_rank(s, out.obs, lr);
  out.map = compute_map(s, out.obs, out.post, out.data);
  out.prior_variance = s.prior().variance_field();
  out.variance = variance_field(out.prior_variance, out.post);
  for (int i = 0; i < c.output.posterior_samples; ++i) {
    out.samples.push_back(posterior_sample(s, out.post, out.map, c.data_seed + 1000 + static_cast<std::uint64_t>(i)));
  }
  out.prior_goal = prior_goal_density(s);
  out.post_goal = posterior_goal_density(s, out.post, out.map);
  out.truth_goal = goal_value(s, out.truth);
  return out;
}

/// log Psi and its gradient. The criterion spans many orders of magnitude
/// across designs and problem scalings; the logarithm keeps the optimizer's
/// gradient and decrease tolerances scale-free without moving minimizers.
inline ObjectiveFn make_objective(const ExperimentConfig& c, const ProblemSetup& s, const PathModel& path) {
  const CriterionOptions opt = criterion_options(c, true);
  return [&s, &path, opt](const Eigen::VectorXd& xi, Eigen::VectorXd& g) {
    const CriterionResult r = criterion_and_gradient(s, path, xi, opt);
    if (!(r.psi > 0.0)) {
      g = Eigen::VectorXd::Zero(xi.size());
      return std::numeric_limits<double>::quiet_NaN();
    }
    g = r.grad / r.psi;
    return std::log(r.psi);
  };
}

struct OptimizationOutcome {
  MultistartResult ms;
  Eigen::VectorXd xi;
  CriterionResult final;
};

inline OptimizationOutcome run_optimization(const ExperimentConfig& c, const ProblemSetup& s,
                                            const PathModel& path) {
  const Bounds b = design_bounds(c, path);
  OptimizationOutcome out;
  out.ms = multistart_optimize(make_objective(c, s, path), b, c.opt);
  out.xi = out.ms.x;
  out.final = criterion_and_gradient(s, path, out.xi, criterion_options(c, false));
  return out;
}

struct BaselineOutcome {
  std::vector<double> psi;  // criterion values, sorted ascending
  std::vector<double> objective;  // criterion plus penalty, same order
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double median = 0.0;
};

/// Criterion at n uniform random designs drawn from the optimizer's bounds.
inline BaselineOutcome run_baseline(const ExperimentConfig& c, const ProblemSetup& s, const PathModel& path) {
  BaselineOutcome out;
  const Bounds b = design_bounds(c, path);
  const std::vector<Eigen::VectorXd> designs = uniform_designs(b, c.baseline_n, c.baseline_seed);
  const CriterionOptions opt = criterion_options(c, false);
  std::vector<std::pair<double, double>> vals;
  vals.reserve(designs.size());
  for (const auto& xi : designs) {
    const CriterionResult r = criterion_and_gradient(s, path, xi, opt);
    vals.emplace_back(r.psi_data, r.psi);
  }
  std::sort(vals.begin(), vals.end());
  for (const auto& v : vals) {
    out.psi.push_back(v.first);
    out.objective.push_back(v.second);
  }
  if (!out.psi.empty()) {
    const std::size_t n = out.psi.size();
    out.min = out.psi.front();
    out.max = out.psi.back();
    out.mean = std::accumulate(out.psi.begin(), out.psi.end(), 0.0) / static_cast<double>(n);
    out.median = n % 2 ? out.psi[n / 2] : 0.5 * (out.psi[n / 2 - 1] + out.psi[n / 2]);
  }
  return out;
}

struct DensityCurve {
  std::vector<double> z;
  std::vector<double> pdf;
};

inline DensityCurve density_curve(const GoalDensity& g, const DensityConfig& d) {
  DensityCurve c;
  if (!(g.variance > 0.0)) return c;
  const double sd = std::sqrt(g.variance);
  for (int i = 0; i < d.n_points; ++i) {
    const double z = g.mean - d.span * sd + 2.0 * d.span * sd * i / (d.n_points - 1);
    c.z.push_back(z);
    c.pdf.push_back(g.pdf(z));
  }
  return c;
}

inline double trapezoid(const DensityCurve& c) {
  double s = 0.0;
  for (std::size_t i = 1; i < c.z.size(); ++i) s += 0.5 * (c.pdf[i] + c.pdf[i - 1]) * (c.z[i] - c.z[i - 1]);
  return s;
}

/// Sampled polyline of the path over its time window.
inline std::vector<std::pair<double, Point>> sample_path(const PathModel& path, const Eigen::VectorXd& xi, int n) {
  std::vector<std::pair<double, Point>> out;
  for (int i = 0; i < n; ++i) {
    const double t = path.t_begin() + (path.t_end() - path.t_begin()) * i / (n - 1);
    out.emplace_back(t, path.eval(t, xi));
  }
  return out;
}

}  // namespace pathoed
