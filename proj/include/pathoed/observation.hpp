#pragma once

// Pointwise observation of a snapshot along a sensor path, its adjoint, its
// design derivative, a mollified reference operator, and the logistic filter
// for obscured regions.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathoed/forward.hpp"
#include "pathoed/linops.hpp"
#include "pathoed/mesh.hpp"
#include "pathoed/paths.hpp"

namespace pathoed {

/// Measurement columns (0-based snapshot columns) in increasing order.
struct ObservationSchedule {
  std::vector<int> cols;
  std::vector<double> times;

  int n_y() const { return static_cast<int>(cols.size()); }
  int last_col() const { return cols.empty() ? -1 : cols.back(); }
};

/// Every `stride`-th time-grid point t_l = l dt in the half-open window
/// [t_a, t_b), starting from the first grid point at or after t_a.
inline ObservationSchedule make_schedule(double dt, int n_t, double ta, double tb, int stride) {
  if (stride < 1) throw std::invalid_argument("schedule: stride must be >= 1");
  if (!(tb > ta)) throw std::invalid_argument("schedule: window must satisfy t_a < t_b");
  const double tol = 1e-9;
  ObservationSchedule s;
  int l = static_cast<int>(std::ceil(ta / dt - tol));
  l = std::max(l, 1);
  for (; l <= n_t && l * dt < tb - tol * dt; l += stride) {
    s.cols.push_back(l - 1);
    s.times.push_back(l * dt);
  }
  return s;
}

inline ObservationSchedule schedule_from_cols(const std::vector<int>& cols, double dt, int n_t) {
  ObservationSchedule s;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= n_t) throw std::invalid_argument("schedule: column out of range");
    if (k > 0 && cols[k] <= cols[k - 1]) {
      throw std::invalid_argument("schedule: columns must be strictly increasing");
    }
    s.cols.push_back(cols[k]);
    s.times.push_back((cols[k] + 1) * dt);
  }
  return s;
}

/// Basis evaluations along a path at the scheduled times, together with the
/// data needed for design derivatives.
struct PathObservation {
  ObservationSchedule schedule;
  std::vector<Point> points;
  std::vector<SparseVector> phi;
  std::vector<BasisGradient> dphi;
  std::vector<Jacobian> jac;
  int clamped = 0;

  int n_y() const { return schedule.n_y(); }
  int dim() const { return jac.empty() ? 0 : static_cast<int>(jac.front().cols()); }

  /// Keeps only the measurements flagged true.
  PathObservation subset(const std::vector<bool>& keep) const {
    PathObservation out;
    for (int k = 0; k < n_y(); ++k) {
      if (!keep[static_cast<std::size_t>(k)]) continue;
      out.schedule.cols.push_back(schedule.cols[static_cast<std::size_t>(k)]);
      out.schedule.times.push_back(schedule.times[static_cast<std::size_t>(k)]);
      out.points.push_back(points[static_cast<std::size_t>(k)]);
      out.phi.push_back(phi[static_cast<std::size_t>(k)]);
      out.dphi.push_back(dphi[static_cast<std::size_t>(k)]);
      out.jac.push_back(jac[static_cast<std::size_t>(k)]);
      if (StructuredMesh::outside(points[static_cast<std::size_t>(k)])) ++out.clamped;
    }
    return out;
  }
};

inline PathObservation build_observation(const StructuredMesh& mesh, const PathModel& path,
                                         const Eigen::VectorXd& xi,
                                         const ObservationSchedule& schedule) {
  PathObservation obs;
  obs.schedule = schedule;
  const int n_y = schedule.n_y();
  obs.points.reserve(static_cast<std::size_t>(n_y));
  obs.phi.reserve(static_cast<std::size_t>(n_y));
  obs.dphi.reserve(static_cast<std::size_t>(n_y));
  obs.jac.reserve(static_cast<std::size_t>(n_y));
  for (int k = 0; k < n_y; ++k) {
    const double t = schedule.times[static_cast<std::size_t>(k)];
    const Point r = path.eval(t, xi);
    if (StructuredMesh::outside(r)) ++obs.clamped;
    obs.points.push_back(r);
    obs.phi.push_back(mesh.eval_basis(r));
    BasisGradient g = mesh.eval_basis_grad(r);
    // A coordinate pinned by clamping does not move with the design.
    if (r[0] < 0.0 || r[0] > 1.0) g.d1.value = {0.0, 0.0, 0.0};
    if (r[1] < 0.0 || r[1] > 1.0) g.d2.value = {0.0, 0.0, 0.0};
    obs.dphi.push_back(g);
    obs.jac.push_back(path.jacobian(t, xi));
  }
  return obs;
}

/// Phi(xi): n_x x n_t, column l holds the basis values at r(t_l) for
/// measurement columns and is zero elsewhere.
inline SparseMatrix phi_matrix(const PathObservation& obs, int n_x, int n_t) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < obs.n_y(); ++k) {
    const SparseVector& p = obs.phi[static_cast<std::size_t>(k)];
    for (int a = 0; a < p.size; ++a) {
      trip.emplace_back(p.index[a], obs.schedule.cols[static_cast<std::size_t>(k)], p.value[a]);
    }
  }
  SparseMatrix P(n_x, n_t);
  P.setFromTriplets(trip.begin(), trip.end());
  return P;
}

/// d Phi / d xi_j, same layout as phi_matrix.
inline SparseMatrix phi_derivative(const PathObservation& obs, int j, int n_x, int n_t) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < obs.n_y(); ++k) {
    const BasisGradient& g = obs.dphi[static_cast<std::size_t>(k)];
    const Jacobian& J = obs.jac[static_cast<std::size_t>(k)];
    for (int a = 0; a < 3; ++a) {
      const double v = g.d1.value[a] * J(0, j) + g.d2.value[a] * J(1, j);
      trip.emplace_back(g.d1.index[a], obs.schedule.cols[static_cast<std::size_t>(k)], v);
    }
  }
  SparseMatrix P(n_x, n_t);
  P.setFromTriplets(trip.begin(), trip.end());
  return P;
}

/// (B U)_k = u_h(r_k, t_k).
inline Vector observe(const PathObservation& obs, const Matrix& U) {
  Vector y(obs.n_y());
  for (int k = 0; k < obs.n_y(); ++k) {
    const int c = obs.schedule.cols[static_cast<std::size_t>(k)];
    if (c >= U.cols()) throw std::invalid_argument("observe: snapshot has too few columns");
    y[k] = obs.phi[static_cast<std::size_t>(k)].dot(U.col(c));
  }
  return y;
}

inline Vector observe(const PathObservation& obs, const Snapshot& U) { return observe(obs, U.values); }

/// Design derivative of the observations: entry (k, j) = d/dxi_j of u_h(r_k, t_k)
/// for a fixed snapshot.
inline Matrix observe_derivative(const PathObservation& obs, const Matrix& U) {
  Matrix D = Matrix::Zero(obs.n_y(), obs.dim());
  for (int k = 0; k < obs.n_y(); ++k) {
    const int c = obs.schedule.cols[static_cast<std::size_t>(k)];
    const BasisGradient& g = obs.dphi[static_cast<std::size_t>(k)];
    const Point grad(g.d1.dot(U.col(c)), g.d2.dot(U.col(c)));
    D.row(k) = grad.transpose() * obs.jac[static_cast<std::size_t>(k)];
  }
  return D;
}

/// B^* y = M^{-1} Phi diag(E y ./ w): adjoint of observe between the
/// Euclidean data space and the weighted snapshot space.
inline Snapshot adjoint_observe(const PathObservation& obs, const Vector& y, const SpdFactor& mass,
                                const Vector& weights) {
  if (y.size() != obs.n_y()) throw std::invalid_argument("adjoint_observe: data has wrong length");
  Snapshot V(mass.size(), weights);
  for (int k = 0; k < obs.n_y(); ++k) {
    const int c = obs.schedule.cols[static_cast<std::size_t>(k)];
    if (y[k] == 0.0) continue;
    const Vector col = mass.solve(obs.phi[static_cast<std::size_t>(k)].dense(mass.size()));
    V.values.col(c) += col * (y[k] / weights[c]);
  }
  return V;
}

/// Dual data of B^* y for the adjoint solver: column c_k holds phi_k y_k.
inline std::vector<PointInput> observation_sources(const PathObservation& obs, const Vector& y) {
  std::vector<PointInput> src;
  for (int k = 0; k < obs.n_y(); ++k) {
    PointInput p;
    p.col = obs.schedule.cols[static_cast<std::size_t>(k)];
    p.phi = obs.phi[static_cast<std::size_t>(k)];
    for (int a = 0; a < p.phi.size; ++a) p.phi.value[a] *= y[k];
    src.push_back(p);
  }
  return src;
}

inline Matrix sources_to_dual(const std::vector<PointInput>& src, int n_x) {
  int n_cols = 0;
  for (const auto& s : src) n_cols = std::max(n_cols, s.col + 1);
  Matrix G = Matrix::Zero(n_x, n_cols);
  for (const auto& s : src) s.phi.add_to(G.col(s.col));
  return G;
}

struct MollifierSettings {
  double eps_x = 1e-2;
  double eps_t = 1e-3;
  bool renormalize = true;
};

/// Space-time Gaussian mollification of a snapshot against the moving sensor:
/// lumped-mass quadrature in space, trapezoid rule over `times` in time. The
/// path is held at its window endpoints outside the window.
inline Vector mollified_observe(const StructuredMesh& mesh, const SparseMatrix& M, const Matrix& U,
                                const std::vector<double>& times, const PathModel& path,
                                const Eigen::VectorXd& xi,
                                const std::vector<double>& measurement_times,
                                const MollifierSettings& s) {
  if (!(s.eps_x > 0.0) || !(s.eps_t > 0.0)) {
    throw std::invalid_argument("mollified_observe: eps_x and eps_t must be positive");
  }
  if (static_cast<int>(times.size()) != U.cols()) {
    throw std::invalid_argument("mollified_observe: time count does not match snapshot");
  }
  const int n_t = static_cast<int>(times.size());
  const Vector lumped = M * Vector::Ones(M.rows());
  std::vector<double> tw(static_cast<std::size_t>(n_t), 0.0);
  for (int l = 0; l + 1 < n_t; ++l) {
    const double h = times[static_cast<std::size_t>(l) + 1] - times[static_cast<std::size_t>(l)];
    tw[static_cast<std::size_t>(l)] += 0.5 * h;
    tw[static_cast<std::size_t>(l) + 1] += 0.5 * h;
  }
  // Spatial averages at every time; the spatial kernel does not depend on k.
  Vector spatial(n_t);
  Vector spatial_mass(n_t);
  for (int l = 0; l < n_t; ++l) {
    const double t = std::clamp(times[static_cast<std::size_t>(l)], path.t_begin(), path.t_end());
    const Point r = path.eval(t, xi);
    double acc = 0.0;
    double mass = 0.0;
    for (int i = 0; i < mesh.num_nodes(); ++i) {
      const double d2 = (mesh.node(i) - r).squaredNorm();
      const double w = lumped[i] * std::exp(-d2 / (2.0 * s.eps_x)) / (2.0 * std::numbers::pi * s.eps_x);
      acc += w * U(i, l);
      mass += w;
    }
    spatial[l] = acc;
    spatial_mass[l] = mass;
  }
  Vector out(static_cast<int>(measurement_times.size()));
  for (std::size_t k = 0; k < measurement_times.size(); ++k) {
    const double tk = measurement_times[k];
    double acc = 0.0;
    double mass = 0.0;
    for (int l = 0; l < n_t; ++l) {
      const double dt = times[static_cast<std::size_t>(l)] - tk;
      const double w = tw[static_cast<std::size_t>(l)] * std::exp(-dt * dt / (2.0 * s.eps_t)) /
                       std::sqrt(2.0 * std::numbers::pi * s.eps_t);
      acc += w * spatial[l];
      mass += w * spatial_mass[l];
    }
    out[static_cast<int>(k)] = s.renormalize ? acc / mass : acc;
  }
  return out;
}

/// Logistic radial weight p(x) = 1 / (1 + exp((|x - x_D| - R_D) / beta)).
struct ObscuredRegion {
  Point center = Point(0.5, 0.5);
  double radius = 0.16;
  double beta = 0.01;

  void validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("obscured region: radius must be positive");
    if (!(beta > 0.0)) throw std::invalid_argument("obscured region: beta must be positive");
  }
};

inline double rbf_weight(const ObscuredRegion& D, const Point& x) {
  const double z = ((x - D.center).norm() - D.radius) / D.beta;
  if (z > 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

inline Point rbf_grad(const ObscuredRegion& D, const Point& x) {
  const Point d = x - D.center;
  const double rho = d.norm();
  if (rho == 0.0) return Point::Zero();
  const double p = rbf_weight(D, x);
  // p^2 exp(z) = p (1 - p)
  return -(p * (1.0 - p) / D.beta) * d / rho;
}

struct FilterWeights {
  Vector p;       // p_k
  Matrix dp;      // (k, j) -> d p_k / d xi_j
};

inline FilterWeights filter_matrix(const ObscuredRegion& D, const PathObservation& obs) {
  FilterWeights f;
  f.p.resize(obs.n_y());
  f.dp = Matrix::Zero(obs.n_y(), obs.dim());
  for (int k = 0; k < obs.n_y(); ++k) {
    const Point& r = obs.points[static_cast<std::size_t>(k)];
    f.p[k] = rbf_weight(D, r);
    f.dp.row(k) = rbf_grad(D, r).transpose() * obs.jac[static_cast<std::size_t>(k)];
  }
  return f;
}

}  // namespace pathoed
