#pragma once

// Bayesian linear inverse problem along a sensor path: misfit Hessian,
// low-rank posterior, goal-oriented c-optimal criterion and its design
// gradient, MAP point, posterior sampling and goal statistics.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pathoed/forward.hpp"
#include "pathoed/linops.hpp"
#include "pathoed/mesh.hpp"
#include "pathoed/observation.hpp"
#include "pathoed/paths.hpp"
#include "pathoed/prior.hpp"

namespace pathoed {

struct ProblemSpec {
  int n_side = 35;
  double T = 1.0;
  int n_t = 400;
  double alpha = 0.15;
  VelocityField velocity = velocity::constant(0.0, 0.0);
  AmplitudeFn amplitude = amplitude::constant(1.0);
  std::vector<std::string> dirichlet_edges;

  double a1 = 0.55;
  double a2 = 0.006;
  Vector prior_mean;  // empty: constant prior_mean_value
  double prior_mean_value = 0.0;

  double sigma2 = 1e-3;

  double obs_ta = 0.2;
  double obs_tb = 0.4;
  int obs_stride = 1;

  Point goal_lo = Point(0.5, 0.1);
  Point goal_hi = Point(0.9, 0.5);
  double goal_t0 = 0.8;
  double goal_t1 = 1.0;

  std::optional<ObscuredRegion> obscured;
};

/// Z(m) = <<V, S m>>_M with V = v_x v_t^T; c = S^* V.
struct GoalFunctional {
  Vector v_x;
  std::vector<bool> v_t;
  Vector c;
};

/// Indicator of the nodes strictly inside the box and of the snapshot columns
/// whose times lie in [t0, t1].
inline GoalFunctional make_goal(const StructuredMesh& mesh, const ForwardModel& fwd,
                                const Point& lo, const Point& hi, double t0, double t1) {
  if (!(hi[0] > lo[0]) || !(hi[1] > lo[1])) throw std::invalid_argument("goal: empty box");
  if (!(t1 >= t0)) throw std::invalid_argument("goal: window must satisfy t0 <= t1");
  GoalFunctional g;
  g.v_x = Vector::Zero(mesh.num_nodes());
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    const Point& x = mesh.node(i);
    if (x[0] > lo[0] && x[0] < hi[0] && x[1] > lo[1] && x[1] < hi[1]) g.v_x[i] = 1.0;
  }
  const double tol = 1e-9 * fwd.dt();
  g.v_t.assign(static_cast<std::size_t>(fwd.n_t()), false);
  int last = 0;
  for (int c = 0; c < fwd.n_t(); ++c) {
    const double t = fwd.time_of(c);
    if (t >= t0 - tol && t <= t1 + tol) {
      g.v_t[static_cast<std::size_t>(c)] = true;
      last = c + 1;
    }
  }
  const Vector Mv = fwd.mass() * g.v_x;
  Matrix G = Matrix::Zero(mesh.num_nodes(), last);
  for (int c = 0; c < last; ++c) {
    if (g.v_t[static_cast<std::size_t>(c)]) G.col(c) = fwd.weights()[c] * Mv;
  }
  g.c = fwd.apply_adjoint_dual(G);
  return g;
}

inline Snapshot goal_snapshot(const GoalFunctional& g, const Vector& weights) {
  Snapshot V(static_cast<int>(g.v_x.size()), weights);
  for (int c = 0; c < V.n_t(); ++c) {
    if (g.v_t[static_cast<std::size_t>(c)]) V.values.col(c) = g.v_x;
  }
  return V;
}

/// Mesh, matrices, prior, forward model, schedule, goal and noise level.
class ProblemSetup {
 public:
  explicit ProblemSetup(const ProblemSpec& spec)
      : spec_(spec),
        mesh_(spec.n_side),
        M_(assemble_mass(mesh_)),
        Ks_(assemble_stiffness(mesh_)),
        prior_(M_, Ks_, spec.a1, spec.a2,
               spec.prior_mean.size() > 0 ? spec.prior_mean
                                          : Vector(Vector::Constant(mesh_.num_nodes(), spec.prior_mean_value))),
        forward_(mesh_, M_, Ks_, forward_settings(spec, mesh_)),
        schedule_(make_schedule(forward_.dt(), forward_.n_t(), spec.obs_ta, spec.obs_tb, spec.obs_stride)),
        goal_(make_goal(mesh_, forward_, spec.goal_lo, spec.goal_hi, spec.goal_t0, spec.goal_t1)) {
    if (!(spec.sigma2 > 0.0)) throw std::invalid_argument("noise: sigma2 must be positive");
    if (spec.obscured) spec.obscured->validate();
    gamma_c_ = prior_.apply_gamma_pr(goal_.c);
    prior_goal_var_ = m_inner(gamma_c_, goal_.c, M_);
  }

  ProblemSetup(const ProblemSetup&) = delete;
  ProblemSetup& operator=(const ProblemSetup&) = delete;

  const ProblemSpec& spec() const { return spec_; }
  const StructuredMesh& mesh() const { return mesh_; }
  const SparseMatrix& mass() const { return M_; }
  const SparseMatrix& stiffness() const { return Ks_; }
  const EllipticPrior& prior() const { return prior_; }
  const ForwardModel& forward() const { return forward_; }
  const ObservationSchedule& schedule() const { return schedule_; }
  const GoalFunctional& goal() const { return goal_; }
  double sigma2() const { return spec_.sigma2; }
  const std::optional<ObscuredRegion>& obscured() const { return spec_.obscured; }
  int n_x() const { return mesh_.num_nodes(); }

  /// Gamma_pr c and the prior variance of the goal.
  const Vector& gamma_c() const { return gamma_c_; }
  double prior_goal_variance() const { return prior_goal_var_; }

  /// Replaces the schedule (used by monotonicity studies).
  void set_schedule(ObservationSchedule s) { schedule_ = std::move(s); }

 private:
  static ForwardSettings forward_settings(const ProblemSpec& spec, const StructuredMesh& mesh) {
    ForwardSettings f;
    f.alpha = spec.alpha;
    f.T = spec.T;
    f.n_t = spec.n_t;
    f.velocity = spec.velocity;
    f.amplitude = spec.amplitude;
    f.dirichlet_nodes = mesh.edge_nodes(spec.dirichlet_edges);
    return f;
  }

  ProblemSpec spec_;
  StructuredMesh mesh_;
  SparseMatrix M_;
  SparseMatrix Ks_;
  EllipticPrior prior_;
  ForwardModel forward_;
  ObservationSchedule schedule_;
  GoalFunctional goal_;
  Vector gamma_c_;
  double prior_goal_var_ = 0.0;
};

/// F m = B S m for a parameter vector.
inline Vector apply_f(const ProblemSetup& s, const PathObservation& obs, const Vector& m) {
  if (obs.n_y() == 0) return Vector();
  const Matrix U = s.forward().solve_columns(m, obs.schedule.last_col() + 1);
  return observe(obs, U);
}

/// F^* y = S^* B^* y.
inline Vector apply_f_adjoint(const ProblemSetup& s, const PathObservation& obs, const Vector& y) {
  if (obs.n_y() == 0) return Vector::Zero(s.n_x());
  return s.forward().apply_adjoint_dual(sources_to_dual(observation_sources(obs, y), s.n_x()));
}

/// sigma^{-2} F^* diag(omega) F x; omega = 1 - p for the filtered Hessian,
/// all ones (or empty) otherwise.
inline Vector misfit_hessian_apply(const ProblemSetup& s, const PathObservation& obs,
                                   const Vector& x, const Vector& omega = Vector()) {
  if (obs.n_y() == 0) return Vector::Zero(s.n_x());
  Vector y = apply_f(s, obs, x);
  if (omega.size() > 0) y = y.cwiseProduct(omega);
  return apply_f_adjoint(s, obs, y) / s.sigma2();
}

enum class LowRankMethod { lanczos, measurement_space };

inline LowRankMethod parse_lowrank_method(const std::string& s) {
  if (s == "lanczos") return LowRankMethod::lanczos;
  if (s == "measurement-space") return LowRankMethod::measurement_space;
  throw std::invalid_argument("unknown low-rank method '" + s + "' (lanczos | measurement-space)");
}

struct LowRankOptions {
  LowRankMethod method = LowRankMethod::measurement_space;
  int r = -1;  // -1: n_y
  int k = -1;  // -1: r + 10
  std::uint64_t seed = 7;
};

/// Leading eigenpairs (lambda_i, v_i) of Gamma_pr^{1/2} H_mis Gamma_pr^{1/2}
/// in the M-inner product, with vt_i = Gamma_pr^{1/2} v_i.
struct LowRankPosterior {
  Vector lambda;
  Matrix v;
  Matrix vt;
  std::vector<bool> converged;
  int iterations = 0;
  LowRankMethod method = LowRankMethod::measurement_space;
  Matrix z;  // Gamma_pr^{1/2} F^* diag(omega)^{1/2}; measurement-space method only

  int rank() const { return static_cast<int>(lambda.size()); }

  /// lambda/(1+lambda) for converged pairs, 0 otherwise.
  Vector shrink() const {
    Vector d(rank());
    for (int i = 0; i < rank(); ++i) {
      d[i] = converged[static_cast<std::size_t>(i)] ? lambda[i] / (1.0 + lambda[i]) : 0.0;
    }
    return d;
  }
};

namespace detail {

inline LowRankPosterior low_rank_lanczos(const ProblemSetup& s, const PathObservation& obs,
                                         const Vector& omega, int r, int k, std::uint64_t seed) {
  const EllipticPrior& prior = s.prior();
  auto apply = [&](const Vector& x) {
    return prior.apply_sqrt(misfit_hessian_apply(s, obs, prior.apply_sqrt(x), omega));
  };
  const LanczosResult lr = lanczos_m(apply, s.mass(), r, k, seed);
  LowRankPosterior post;
  post.method = LowRankMethod::lanczos;
  post.lambda = lr.eigenvalues;
  post.v = lr.eigenvectors;
  post.vt = prior.apply_sqrt(lr.eigenvectors);
  post.converged = lr.converged;
  post.iterations = lr.iterations;
  return post;
}

/// Exact eigenpairs through the n_y x n_y matrix sigma^{-2} F Gamma_pr F^*:
/// with Z = Gamma_pr^{1/2} F^* diag(omega)^{1/2}, the nonzero spectrum of the
/// preconditioned Hessian equals that of sigma^{-2} Z^T M Z, and
/// v_i = Z u_i / (sigma sqrt(lambda_i)).
inline LowRankPosterior low_rank_measurement(const ProblemSetup& s, const PathObservation& obs,
                                             const Vector& omega, int r) {
  const int n_y = obs.n_y();
  const Vector ones = Vector::Ones(n_y);
  const std::vector<PointInput> src = observation_sources(obs, ones);
  Matrix W = s.forward().apply_adjoint_points(src);
  if (omega.size() > 0) W = W * omega.cwiseSqrt().asDiagonal();
  const Matrix Z = s.prior().apply_sqrt(W);
  Matrix G = Z.transpose() * (s.mass() * Z);
  G = 0.5 * (G + G.transpose()) / s.sigma2();
  Eigen::SelfAdjointEigenSolver<Matrix> es(G);
  const Vector& ev = es.eigenvalues();  // ascending
  const double lam1 = n_y > 0 ? std::max(ev[n_y - 1], 0.0) : 0.0;
  LowRankPosterior post;
  post.method = LowRankMethod::measurement_space;
  post.lambda = Vector::Zero(r);
  post.v = Matrix::Zero(s.n_x(), r);
  post.converged.assign(static_cast<std::size_t>(r), true);
  const double sigma = std::sqrt(s.sigma2());
  for (int i = 0; i < std::min(r, n_y); ++i) {
    const double lam = ev[n_y - 1 - i];
    if (!(lam > 1e-12 * lam1)) continue;
    post.lambda[i] = lam;
    post.v.col(i) = Z * es.eigenvectors().col(n_y - 1 - i) / (sigma * std::sqrt(lam));
  }
  // Rounding in Z u_i is amplified by sqrt(lambda_1 / lambda_i); restore
  // M-orthonormality in order of decreasing eigenvalue.
  for (int i = 1; i < std::min(r, n_y); ++i) {
    if (post.lambda[i] == 0.0) continue;
    Vector vi = post.v.col(i);
    for (int pass = 0; pass < 2; ++pass) {
      const Vector h = post.v.leftCols(i).transpose() * (s.mass() * vi);
      vi.noalias() -= post.v.leftCols(i) * h;
    }
    post.v.col(i) = vi / m_norm(vi, s.mass());
  }
  post.vt = s.prior().apply_sqrt(post.v);
  post.iterations = 0;
  post.z = Z;
  return post;
}

}  // namespace detail

inline LowRankPosterior build_low_rank(const ProblemSetup& s, const PathObservation& obs,
                                       const LowRankOptions& opt, const Vector& omega = Vector()) {
  const int n_y = obs.n_y();
  const int r = opt.r < 0 ? n_y : opt.r;
  if (r > n_y) {
    throw std::invalid_argument("low-rank: r = " + std::to_string(r) + " exceeds n_y = " +
                                std::to_string(n_y));
  }
  if (r == 0) {
    LowRankPosterior post;
    post.method = opt.method;
    post.v = Matrix::Zero(s.n_x(), 0);
    post.vt = Matrix::Zero(s.n_x(), 0);
    return post;
  }
  if (opt.method == LowRankMethod::lanczos) {
    const int k = opt.k < 0 ? r + 10 : opt.k;
    return detail::low_rank_lanczos(s, obs, omega, r, k, opt.seed);
  }
  return detail::low_rank_measurement(s, obs, omega, r);
}

/// Gamma_po,r m = Gamma_pr m - sum_i lambda_i/(1+lambda_i) <m, vt_i>_M vt_i.
inline Vector apply_gamma_po_r(const ProblemSetup& s, const LowRankPosterior& post, const Vector& m) {
  Vector out = s.prior().apply_gamma_pr(m);
  if (post.rank() == 0) return out;
  const Vector coef = post.vt.transpose() * (s.mass() * m);
  out.noalias() -= post.vt * post.shrink().cwiseProduct(coef);
  return out;
}

/// Gamma_po,r c and <Gamma_po,r c, c>_M. The prior variance of the goal can
/// exceed the posterior one by six orders of magnitude, so the difference
/// <Gamma_pr c, c> - sum_i ... is never formed. At full rank the variance is
/// the residual of
///   min_w |L^T (s - Z w)|^2 + sigma^2 |w|^2,  s = Gamma_pr^{1/2} c, M = L L^T,
/// solved by Householder QR; otherwise s is split as V a + s_perp.
struct GoalPosterior {
  Vector z;
  double variance = 0.0;
};

inline GoalPosterior goal_posterior(const ProblemSetup& s, const LowRankPosterior& post, const Vector& c) {
  const Vector sc = s.prior().apply_sqrt(c);
  GoalPosterior g;
  const Eigen::Index n_y = post.z.cols();
  if (n_y > 0 && post.rank() == n_y) {
    const SpdFactor& mf = s.prior().mass_factor();
    const Eigen::Index n_x = post.z.rows();
    Matrix A(n_x + n_y, n_y);
    A.topRows(n_x) = mf.apply_lt(post.z);
    A.bottomRows(n_y) = std::sqrt(s.sigma2()) * Matrix::Identity(n_y, n_y);
    Vector b = Vector::Zero(n_x + n_y);
    b.head(n_x) = mf.apply_lt(sc);
    const Eigen::HouseholderQR<Matrix> qr(A);
    const Vector qb = qr.householderQ().adjoint() * b;
    g.variance = qb.tail(n_x).squaredNorm();
    const Vector w = qr.matrixQR().topRows(n_y).triangularView<Eigen::Upper>().solve(qb.head(n_y));
    g.z = s.prior().apply_sqrt(Vector(sc - post.z * w));
    return g;
  }
  if (post.rank() == 0) {
    g.variance = m_inner(sc, sc, s.mass());
    g.z = s.prior().apply_sqrt(sc);
    return g;
  }
  const Vector a = post.v.transpose() * (s.mass() * sc);
  const Vector perp = sc - post.v * a;
  Vector scaled(post.rank());
  for (int i = 0; i < post.rank(); ++i) {
    scaled[i] = post.converged[static_cast<std::size_t>(i)] ? a[i] / (1.0 + post.lambda[i]) : a[i];
  }
  g.variance = a.dot(scaled) + m_inner(perp, perp, s.mass());
  g.z = s.prior().apply_sqrt(Vector(perp + post.v * scaled));
  return g;
}

struct CriterionOptions {
  bool filtered = false;
  double gamma = 0.0;
  bool gradient = true;
  LowRankOptions lowrank;
};

struct CriterionResult {
  double psi = 0.0;        // criterion plus penalty
  double psi_data = 0.0;   // posterior goal variance only
  double penalty = 0.0;
  Vector grad;
  int clamped = 0;
  int n_y = 0;
};

inline Vector filter_omega(const ProblemSetup& s, const PathObservation& obs, bool filtered,
                           FilterWeights* fw_out = nullptr) {
  if (!filtered || !s.obscured()) return Vector();
  FilterWeights fw = filter_matrix(*s.obscured(), obs);
  Vector omega = Vector::Ones(obs.n_y()) - fw.p;
  if (fw_out) *fw_out = std::move(fw);
  return omega;
}

/// Psi(xi) = <Gamma_po(xi) c, c>_M (+ acceleration penalty) and its gradient.
inline CriterionResult criterion_and_gradient(const ProblemSetup& s, const PathModel& path,
                                              const Vector& xi, const CriterionOptions& opt) {
  const PathObservation obs = build_observation(s.mesh(), path, xi, s.schedule());
  FilterWeights fw;
  const Vector omega = filter_omega(s, obs, opt.filtered, &fw);
  const LowRankPosterior post = build_low_rank(s, obs, opt.lowrank, omega);

  CriterionResult res;
  res.n_y = obs.n_y();
  res.clamped = obs.clamped;
  const Vector& c = s.goal().c;
  const GoalPosterior gp = goal_posterior(s, post, c);
  const Vector& z = gp.z;
  res.psi_data = gp.variance;
  res.grad = Vector::Zero(path.dim());

  if (opt.gradient && obs.n_y() > 0) {
    // d_k = (F Gamma_po c)_k and its design derivative at fixed state.
    const Matrix U = s.forward().solve_columns(z, obs.schedule.last_col() + 1);
    const Vector d = observe(obs, U);
    const Matrix Dd = observe_derivative(obs, U);
    const double inv_s2 = 1.0 / s.sigma2();
    for (int k = 0; k < obs.n_y(); ++k) {
      const double wk = omega.size() > 0 ? omega[k] : 1.0;
      res.grad.noalias() -= 2.0 * inv_s2 * wk * d[k] * Dd.row(k).transpose();
      if (omega.size() > 0) res.grad.noalias() += inv_s2 * d[k] * d[k] * fw.dp.row(k).transpose();
    }
  }
  if (opt.gamma > 0.0) {
    const PenaltyValue pen = path.accel_penalty(xi, opt.gamma);
    res.penalty = pen.value;
    if (opt.gradient) res.grad += pen.gradient;
  }
  res.psi = res.psi_data + res.penalty;
  return res;
}

/// m_MAP = Gamma_po,r (sigma^{-2} F^* y + Gamma_pr^{-1} m_pr).
inline Vector compute_map(const ProblemSetup& s, const PathObservation& obs,
                          const LowRankPosterior& post, const Vector& y) {
  if (y.size() != obs.n_y()) throw std::invalid_argument("compute_map: data has wrong length");
  Vector rhs = apply_f_adjoint(s, obs, y) / s.sigma2();
  // Gamma_pr^{-1} m_pr followed by Gamma_pr cancels; apply it in one piece.
  Vector out = s.prior().apply_gamma_pr(rhs) + s.prior().mean();
  if (post.rank() > 0) {
    const Vector full = rhs + s.prior().apply_inv(s.prior().mean());
    const Vector coef = post.vt.transpose() * (s.mass() * full);
    out.noalias() -= post.vt * post.shrink().cwiseProduct(coef);
  }
  return out;
}

/// map + Gamma_pr^{1/2}(g + sum_i (1/sqrt(lambda_i+1) - 1) <g, v_i>_M v_i),
/// g = L_M^{-T} z with z standard normal.
inline Vector posterior_sample_from_normal(const ProblemSetup& s, const LowRankPosterior& post,
                                           const Vector& map, const Vector& z) {
  Vector g = s.prior().mass_factor().solve_lt(z);
  if (post.rank() > 0) {
    const Vector coef = post.v.transpose() * (s.mass() * g);
    Vector scale(post.rank());
    for (int i = 0; i < post.rank(); ++i) {
      scale[i] = post.converged[static_cast<std::size_t>(i)] ? 1.0 / std::sqrt(post.lambda[i] + 1.0) - 1.0 : 0.0;
    }
    g.noalias() += post.v * scale.cwiseProduct(coef);
  }
  return map + s.prior().apply_sqrt(g);
}

inline Vector posterior_sample(const ProblemSetup& s, const LowRankPosterior& post,
                               const Vector& map, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(s.n_x());
  for (int i = 0; i < s.n_x(); ++i) z[i] = normal(rng);
  return posterior_sample_from_normal(s, post, map, z);
}

/// Nodal variances of the posterior coefficient vector:
/// diag(K^{-1} M K^{-1}) - sum_i lambda_i/(1+lambda_i) vt_i^2.
inline Vector variance_field(const Vector& prior_variance, const LowRankPosterior& post) {
  Vector v = prior_variance;
  if (post.rank() > 0) {
    const Vector d = post.shrink();
    for (int i = 0; i < post.rank(); ++i) v.noalias() -= d[i] * post.vt.col(i).cwiseAbs2();
  }
  return v;
}

struct GoalDensity {
  double mean = 0.0;
  double variance = 0.0;
  double cv = std::numeric_limits<double>::infinity();
  bool cv_defined = false;

  double pdf(double z) const {
    const double sd = std::sqrt(variance);
    const double u = (z - mean) / sd;
    return std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * std::numbers::pi));
  }
};

inline GoalDensity goal_density(double mean, double variance) {
  GoalDensity g;
  g.mean = mean;
  g.variance = variance;
  if (mean != 0.0) {
    g.cv = std::sqrt(std::max(variance, 0.0)) / std::abs(mean);
    g.cv_defined = true;
  }
  return g;
}

inline GoalDensity prior_goal_density(const ProblemSetup& s) {
  return goal_density(m_inner(s.goal().c, s.prior().mean(), s.mass()), s.prior_goal_variance());
}

inline GoalDensity posterior_goal_density(const ProblemSetup& s, const LowRankPosterior& post,
                                          const Vector& map) {
  return goal_density(m_inner(s.goal().c, map, s.mass()), goal_posterior(s, post, s.goal().c).variance);
}

}  // namespace pathoed
