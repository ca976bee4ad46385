#pragma once

// Projected limited-memory BFGS for box (and norm-ball) constraints, Latin
// hypercube starts, multi-start driver and uniform random baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pathoed/paths.hpp"

namespace pathoed {

/// Returns f(x) and writes the gradient into g.
using ObjectiveFn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& g)>;

struct OptimizeOptions {
  double gtol = 1e-4;   // projected-gradient infinity norm
  double ftol = 1e-4;   // relative decrease per iteration
  int max_iter = 200;
  int memory = 10;
  int max_evals = 0;    // 0: 20 * max_iter
};

struct OptimizeResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;
  std::vector<double> trace;  // f after every accepted iterate, starting at f(x0)
};

/// Projection onto the box, then radially onto the ball when present.
inline Eigen::VectorXd project(const Eigen::VectorXd& x, const Bounds& b) {
  Eigen::VectorXd y = x;
  if (b.has_box()) y = y.cwiseMax(b.lower).cwiseMin(b.upper);
  if (b.has_ball()) {
    const double n = y.norm();
    if (n > b.ball_radius) y *= b.ball_radius / n;
  }
  return y;
}

inline bool feasible(const Eigen::VectorXd& x, const Bounds& b, double tol = 1e-12) {
  if (b.has_box()) {
    for (int i = 0; i < x.size(); ++i) {
      if (x[i] < b.lower[i] - tol || x[i] > b.upper[i] + tol) return false;
    }
  }
  if (b.has_ball() && x.norm() > b.ball_radius * (1.0 + tol)) return false;
  return true;
}

inline double projected_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                      const Bounds& b) {
  return (project(x - g, b) - x).lpNorm<Eigen::Infinity>();
}

namespace detail {

/// Largest alpha with x + alpha d feasible.
inline double max_feasible_step(const Eigen::VectorXd& x, const Eigen::VectorXd& d, const Bounds& b) {
  double amax = std::numeric_limits<double>::infinity();
  if (b.has_box()) {
    for (int i = 0; i < x.size(); ++i) {
      if (d[i] > 0.0) amax = std::min(amax, (b.upper[i] - x[i]) / d[i]);
      if (d[i] < 0.0) amax = std::min(amax, (b.lower[i] - x[i]) / d[i]);
    }
  }
  if (b.has_ball()) {
    const double dd = d.squaredNorm();
    if (dd > 0.0) {
      const double xd = x.dot(d);
      const double c = x.squaredNorm() - b.ball_radius * b.ball_radius;
      const double disc = xd * xd - dd * c;
      const double root = disc > 0.0 ? (-xd + std::sqrt(disc)) / dd : 0.0;
      amax = std::min(amax, std::max(root, 0.0));
    }
  }
  return std::max(amax, 0.0);
}

struct Trial {
  double alpha = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd g;
  double f = 0.0;
};

}  // namespace detail

/// Projected L-BFGS. Directions are computed on the free variables; the step
/// uses a strong-Wolfe search while the segment stays feasible and projected
/// Armijo backtracking otherwise.
inline OptimizeResult lbfgs_b(const ObjectiveFn& fg, const Eigen::VectorXd& x0, const Bounds& bounds,
                              const OptimizeOptions& opt) {
  const int n = static_cast<int>(x0.size());
  if (bounds.has_box() && (bounds.lower.size() != n || bounds.upper.size() != n)) {
    throw std::invalid_argument("lbfgs_b: bounds do not match the start point");
  }
  const int max_evals = opt.max_evals > 0 ? opt.max_evals : 20 * std::max(opt.max_iter, 1);
  const double c1 = 1e-4;
  const double c2 = 0.9;
  OptimizeResult res;
  Eigen::VectorXd x = project(x0, bounds);
  Eigen::VectorXd g(n);
  double f = fg(x, g);
  res.evaluations = 1;
  if (!std::isfinite(f) || !g.allFinite()) {
    res.x = x;
    res.f = f;
    res.status = "non-finite objective at the start point";
    return res;
  }
  res.trace.push_back(f);
  std::deque<Eigen::VectorXd> S;
  std::deque<Eigen::VectorXd> Y;

  auto eval = [&](const Eigen::VectorXd& xt, detail::Trial& t) {
    t.x = xt;
    t.g.resize(n);
    t.f = fg(xt, t.g);
    ++res.evaluations;
    return std::isfinite(t.f) && t.g.allFinite();
  };

  for (int it = 0; it < opt.max_iter; ++it) {
    const double pg = projected_gradient_norm(x, g, bounds);
    if (pg <= opt.gtol) {
      res.converged = true;
      res.status = "projected gradient below tolerance";
      break;
    }
    // Free variables: not held at a bound by the gradient.
    std::vector<bool> active(static_cast<std::size_t>(n), false);
    if (bounds.has_box()) {
      for (int i = 0; i < n; ++i) {
        const double span = 1e-10 * std::max(1.0, bounds.upper[i] - bounds.lower[i]);
        if ((x[i] <= bounds.lower[i] + span && g[i] > 0.0) ||
            (x[i] >= bounds.upper[i] - span && g[i] < 0.0)) {
          active[static_cast<std::size_t>(i)] = true;
        }
      }
    }
    auto mask = [&](Eigen::VectorXd v) {
      for (int i = 0; i < n; ++i) {
        if (active[static_cast<std::size_t>(i)]) v[i] = 0.0;
      }
      return v;
    };
    const Eigen::VectorXd gf = mask(g);
    // Two-loop recursion.
    Eigen::VectorXd q = gf;
    const int m = static_cast<int>(S.size());
    std::vector<double> a(static_cast<std::size_t>(m));
    for (int j = m - 1; j >= 0; --j) {
      const Eigen::VectorXd sj = mask(S[static_cast<std::size_t>(j)]);
      const Eigen::VectorXd yj = mask(Y[static_cast<std::size_t>(j)]);
      const double sy = sj.dot(yj);
      if (sy <= 0.0) continue;
      a[static_cast<std::size_t>(j)] = sj.dot(q) / sy;
      q -= a[static_cast<std::size_t>(j)] * yj;
    }
    double gamma0 = 1.0;
    if (m > 0) {
      const Eigen::VectorXd sl = mask(S.back());
      const Eigen::VectorXd yl = mask(Y.back());
      if (sl.dot(yl) > 0.0) gamma0 = sl.dot(yl) / yl.squaredNorm();
    } else {
      const double gn = gf.lpNorm<Eigen::Infinity>();
      gamma0 = gn > 0.0 ? std::min(1.0, 1.0 / gn) : 1.0;
      if (bounds.has_box()) {
        const double span = (bounds.upper - bounds.lower).maxCoeff();
        if (std::isfinite(span) && gn > 0.0) gamma0 = std::min(gamma0, 0.1 * span / gn);
      }
    }
    Eigen::VectorXd d = gamma0 * q;
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd sj = mask(S[static_cast<std::size_t>(j)]);
      const Eigen::VectorXd yj = mask(Y[static_cast<std::size_t>(j)]);
      const double sy = sj.dot(yj);
      if (sy <= 0.0) continue;
      const double b = yj.dot(d) / sy;
      d += (a[static_cast<std::size_t>(j)] - b) * sj;
    }
    d = -mask(d);
    if (!(d.dot(g) < 0.0)) {
      S.clear();
      Y.clear();
      d = -gamma0 * gf;
      if (!(d.dot(g) < 0.0)) {
        res.converged = true;
        res.status = "no descent direction on the free variables";
        break;
      }
    }

    const double amax = detail::max_feasible_step(x, d, bounds);
    detail::Trial best;
    bool accepted = false;
    bool projected = false;
    const double dg0 = d.dot(g);
    if (amax >= 1.0) {
      // Strong-Wolfe search on [0, amax]: bracketing, then zoom.
      struct Pt {
        double a;
        double f;
        double dg;
        bool ok;
      };
      auto zoom = [&](Pt lo, Pt hi) {
        for (int j = 0; j < 20 && res.evaluations < max_evals; ++j) {
          const double w = hi.a - lo.a;
          double a = lo.a + 0.5 * w;
          if (hi.ok) {
            const double den = 2.0 * (hi.f - lo.f - lo.dg * w);
            if (den > 0.0) {
              const double cand = lo.a - lo.dg * w * w / den;
              const double lo_edge = std::min(lo.a, hi.a) + 0.1 * std::abs(w);
              const double hi_edge = std::max(lo.a, hi.a) - 0.1 * std::abs(w);
              if (cand >= lo_edge && cand <= hi_edge) a = cand;
            }
          }
          detail::Trial t;
          const bool ok = eval(x + a * d, t);
          t.alpha = a;
          const double dga = ok ? t.g.dot(d) : 0.0;
          if (!ok || t.f > f + c1 * a * dg0 || t.f >= lo.f) {
            hi = {a, t.f, dga, ok};
          } else {
            best = t;
            accepted = true;
            if (std::abs(dga) <= -c2 * dg0) return;
            if (dga * (hi.a - lo.a) >= 0.0) hi = lo;
            lo = {a, t.f, dga, true};
          }
          if (std::abs(hi.a - lo.a) <= 1e-14 * std::max(1.0, lo.a)) return;
        }
      };
      Pt prev{0.0, f, dg0, true};
      double a = 1.0;
      for (int ls = 0; ls < 30 && res.evaluations < max_evals; ++ls) {
        detail::Trial t;
        const bool ok = eval(x + a * d, t);
        t.alpha = a;
        const double dga = ok ? t.g.dot(d) : 0.0;
        const Pt cur{a, t.f, dga, ok};
        if (!ok || t.f > f + c1 * a * dg0 || (ls > 0 && t.f >= prev.f)) {
          zoom(prev, cur);
          break;
        }
        best = t;
        accepted = true;
        if (std::abs(dga) <= -c2 * dg0) break;
        if (dga >= 0.0) {
          zoom(cur, prev);
          break;
        }
        if (a >= amax) break;
        prev = cur;
        a = std::min(2.0 * a, amax);
      }
    }
    if (!accepted) {
      // Projected backtracking.
      double alpha = 1.0;
      for (int ls = 0; ls < 40 && res.evaluations < max_evals; ++ls) {
        const Eigen::VectorXd xt = project(x + alpha * d, bounds);
        const Eigen::VectorXd step = xt - x;
        if (step.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, x.lpNorm<Eigen::Infinity>())) break;
        detail::Trial t;
        const bool ok = eval(xt, t);
        t.alpha = alpha;
        if (ok && t.f <= f + c1 * g.dot(step)) {
          best = t;
          accepted = true;
          projected = bounds.has_ball() && (xt - (x + alpha * d)).norm() > 0.0;
          break;
        }
        alpha *= 0.5;
      }
    }
    if (!accepted) {
      res.status = res.evaluations >= max_evals ? "evaluation budget exhausted" : "line search failed";
      res.converged = projected_gradient_norm(x, g, bounds) <= opt.gtol;
      break;
    }
    const Eigen::VectorXd s = best.x - x;
    const Eigen::VectorXd y = best.g - g;
    const double f_old = f;
    x = best.x;
    f = best.f;
    g = best.g;
    res.iterations = it + 1;
    res.trace.push_back(f);
    if (projected) {
      S.clear();
      Y.clear();
    } else if (s.dot(y) > 1e-10 * s.norm() * y.norm()) {
      S.push_back(s);
      Y.push_back(y);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
      }
    }
    const double denom = std::max({std::abs(f_old), std::abs(f), 1e-300});
    if ((f_old - f) / denom <= opt.ftol) {
      res.converged = true;
      res.status = "relative decrease below tolerance";
      break;
    }
    if (res.evaluations >= max_evals) {
      res.status = "evaluation budget exhausted";
      break;
    }
    if (it + 1 == opt.max_iter) res.status = "iteration limit reached";
  }
  res.x = x;
  res.f = f;
  return res;
}

/// n points whose every coordinate hits each of n equal strata once.
inline std::vector<Eigen::VectorXd> latin_hypercube(const Eigen::VectorXd& lower,
                                                    const Eigen::VectorXd& upper, int n,
                                                    std::uint64_t seed) {
  if (lower.size() != upper.size()) throw std::invalid_argument("latin_hypercube: bound sizes differ");
  if (!lower.allFinite() || !upper.allFinite()) {
    throw std::invalid_argument("latin_hypercube: bounds must be finite");
  }
  const int dim = static_cast<int>(lower.size());
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(std::max(n, 0)), Eigen::VectorXd(dim));
  if (n <= 0) return {};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int d = 0; d < dim; ++d) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i) {
      const double u = (perm[static_cast<std::size_t>(i)] + unif(rng)) / n;
      pts[static_cast<std::size_t>(i)][d] = lower[d] + u * (upper[d] - lower[d]);
    }
  }
  return pts;
}

/// Start points for a constraint set: Latin hypercube in the box, or in the
/// cube inscribed in the ball.
inline std::vector<Eigen::VectorXd> start_points(const Bounds& b, int n, std::uint64_t seed) {
  if (b.has_ball()) {
    const double h = b.ball_radius / std::sqrt(static_cast<double>(b.size()));
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(b.size(), -h);
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(b.size(), h);
    if (b.has_box()) {
      lo = lo.cwiseMax(b.lower);
      hi = hi.cwiseMin(b.upper);
    }
    return latin_hypercube(lo, hi, n, seed);
  }
  if (!b.has_box()) throw std::invalid_argument("start_points: bounds must be finite");
  return latin_hypercube(b.lower, b.upper, n, seed);
}

/// Independent uniform draws from the box, or from the ball when present.
inline std::vector<Eigen::VectorXd> uniform_designs(const Bounds& b, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  const int dim = b.size();
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(dim);
    if (b.has_ball()) {
      do {
        for (int d = 0; d < dim; ++d) x[d] = normal(rng);
        x *= b.ball_radius * std::pow(unif(rng), 1.0 / dim) / x.norm();
      } while (b.has_box() && !feasible(x, b));
    } else {
      if (!b.has_box()) throw std::invalid_argument("uniform_designs: bounds must be finite");
      for (int d = 0; d < dim; ++d) x[d] = b.lower[d] + unif(rng) * (b.upper[d] - b.lower[d]);
    }
    out.push_back(x);
  }
  return out;
}

struct MultistartOptions {
  int n_starts = 10;
  std::uint64_t seed = 2024;
  OptimizeOptions coarse{1e-4, 1e-4, 200, 10, 0};
  OptimizeOptions fine{1e-7, 1e-7, 500, 10, 0};
};

struct StartRecord {
  int index = 0;
  Eigen::VectorXd x0;
  OptimizeResult result;
};

struct MultistartResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int best_start = -1;
  std::vector<StartRecord> starts;
  OptimizeResult refine;
};

/// Coarse runs from Latin-hypercube starts, then a fine run from the best.
inline MultistartResult multistart_optimize(const ObjectiveFn& fg, const Bounds& bounds,
                                            const MultistartOptions& opt) {
  if (opt.n_starts < 1) throw std::invalid_argument("multistart: n_starts must be >= 1");
  MultistartResult out;
  const std::vector<Eigen::VectorXd> x0s = start_points(bounds, opt.n_starts, opt.seed);
  double best = std::numeric_limits<double>::infinity();
  std::string failures;
  for (int i = 0; i < opt.n_starts; ++i) {
    StartRecord rec;
    rec.index = i;
    rec.x0 = x0s[static_cast<std::size_t>(i)];
    rec.result = lbfgs_b(fg, rec.x0, bounds, opt.coarse);
    if (std::isfinite(rec.result.f) && rec.result.f < best) {
      best = rec.result.f;
      out.best_start = i;
    }
    if (!std::isfinite(rec.result.f)) failures += " start " + std::to_string(i) + ": " + rec.result.status + ";";
    out.starts.push_back(std::move(rec));
  }
  if (out.best_start < 0) throw std::runtime_error("multistart: every start failed:" + failures);
  const OptimizeResult& coarse = out.starts[static_cast<std::size_t>(out.best_start)].result;
  out.refine = lbfgs_b(fg, coarse.x, bounds, opt.fine);
  if (std::isfinite(out.refine.f) && out.refine.f <= coarse.f) {
    out.x = out.refine.x;
    out.f = out.refine.f;
  } else {
    out.x = coarse.x;
    out.f = coarse.f;
  }
  return out;
}

}  // namespace pathoed
