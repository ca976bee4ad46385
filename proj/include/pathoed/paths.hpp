#pragma once

// Sensor path families r(t; xi): Bezier curves over the inversion window and
// truncated Fourier series about a center point.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pathoed/mesh.hpp"

namespace pathoed {

using Jacobian = Eigen::Matrix<double, 2, Eigen::Dynamic>;

struct PenaltyValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

struct Bounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double ball_radius = 0.0;  // > 0 adds the constraint ||xi||_2 <= ball_radius

  int size() const { return static_cast<int>(lower.size()); }
  bool has_box() const {
    return lower.size() > 0 && lower.allFinite() && upper.allFinite();
  }
  bool has_ball() const { return ball_radius > 0.0; }
};

class PathModel {
 public:
  virtual ~PathModel() = default;

  virtual std::string family() const = 0;
  virtual int dim() const = 0;
  double t_begin() const { return ta_; }
  double t_end() const { return tb_; }
  double duration() const { return tb_ - ta_; }

  virtual Point eval(double t, const Eigen::VectorXd& xi) const = 0;
  virtual Jacobian jacobian(double t, const Eigen::VectorXd& xi) const = 0;
  /// gamma/2 times the time integral of |r''|^2 over the window, with gradient.
  virtual PenaltyValue accel_penalty(const Eigen::VectorXd& xi, double gamma) const = 0;

  bool contains_time(double t) const {
    const double tol = 1e-12 * std::max(1.0, std::abs(tb_));
    return t >= ta_ - tol && t <= tb_ + tol;
  }

 protected:
  PathModel(double ta, double tb) : ta_(ta), tb_(tb) {
    if (!(tb > ta)) throw std::invalid_argument("path: window must satisfy t_a < t_b");
  }

  void check_time(double t) const {
    if (!contains_time(t)) {
      throw std::invalid_argument("path: time " + std::to_string(t) + " outside the window [" +
                                  std::to_string(ta_) + ", " + std::to_string(tb_) + "]");
    }
  }

  void check_dim(const Eigen::VectorXd& xi) const {
    if (xi.size() != dim()) {
      throw std::invalid_argument("path: design vector has length " + std::to_string(xi.size()) +
                                  ", expected " + std::to_string(dim()));
    }
  }

  double ta_;
  double tb_;
};

/// Bernstein basis values B_{j,n}(s), j = 0..n.
inline Eigen::VectorXd bernstein(int n, double s) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 1);
  if (n < 0) return b;
  b[0] = 1.0;
  for (int k = 1; k <= n; ++k) {
    for (int j = k; j >= 1; --j) b[j] = (1.0 - s) * b[j] + s * b[j - 1];
    b[0] *= (1.0 - s);
  }
  return b;
}

enum class Pinning { free, fixed_endpoints, closed };

inline Pinning parse_pinning(const std::string& s) {
  if (s == "free") return Pinning::free;
  if (s == "fixed") return Pinning::fixed_endpoints;
  if (s == "closed") return Pinning::closed;
  throw std::invalid_argument("unknown endpoint mode '" + s + "' (free | fixed | closed)");
}

class BezierPath final : public PathModel {
 public:
  /// `pinned` holds the pinned points: p_0 and p_N for fixed endpoints, the
  /// common start/end point for a closed curve, ignored when free.
  BezierPath(int degree, Pinning mode, std::vector<Point> pinned, double ta, double tb,
             int quad_points = 401)
      : PathModel(ta, tb), degree_(degree), mode_(mode), pinned_(std::move(pinned)),
        quad_points_(quad_points) {
    if (degree < 1) throw std::invalid_argument("bezier: degree must be >= 1");
    if (mode == Pinning::fixed_endpoints && pinned_.size() != 2) {
      throw std::invalid_argument("bezier: fixed endpoints need two points");
    }
    if (mode == Pinning::closed && pinned_.size() != 1) {
      throw std::invalid_argument("bezier: closed curves need one anchor point");
    }
    if (mode == Pinning::closed && degree < 2) {
      throw std::invalid_argument("bezier: closed curves need degree >= 2");
    }
    if (quad_points < 2) throw std::invalid_argument("bezier: need >= 2 quadrature points");
    first_free_ = (mode == Pinning::free) ? 0 : 1;
    last_free_ = (mode == Pinning::free) ? degree : degree - 1;
  }

  std::string family() const override { return "bezier"; }
  int degree() const { return degree_; }
  Pinning pinning() const { return mode_; }
  int dim() const override { return 2 * (last_free_ - first_free_ + 1); }
  int first_free() const { return first_free_; }

  /// Design vector from a full control-point list (pinned entries dropped).
  Eigen::VectorXd design_from_points(const std::vector<Point>& pts) const {
    if (static_cast<int>(pts.size()) != degree_ + 1) {
      throw std::invalid_argument("bezier: expected " + std::to_string(degree_ + 1) +
                                  " control points");
    }
    Eigen::VectorXd xi(dim());
    for (int j = first_free_; j <= last_free_; ++j) {
      xi[2 * (j - first_free_)] = pts[static_cast<std::size_t>(j)][0];
      xi[2 * (j - first_free_) + 1] = pts[static_cast<std::size_t>(j)][1];
    }
    return xi;
  }

  std::vector<Point> control_points(const Eigen::VectorXd& xi) const {
    check_dim(xi);
    std::vector<Point> p(static_cast<std::size_t>(degree_) + 1);
    for (int j = first_free_; j <= last_free_; ++j) {
      p[static_cast<std::size_t>(j)] = Point(xi[2 * (j - first_free_)], xi[2 * (j - first_free_) + 1]);
    }
    if (mode_ == Pinning::fixed_endpoints) {
      p.front() = pinned_[0];
      p.back() = pinned_[1];
    } else if (mode_ == Pinning::closed) {
      p.front() = pinned_[0];
      p.back() = pinned_[0];
    }
    return p;
  }

  double to_local(double t) const { return std::clamp((t - ta_) / (tb_ - ta_), 0.0, 1.0); }

  Point eval(double t, const Eigen::VectorXd& xi) const override {
    check_time(t);
    std::vector<Point> p = control_points(xi);
    const double s = to_local(t);
    // de Casteljau
    for (int k = degree_; k >= 1; --k) {
      for (int j = 0; j < k; ++j) {
        p[static_cast<std::size_t>(j)] =
            (1.0 - s) * p[static_cast<std::size_t>(j)] + s * p[static_cast<std::size_t>(j) + 1];
      }
    }
    return p[0];
  }

  Jacobian jacobian(double t, const Eigen::VectorXd& xi) const override {
    check_time(t);
    check_dim(xi);
    const Eigen::VectorXd b = bernstein(degree_, to_local(t));
    Jacobian J = Jacobian::Zero(2, dim());
    for (int j = first_free_; j <= last_free_; ++j) {
      J(0, 2 * (j - first_free_)) = b[j];
      J(1, 2 * (j - first_free_) + 1) = b[j];
    }
    return J;
  }

  /// Weights w_j(s) with d^2 r/dt^2 = sum_j w_j(s) p_j.
  Eigen::VectorXd accel_weights(double s) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(degree_ + 1);
    if (degree_ < 2) return w;
    const Eigen::VectorXd b = bernstein(degree_ - 2, s);
    const double len = tb_ - ta_;
    const double scale = degree_ * (degree_ - 1) / (len * len);
    for (int j = 0; j <= degree_ - 2; ++j) {
      w[j] += scale * b[j];
      w[j + 1] -= 2.0 * scale * b[j];
      w[j + 2] += scale * b[j];
    }
    return w;
  }

  Point acceleration(double t, const Eigen::VectorXd& xi) const {
    check_time(t);
    const std::vector<Point> p = control_points(xi);
    const Eigen::VectorXd w = accel_weights(to_local(t));
    Point a = Point::Zero();
    for (int j = 0; j <= degree_; ++j) a += w[j] * p[static_cast<std::size_t>(j)];
    return a;
  }

  /// Composite trapezoid rule on a uniform grid of quad_points times.
  PenaltyValue accel_penalty(const Eigen::VectorXd& xi, double gamma) const override {
    if (gamma < 0.0) throw std::invalid_argument("accel_penalty: gamma must be >= 0");
    check_dim(xi);
    PenaltyValue out;
    out.gradient = Eigen::VectorXd::Zero(dim());
    if (gamma == 0.0 || degree_ < 2) return out;
    const std::vector<Point> p = control_points(xi);
    const int n = quad_points_;
    const double h = (tb_ - ta_) / (n - 1);
    for (int q = 0; q < n; ++q) {
      const double wq = (q == 0 || q == n - 1) ? 0.5 * h : h;
      const Eigen::VectorXd w = accel_weights(static_cast<double>(q) / (n - 1));
      Point a = Point::Zero();
      for (int j = 0; j <= degree_; ++j) a += w[j] * p[static_cast<std::size_t>(j)];
      out.value += 0.5 * gamma * wq * a.squaredNorm();
      for (int j = first_free_; j <= last_free_; ++j) {
        out.gradient[2 * (j - first_free_)] += gamma * wq * w[j] * a[0];
        out.gradient[2 * (j - first_free_) + 1] += gamma * wq * w[j] * a[1];
      }
    }
    return out;
  }

  /// Box bounds on every free control-point coordinate.
  Bounds hull_box_bounds(const Point& lo, const Point& hi) const {
    Bounds b;
    b.lower.resize(dim());
    b.upper.resize(dim());
    for (int k = 0; k < dim(); k += 2) {
      b.lower[k] = lo[0];
      b.lower[k + 1] = lo[1];
      b.upper[k] = hi[0];
      b.upper[k + 1] = hi[1];
    }
    return b;
  }

 private:
  int degree_;
  Pinning mode_;
  std::vector<Point> pinned_;
  int quad_points_;
  int first_free_;
  int last_free_;
};

class FourierPath final : public PathModel {
 public:
  FourierPath(int modes, const Point& center, double ta, double tb)
      : PathModel(ta, tb), modes_(modes), center_(center) {
    if (modes < 1) throw std::invalid_argument("fourier: modes must be >= 1");
  }

  std::string family() const override { return "fourier"; }
  int modes() const { return modes_; }
  int dim() const override { return 4 * modes_; }
  const Point& center() const { return center_; }
  double omega(int j) const { return 2.0 * std::numbers::pi * j / (tb_ - ta_); }

  /// T_f(t), so that r(t; xi) = center + T_f(t) xi. Defined for every t.
  Jacobian basis_matrix(double t) const {
    Jacobian T = Jacobian::Zero(2, dim());
    for (int j = 1; j <= modes_; ++j) {
      const double c = std::cos(omega(j) * t);
      const double s = std::sin(omega(j) * t);
      const int k = 4 * (j - 1);
      T(0, k) = c;
      T(0, k + 1) = s;
      T(1, k + 2) = c;
      T(1, k + 3) = s;
    }
    return T;
  }

  Point eval(double t, const Eigen::VectorXd& xi) const override {
    check_time(t);
    check_dim(xi);
    return center_ + basis_matrix(t) * xi;
  }

  Jacobian jacobian(double t, const Eigen::VectorXd& xi) const override {
    check_time(t);
    check_dim(xi);
    return basis_matrix(t);
  }

  Point acceleration(double t, const Eigen::VectorXd& xi) const {
    check_dim(xi);
    Point a = Point::Zero();
    for (int j = 1; j <= modes_; ++j) {
      const double w = omega(j);
      const double c = std::cos(w * t);
      const double s = std::sin(w * t);
      const int k = 4 * (j - 1);
      a[0] -= w * w * (xi[k] * c + xi[k + 1] * s);
      a[1] -= w * w * (xi[k + 2] * c + xi[k + 3] * s);
    }
    return a;
  }

  PenaltyValue accel_penalty(const Eigen::VectorXd& xi, double gamma) const override {
    if (gamma < 0.0) throw std::invalid_argument("accel_penalty: gamma must be >= 0");
    check_dim(xi);
    PenaltyValue out;
    out.gradient = Eigen::VectorXd::Zero(dim());
    const double len = tb_ - ta_;
    for (int j = 1; j <= modes_; ++j) {
      const double w4 = std::pow(omega(j), 4);
      for (int k = 4 * (j - 1); k < 4 * j; ++k) {
        out.value += gamma * len / 4.0 * w4 * xi[k] * xi[k];
        out.gradient[k] = gamma * len / 2.0 * w4 * xi[k];
      }
    }
    return out;
  }

  /// Spectral norm of T_f(t); T_f T_f^T = N_f I for every t.
  double spectral_norm_Tf() const { return std::sqrt(static_cast<double>(modes_)); }

  double spectral_norm_Tf_numeric(double t) const {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(basis_matrix(t)));
    return svd.singularValues()[0];
  }

  /// Bound on ||xi||_2 that keeps the path within distance R of the center.
  double disk_constraint_radius(double R) const {
    if (!(R > 0.0)) throw std::invalid_argument("disk constraint: radius must be positive");
    return R / std::sqrt(static_cast<double>(modes_));
  }

  Bounds disk_bounds(double R) const {
    Bounds b;
    b.ball_radius = disk_constraint_radius(R);
    b.lower = Eigen::VectorXd::Constant(dim(), -b.ball_radius);
    b.upper = Eigen::VectorXd::Constant(dim(), b.ball_radius);
    return b;
  }

  /// Coefficient bounds that keep the path inside center +- half_width.
  Bounds box_constraint_bounds(const Point& half_width) const {
    if (!(half_width[0] > 0.0) || !(half_width[1] > 0.0)) {
      throw std::invalid_argument("box constraint: half-widths must be positive");
    }
    const double eps = 1e-12;
    if (center_[0] - half_width[0] < -eps || center_[0] + half_width[0] > 1.0 + eps ||
        center_[1] - half_width[1] < -eps || center_[1] + half_width[1] > 1.0 + eps) {
      throw std::invalid_argument("box constraint: box exceeds the unit square");
    }
    Bounds b;
    b.lower.resize(dim());
    b.upper.resize(dim());
    for (int j = 0; j < modes_; ++j) {
      const double bx = half_width[0] / (2.0 * modes_);
      const double by = half_width[1] / (2.0 * modes_);
      b.upper.segment(4 * j, 4) << bx, bx, by, by;
    }
    b.lower = -b.upper;
    return b;
  }

 private:
  int modes_;
  Point center_;
};

}  // namespace pathoed
