#pragma once

// Implicit-Euler advection-diffusion solution operator S and its adjoint.
//
//   A u_{l+1} = M u_l + a_{l+1} dt M m,   u_0 = 0,
//   A = M + dt (alpha K_s + N_adv),
//
// with homogeneous Dirichlet data on a chosen node set. Snapshot column c
// holds u at time index c+1 (t = (c+1) dt).

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pathoed/linops.hpp"
#include "pathoed/mesh.hpp"

namespace pathoed {

using AmplitudeFn = std::function<double(double)>;

namespace velocity {

inline VelocityField constant(double v1, double v2) {
  return [v1, v2](const Point&) { return Point(v1, v2); };
}

/// Uniform flow towards the lower right, unit speed.
inline VelocityField constant_diagonal() {
  const double s = 1.0 / std::sqrt(2.0);
  return constant(s, -s);
}

/// Closed streamlines inside the unit square, tangent to the boundary.
inline VelocityField recirculating() {
  return [](const Point& x) {
    const double a = 2.0 * x[0] - 1.0;
    const double b = 2.0 * x[1] - 1.0;
    return Point(2.0 * b * (1.0 - a * a), -2.0 * a * (1.0 - b * b));
  };
}

}  // namespace velocity

namespace amplitude {

inline AmplitudeFn constant(double c) {
  return [c](double) { return c; };
}

inline AmplitudeFn oscillating() {
  return [](double t) { return -std::cos(4.0 * std::numbers::pi * t) / 4.0 + 0.75; };
}

inline AmplitudeFn decaying() {
  return [](double t) {
    return 1.05 / 2.0 * (1.0 - 2.0 / std::numbers::pi * std::atan(8.0 * t - 6.0));
  };
}

}  // namespace amplitude

struct ForwardSettings {
  double alpha = 0.15;
  double T = 1.0;
  int n_t = 400;
  VelocityField velocity = velocity::constant(0.0, 0.0);
  AmplitudeFn amplitude = amplitude::constant(1.0);
  std::vector<int> dirichlet_nodes;
};

/// A point-source dual input: adds `phi` to the dual data of snapshot column
/// `col`. Used for the adjoint of pointwise observations.
struct PointInput {
  int col = 0;
  SparseVector phi;
};

class ForwardModel {
 public:
  ForwardModel(const StructuredMesh& mesh, const SparseMatrix& M, const SparseMatrix& Ks,
               const ForwardSettings& settings)
      : M_(M), alpha_(settings.alpha), n_t_(settings.n_t) {
    if (settings.n_t < 1) throw std::invalid_argument("forward: n_t must be >= 1");
    if (!(settings.T > 0.0)) throw std::invalid_argument("forward: T must be positive");
    if (!(settings.alpha >= 0.0)) throw std::invalid_argument("forward: alpha must be >= 0");
    const int n = mesh.num_nodes();
    dt_ = settings.T / settings.n_t;
    weights_ = Vector::Constant(n_t_, dt_);
    amp_.resize(n_t_);
    for (int c = 0; c < n_t_; ++c) amp_[c] = settings.amplitude(time_of(c));

    interior_ = Vector::Ones(n);
    for (int d : settings.dirichlet_nodes) {
      if (d < 0 || d >= n) throw std::invalid_argument("forward: Dirichlet node out of range");
      interior_[d] = 0.0;
    }
    const SparseMatrix N = assemble_advection(mesh, settings.velocity);
    A_ = M + dt_ * (settings.alpha * Ks + N);
    A_.prune(0.0);

    // Symmetric elimination: zero Dirichlet rows/columns, unit diagonal.
    SparseMatrix AD = A_;
    for (int k = 0; k < AD.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(AD, k); it; ++it) {
        if (interior_[it.row()] == 0.0 || interior_[it.col()] == 0.0) {
          it.valueRef() = (it.row() == it.col()) ? 1.0 : 0.0;
        }
      }
    }
    for (int d : settings.dirichlet_nodes) {
      if (AD.coeff(d, d) != 1.0) AD.coeffRef(d, d) = 1.0;
    }
    AD.prune(0.0);
    AD.makeCompressed();
    AD_ = AD;
    lu_.compute(AD_);
  }

  int n_x() const { return static_cast<int>(M_.rows()); }
  int n_t() const { return n_t_; }
  double dt() const { return dt_; }
  double alpha() const { return alpha_; }
  const Vector& weights() const { return weights_; }
  const Vector& amplitudes() const { return amp_; }
  const Vector& interior_mask() const { return interior_; }
  const SparseMatrix& mass() const { return M_; }
  const SparseMatrix& system_matrix() const { return A_; }
  const SparseMatrix& eliminated_matrix() const { return AD_; }
  const LuFactor& factor() const { return lu_; }

  /// Time of snapshot column c.
  double time_of(int c) const { return (c + 1) * dt_; }

  /// Forward solve returning only snapshot columns [0, n_cols).
  Matrix solve_columns(const Vector& m, int n_cols) const {
    check_size(m);
    n_cols = std::clamp(n_cols, 0, n_t_);
    Matrix U = Matrix::Zero(n_x(), n_cols);
    if (n_cols == 0) return U;
    const Vector src = (M_ * m).cwiseProduct(interior_) * dt_;
    Vector u = Vector::Zero(n_x());
    for (int c = 0; c < n_cols; ++c) {
      Vector rhs = (M_ * u).cwiseProduct(interior_) + amp_[c] * src;
      u = lu_.solve(rhs);
      U.col(c) = u;
    }
    return U;
  }

  Snapshot solve_forward(const Vector& m) const {
    check_size(m);
    return Snapshot(solve_columns(m, n_t_), weights_);
  }

  /// S^* V with V given through its dual data g_l = w_l M v_l
  /// (n_x x n_cols, columns beyond n_cols are treated as zero).
  Vector apply_adjoint_dual(const Matrix& G) const {
    if (G.rows() != n_x() || G.cols() > n_t_) {
      throw std::invalid_argument("apply_adjoint_dual: shape mismatch");
    }
    Vector q = Vector::Zero(n_x());
    Vector out = Vector::Zero(n_x());
    for (int c = static_cast<int>(G.cols()) - 1; c >= 0; --c) {
      Vector rhs = (G.col(c) + M_ * q).cwiseProduct(interior_);
      q = lu_.solve_transpose(rhs);
      out.noalias() += dt_ * amp_[c] * q;
    }
    return out;
  }

  /// Adjoint in the weighted spaces: <<S m, V>>_M = <m, S^* V>_M.
  Vector apply_adjoint(const Snapshot& V) const {
    if (V.n_x() != n_x() || V.n_t() != n_t_) {
      throw std::invalid_argument("apply_adjoint: snapshot shape mismatch");
    }
    Matrix G = M_ * V.values;
    G *= V.weights.asDiagonal();
    return apply_adjoint_dual(G);
  }

  /// Adjoint for a set of independent point-source inputs; column k of the
  /// result is S^* applied to the k-th input alone. One backward sweep with a
  /// shrinking block of active right-hand sides.
  Matrix apply_adjoint_points(const std::vector<PointInput>& inputs) const {
    const int n_rhs = static_cast<int>(inputs.size());
    Matrix out = Matrix::Zero(n_x(), n_rhs);
    if (n_rhs == 0) return out;
    std::vector<int> order(static_cast<std::size_t>(n_rhs));
    for (int k = 0; k < n_rhs; ++k) {
      order[static_cast<std::size_t>(k)] = k;
      if (inputs[static_cast<std::size_t>(k)].col < 0 || inputs[static_cast<std::size_t>(k)].col >= n_t_) {
        throw std::invalid_argument("apply_adjoint_points: column out of range");
      }
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return inputs[static_cast<std::size_t>(a)].col > inputs[static_cast<std::size_t>(b)].col;
    });
    RowMatrix Q = RowMatrix::Zero(n_x(), n_rhs);
    RowMatrix rhs(n_x(), n_rhs);
    Matrix acc = Matrix::Zero(n_x(), n_rhs);
    int active = 0;
    const int c_max = inputs[static_cast<std::size_t>(order[0])].col;
    for (int c = c_max; c >= 0; --c) {
      while (active < n_rhs &&
             inputs[static_cast<std::size_t>(order[static_cast<std::size_t>(active)])].col == c) {
        ++active;
      }
      rhs.leftCols(active).noalias() = M_ * Q.leftCols(active);
      for (int j = 0; j < active; ++j) {
        const PointInput& in = inputs[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])];
        if (in.col != c) continue;
        for (int a = 0; a < in.phi.size; ++a) rhs(in.phi.index[a], j) += in.phi.value[a];
      }
      for (int i = 0; i < n_x(); ++i) {
        if (interior_[i] == 0.0) rhs.row(i).head(active).setZero();
      }
      lu_.solve_transpose_inplace(rhs, active);
      Q.leftCols(active) = rhs.leftCols(active);
      acc.leftCols(active) += (dt_ * amp_[c]) * Q.leftCols(active);
    }
    for (int j = 0; j < n_rhs; ++j) out.col(order[static_cast<std::size_t>(j)]) = acc.col(j);
    return out;
  }

 private:
  void check_size(const Vector& m) const {
    if (m.size() != n_x()) throw std::invalid_argument("forward: parameter has wrong length");
  }

  SparseMatrix M_;
  SparseMatrix A_;
  SparseMatrix AD_;
  LuFactor lu_;
  Vector weights_;
  Vector amp_;
  Vector interior_;
  double alpha_;
  double dt_ = 0.0;
  int n_t_;
};

}  // namespace pathoed
