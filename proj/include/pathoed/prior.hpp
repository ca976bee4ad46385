#pragma once

// Gaussian prior N(m_pr, Gamma_pr) with Gamma_pr the discretization of
// (-a1 Laplacian + a2 I)^{-2} under homogeneous Neumann conditions:
//
//   K = a1 K_s + a2 M,   Gamma_pr = K^{-1} M K^{-1} M,   Gamma_pr^{1/2} = K^{-1} M.
//
// Both operators are self-adjoint in the M-inner product.

#include <cstdint>
#include <random>
#include <stdexcept>

#include "pathoed/linops.hpp"

namespace pathoed {

class EllipticPrior {
 public:
  EllipticPrior(const SparseMatrix& M, const SparseMatrix& Ks, double a1, double a2, Vector mean)
      : M_(M), a1_(a1), a2_(a2), mean_(std::move(mean)) {
    if (!(a1 > 0.0) || !(a2 > 0.0)) {
      throw std::invalid_argument("prior: a1 and a2 must be positive");
    }
    if (mean_.size() == 0) mean_ = Vector::Zero(M.rows());
    if (mean_.size() != M.rows()) throw std::invalid_argument("prior: mean has wrong length");
    K_ = a1 * Ks + a2 * M;
    k_factor_.compute(K_);
    m_factor_.compute(M_);
  }

  EllipticPrior(const SparseMatrix& M, const SparseMatrix& Ks, double a1, double a2)
      : EllipticPrior(M, Ks, a1, a2, Vector()) {}

  int n_x() const { return static_cast<int>(M_.rows()); }
  double a1() const { return a1_; }
  double a2() const { return a2_; }
  const Vector& mean() const { return mean_; }
  const SparseMatrix& mass() const { return M_; }
  const SparseMatrix& operator_matrix() const { return K_; }
  const SpdFactor& mass_factor() const { return m_factor_; }
  const SpdFactor& operator_factor() const { return k_factor_; }

  Vector apply_sqrt(const Vector& x) const { return k_factor_.solve(Vector(M_ * x)); }

  Vector apply_gamma_pr(const Vector& x) const { return apply_sqrt(apply_sqrt(x)); }

  Vector apply_inv(const Vector& x) const {
    const Vector y = m_factor_.solve(Vector(K_ * x));
    return m_factor_.solve(Vector(K_ * y));
  }

  /// Gamma_pr^{1/2} applied to every column.
  Matrix apply_sqrt(const Matrix& X) const {
    RowMatrix B = M_ * X;
    k_factor_.solve_inplace(B, static_cast<int>(B.cols()));
    return B;
  }

  Matrix apply_gamma_pr(const Matrix& X) const { return apply_sqrt(apply_sqrt(X)); }

  /// m_pr + K^{-1} L_M z for a standard normal vector z (M = L_M L_M^T).
  Vector sample_from_normal(const Vector& z) const {
    if (z.size() != n_x()) throw std::invalid_argument("prior: normal vector has wrong length");
    return mean_ + k_factor_.solve(m_factor_.apply_l(z));
  }

  Vector sample_prior(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    return sample_prior(rng);
  }

  template <typename Rng>
  Vector sample_prior(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(n_x());
    for (int i = 0; i < n_x(); ++i) z[i] = normal(rng);
    return sample_from_normal(z);
  }

  /// Nodal variances of the coefficient vector, diag(K^{-1} M K^{-1}).
  Vector variance_field() const {
    const int n = n_x();
    // Columns of K^{-1} L_M, built in blocks to bound memory.
    Vector out = Vector::Zero(n);
    const int block = 128;
    for (int start = 0; start < n; start += block) {
      const int w = std::min(block, n - start);
      RowMatrix B(n, w);
      for (int j = 0; j < w; ++j) {
        Vector e = Vector::Zero(n);
        e[start + j] = 1.0;
        B.col(j) = m_factor_.apply_l(e);
      }
      k_factor_.solve_inplace(B, w);
      out += B.rowwise().squaredNorm();
    }
    return out;
  }

 private:
  SparseMatrix M_;
  SparseMatrix K_;
  double a1_;
  double a2_;
  Vector mean_;
  SpdFactor k_factor_;
  SpdFactor m_factor_;
};

}  // namespace pathoed
