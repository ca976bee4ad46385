#pragma once

// Mass-weighted inner products, sparse factorizations and an M-inner-product
// Lanczos eigensolver.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <klu.h>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace pathoed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Space-time field: column l holds the coefficients at time t_{l+1}.
struct Snapshot {
  Matrix values;
  Vector weights;

  Snapshot() = default;
  Snapshot(int n_x, const Vector& w) : values(Matrix::Zero(n_x, w.size())), weights(w) {}
  Snapshot(Matrix v, Vector w) : values(std::move(v)), weights(std::move(w)) {
    if (values.cols() != weights.size()) {
      throw std::invalid_argument("Snapshot: column count does not match weight count");
    }
  }

  int n_x() const { return static_cast<int>(values.rows()); }
  int n_t() const { return static_cast<int>(values.cols()); }
};

inline double m_inner(const Vector& x, const Vector& y, const SparseMatrix& M) {
  return y.dot(M * x);
}

inline double m_norm(const Vector& x, const SparseMatrix& M) {
  return std::sqrt(std::max(0.0, m_inner(x, x, M)));
}

namespace detail {

inline void check_conforming(const Snapshot& U, const Snapshot& V, const SparseMatrix& M) {
  if (U.values.rows() != V.values.rows() || U.values.cols() != V.values.cols()) {
    throw std::invalid_argument("st_inner: snapshot shapes differ");
  }
  if (U.weights.size() != V.weights.size() ||
      (U.weights.size() > 0 && (U.weights - V.weights).cwiseAbs().maxCoeff() > 0.0)) {
    throw std::invalid_argument("st_inner: snapshots carry different quadrature weights");
  }
  if (U.weights.size() != U.values.cols()) {
    throw std::invalid_argument("st_inner: weight count does not match columns");
  }
  if (M.rows() != U.values.rows() || M.cols() != U.values.rows()) {
    throw std::invalid_argument("st_inner: mass matrix does not match snapshot rows");
  }
}

}  // namespace detail

/// <<U, V>>_M = 1^T (U .* M V) w.
inline double st_inner(const Snapshot& U, const Snapshot& V, const SparseMatrix& M) {
  detail::check_conforming(U, V, M);
  if (U.n_t() == 0) return 0.0;
  const Matrix MV = M * V.values;
  return (U.values.cwiseProduct(MV).colwise().sum() * U.weights)(0);
}

/// Same value as st_inner, by the explicit sum over l, i, j.
inline double st_inner_sum(const Snapshot& U, const Snapshot& V, const SparseMatrix& M) {
  detail::check_conforming(U, V, M);
  double total = 0.0;
  for (int l = 0; l < U.n_t(); ++l) {
    double col = 0.0;
    for (int k = 0; k < M.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(M, k); it; ++it) {
        col += U.values(it.row(), l) * it.value() * V.values(it.col(), l);
      }
    }
    total += U.weights[l] * col;
  }
  return total;
}

/// Same value as st_inner, as tr(U^T M V W).
inline double st_inner_trace(const Snapshot& U, const Snapshot& V, const SparseMatrix& M) {
  detail::check_conforming(U, V, M);
  const Matrix P = U.values.transpose() * (M * V.values) * U.weights.asDiagonal();
  return P.trace();
}

namespace detail {

/// Triangular factor in compressed-row form with the diagonal kept apart.
/// Block solves act on row-major right-hand sides so that the inner loop runs
/// over contiguous columns.
class TriangularCsr {
 public:
  TriangularCsr() = default;

  TriangularCsr(const SparseMatrix& T, bool lower) : lower_(lower) {
    n_ = static_cast<int>(T.rows());
    const Eigen::SparseMatrix<double, Eigen::RowMajor> R = T;
    ptr_.assign(1, 0);
    inv_diag_.assign(static_cast<std::size_t>(n_), 0.0);
    for (int i = 0; i < n_; ++i) {
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(R, i); it; ++it) {
        const int j = static_cast<int>(it.col());
        if (j == i) {
          inv_diag_[static_cast<std::size_t>(i)] = 1.0 / it.value();
        } else if ((lower && j < i) || (!lower && j > i)) {
          idx_.push_back(j);
          val_.push_back(it.value());
        }
      }
      ptr_.push_back(static_cast<int>(idx_.size()));
    }
    for (double d : inv_diag_) {
      if (!std::isfinite(d) || d == 0.0) throw std::runtime_error("triangular factor has a zero pivot");
    }
  }

  void solve(double* x) const {
    if (lower_) {
      for (int i = 0; i < n_; ++i) row_single(i, x);
    } else {
      for (int i = n_ - 1; i >= 0; --i) row_single(i, x);
    }
  }

  /// In-place solve on the first r columns of a row-major block with leading
  /// dimension ld.
  void solve(double* X, int r, int ld) const {
    if (lower_) {
      for (int i = 0; i < n_; ++i) row_block(i, X, r, ld);
    } else {
      for (int i = n_ - 1; i >= 0; --i) row_block(i, X, r, ld);
    }
  }

  /// y = T x.
  void multiply(const double* x, double* y) const {
    for (int i = 0; i < n_; ++i) {
      double s = x[i] / inv_diag_[static_cast<std::size_t>(i)];
      for (int k = ptr_[static_cast<std::size_t>(i)]; k < ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
        s += val_[static_cast<std::size_t>(k)] * x[idx_[static_cast<std::size_t>(k)]];
      }
      y[i] = s;
    }
  }

  std::size_t nnz() const { return val_.size() + inv_diag_.size(); }

 private:
  void row_single(int i, double* x) const {
    double s = x[i];
    for (int k = ptr_[static_cast<std::size_t>(i)]; k < ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
      s -= val_[static_cast<std::size_t>(k)] * x[idx_[static_cast<std::size_t>(k)]];
    }
    x[i] = s * inv_diag_[static_cast<std::size_t>(i)];
  }

  void row_block(int i, double* X, int r, int ld) const {
    double* xi = X + static_cast<std::ptrdiff_t>(i) * ld;
    for (int k = ptr_[static_cast<std::size_t>(i)]; k < ptr_[static_cast<std::size_t>(i) + 1]; ++k) {
      const double v = val_[static_cast<std::size_t>(k)];
      const double* xj = X + static_cast<std::ptrdiff_t>(idx_[static_cast<std::size_t>(k)]) * ld;
      for (int c = 0; c < r; ++c) xi[c] -= v * xj[c];
    }
    const double d = inv_diag_[static_cast<std::size_t>(i)];
    for (int c = 0; c < r; ++c) xi[c] *= d;
  }

  int n_ = 0;
  bool lower_ = true;
  std::vector<int> ptr_;
  std::vector<int> idx_;
  std::vector<double> val_;
  std::vector<double> inv_diag_;
};

/// Gathers rows: out.row(i) = in.row(perm[i]) over the first r columns.
inline void gather_rows(const RowMatrix& in, RowMatrix& out, const std::vector<int>& perm, int r) {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)).head(r) = in.row(perm[i]).head(r);
  }
}

/// Scatters rows: out.row(perm[i]) = in.row(i) over the first r columns.
inline void scatter_rows(const RowMatrix& in, RowMatrix& out, const std::vector<int>& perm, int r) {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.row(perm[i]).head(r) = in.row(static_cast<Eigen::Index>(i)).head(r);
  }
}

}  // namespace detail

/// Cholesky factorization of a sparse SPD matrix, A = L_A L_A^T with the
/// fill-reducing permutation folded into L_A.
class SpdFactor {
 public:
  SpdFactor() = default;
  explicit SpdFactor(const SparseMatrix& A) { compute(A); }

  void compute(const SparseMatrix& A) {
    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(A);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("Cholesky factorization failed (matrix not SPD?)");
    }
    n_ = static_cast<int>(A.rows());
    const SparseMatrix L = llt.matrixL();
    const SparseMatrix Lt = L.transpose();
    lower_ = detail::TriangularCsr(L, true);
    upper_ = detail::TriangularCsr(Lt, false);
    // llt: P A P^{-1} = L L^T, with (P x)[i] = x[perm[i]] after inversion below.
    const auto& p = llt.permutationP().indices();  // (P x)[p[i]] = x[i]
    perm_.assign(static_cast<std::size_t>(n_), 0);
    for (int i = 0; i < n_; ++i) perm_[static_cast<std::size_t>(p[i])] = i;
  }

  int size() const { return n_; }

  Vector solve(const Vector& b) const {
    check(b.size());
    Vector y(n_);
    for (int i = 0; i < n_; ++i) y[i] = b[perm_[static_cast<std::size_t>(i)]];
    lower_.solve(y.data());
    upper_.solve(y.data());
    Vector x(n_);
    for (int i = 0; i < n_; ++i) x[perm_[static_cast<std::size_t>(i)]] = y[i];
    return x;
  }

  /// In-place solve on the first r columns of a row-major block.
  void solve_inplace(RowMatrix& B, int r) const {
    check(B.rows());
    RowMatrix Y(n_, B.cols());
    detail::gather_rows(B, Y, perm_, r);
    lower_.solve(Y.data(), r, static_cast<int>(Y.cols()));
    upper_.solve(Y.data(), r, static_cast<int>(Y.cols()));
    detail::scatter_rows(Y, B, perm_, r);
  }

  Matrix solve(const Matrix& B) const {
    RowMatrix R = B;
    solve_inplace(R, static_cast<int>(R.cols()));
    return R;
  }

  /// x = L_A^{-T} z.
  Vector solve_lt(const Vector& z) const {
    check(z.size());
    Vector y = z;
    upper_.solve(y.data());
    Vector x(n_);
    for (int i = 0; i < n_; ++i) x[perm_[static_cast<std::size_t>(i)]] = y[i];
    return x;
  }

  /// L_A^T x, so that x^T A x = |L_A^T x|^2.
  Vector apply_lt(const Vector& x) const {
    check(x.size());
    Vector y(n_);
    for (int i = 0; i < n_; ++i) y[i] = x[perm_[static_cast<std::size_t>(i)]];
    Vector out(n_);
    upper_.multiply(y.data(), out.data());
    return out;
  }

  Matrix apply_lt(const Matrix& X) const {
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) out.col(j) = apply_lt(Vector(X.col(j)));
    return out;
  }

  /// x = L_A z.
  Vector apply_l(const Vector& z) const {
    check(z.size());
    Vector y(n_);
    lower_.multiply(z.data(), y.data());
    Vector x(n_);
    for (int i = 0; i < n_; ++i) x[perm_[static_cast<std::size_t>(i)]] = y[i];
    return x;
  }

 private:
  void check(Eigen::Index n) const {
    if (n != n_) throw std::invalid_argument("SpdFactor: right-hand side has wrong length");
  }

  int n_ = 0;
  detail::TriangularCsr lower_;
  detail::TriangularCsr upper_;
  std::vector<int> perm_;  // (P b)[i] = b[perm_[i]]
};

/// LU factorization of a general sparse matrix (KLU), P A Q = L U, usable for
/// solves with A and with A^T.
class LuFactor {
 public:
  LuFactor() = default;
  explicit LuFactor(const SparseMatrix& A) { compute(A); }

  void compute(const SparseMatrix& A_in) {
    SparseMatrix A = A_in;
    A.makeCompressed();
    n_ = static_cast<int>(A.rows());
    if (A.cols() != A.rows()) throw std::invalid_argument("LuFactor: matrix must be square");
    klu_common common;
    klu_defaults(&common);
    common.btf = 0;
    common.scale = 0;
    klu_symbolic* sym = klu_analyze(n_, A.outerIndexPtr(), A.innerIndexPtr(), &common);
    if (sym == nullptr) throw std::runtime_error("KLU analysis failed");
    klu_numeric* num = klu_factor(A.outerIndexPtr(), A.innerIndexPtr(), A.valuePtr(), sym, &common);
    if (num == nullptr || common.status != KLU_OK) {
      klu_free_symbolic(&sym, &common);
      throw std::runtime_error("LU factorization failed (singular matrix?)");
    }
    const int lnz = num->lnz;
    const int unz = num->unz;
    std::vector<int> Lp(static_cast<std::size_t>(n_) + 1), Li(static_cast<std::size_t>(lnz));
    std::vector<int> Up(static_cast<std::size_t>(n_) + 1), Ui(static_cast<std::size_t>(unz));
    std::vector<double> Lx(static_cast<std::size_t>(lnz)), Ux(static_cast<std::size_t>(unz));
    row_perm_.assign(static_cast<std::size_t>(n_), 0);
    col_perm_.assign(static_cast<std::size_t>(n_), 0);
    const int ok = klu_extract(num, sym, Lp.data(), Li.data(), Lx.data(), Up.data(), Ui.data(),
                               Ux.data(), nullptr, nullptr, nullptr, row_perm_.data(),
                               col_perm_.data(), nullptr, nullptr, &common);
    klu_free_numeric(&num, &common);
    klu_free_symbolic(&sym, &common);
    if (!ok) throw std::runtime_error("KLU factor extraction failed");
    // KLU does not sort row indices within a column; go through triplets.
    const SparseMatrix Ls = from_csc(Lp, Li, Lx);
    const SparseMatrix Us = from_csc(Up, Ui, Ux);
    const SparseMatrix Lt = Ls.transpose();
    const SparseMatrix Ut = Us.transpose();
    l_ = detail::TriangularCsr(Ls, true);
    u_ = detail::TriangularCsr(Us, false);
    lt_ = detail::TriangularCsr(Lt, false);
    ut_ = detail::TriangularCsr(Ut, true);
  }

  int size() const { return n_; }

  Vector solve(const Vector& b) const {
    check(b.size());
    Vector y(n_);
    for (int i = 0; i < n_; ++i) y[i] = b[row_perm_[static_cast<std::size_t>(i)]];
    l_.solve(y.data());
    u_.solve(y.data());
    Vector x(n_);
    for (int i = 0; i < n_; ++i) x[col_perm_[static_cast<std::size_t>(i)]] = y[i];
    return x;
  }

  Vector solve_transpose(const Vector& b) const {
    check(b.size());
    Vector y(n_);
    for (int i = 0; i < n_; ++i) y[i] = b[col_perm_[static_cast<std::size_t>(i)]];
    ut_.solve(y.data());
    lt_.solve(y.data());
    Vector x(n_);
    for (int i = 0; i < n_; ++i) x[row_perm_[static_cast<std::size_t>(i)]] = y[i];
    return x;
  }

  /// In-place solves on the first r columns of a row-major block.
  void solve_inplace(RowMatrix& B, int r) const {
    check(B.rows());
    RowMatrix Y(n_, B.cols());
    detail::gather_rows(B, Y, row_perm_, r);
    l_.solve(Y.data(), r, static_cast<int>(Y.cols()));
    u_.solve(Y.data(), r, static_cast<int>(Y.cols()));
    detail::scatter_rows(Y, B, col_perm_, r);
  }

  void solve_transpose_inplace(RowMatrix& B, int r) const {
    check(B.rows());
    RowMatrix Y(n_, B.cols());
    detail::gather_rows(B, Y, col_perm_, r);
    ut_.solve(Y.data(), r, static_cast<int>(Y.cols()));
    lt_.solve(Y.data(), r, static_cast<int>(Y.cols()));
    detail::scatter_rows(Y, B, row_perm_, r);
  }

 private:
  void check(Eigen::Index n) const {
    if (n != n_) throw std::invalid_argument("LuFactor: right-hand side has wrong length");
  }

  SparseMatrix from_csc(const std::vector<int>& p, const std::vector<int>& i,
                        const std::vector<double>& x) const {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(x.size());
    for (int c = 0; c < n_; ++c) {
      for (int k = p[static_cast<std::size_t>(c)]; k < p[static_cast<std::size_t>(c) + 1]; ++k) {
        trip.emplace_back(i[static_cast<std::size_t>(k)], c, x[static_cast<std::size_t>(k)]);
      }
    }
    SparseMatrix A(n_, n_);
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
  }

  int n_ = 0;
  std::vector<int> row_perm_;
  std::vector<int> col_perm_;
  detail::TriangularCsr l_;
  detail::TriangularCsr u_;
  detail::TriangularCsr lt_;
  detail::TriangularCsr ut_;
};

struct LanczosResult {
  Vector eigenvalues;   // nonincreasing, clipped at 0
  Matrix eigenvectors;  // columns M-orthonormal
  std::vector<bool> converged;
  Vector residuals;  // |beta_m s_{m,i}|
  int iterations = 0;
  bool breakdown = false;
};

struct LanczosOptions {
  double tol = 1e-8;
  double breakdown_tol = 1e-13;
  double clip_tol = 1e-12;
};

/// Leading eigenpairs of an operator that is self-adjoint and positive
/// semidefinite in the M-inner product. Full reorthogonalization.
inline LanczosResult lanczos_m(const std::function<Vector(const Vector&)>& apply,
                               const SparseMatrix& M, int r, int k, std::uint64_t seed,
                               const LanczosOptions& opt = {}) {
  const int n = static_cast<int>(M.rows());
  if (r < 0) throw std::invalid_argument("lanczos_m: negative rank");
  if (k < r) throw std::invalid_argument("lanczos_m: need k >= r");
  LanczosResult out;
  out.eigenvalues = Vector::Zero(r);
  out.eigenvectors = Matrix::Zero(n, r);
  out.converged.assign(static_cast<std::size_t>(r), false);
  out.residuals = Vector::Zero(r);
  if (r == 0 || n == 0) return out;
  k = std::min(k, n);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector q(n);
  for (int i = 0; i < n; ++i) q[i] = normal(rng);
  q /= m_norm(q, M);

  Matrix Q(n, k);
  Matrix MQ(n, k);
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[j] couples q_j and q_{j+1}
  double beta_last = 0.0;
  double scale = 0.0;

  int m = 0;
  for (int j = 0; j < k; ++j) {
    Q.col(j) = q;
    MQ.col(j) = M * q;
    Vector w = apply(q);
    alpha.push_back(w.dot(MQ.col(j)));
    // Two passes of classical Gram-Schmidt against the whole basis.
    for (int pass = 0; pass < 2; ++pass) {
      const Vector h = MQ.leftCols(j + 1).transpose() * w;
      w.noalias() -= Q.leftCols(j + 1) * h;
    }
    const double b = m_norm(w, M);
    m = j + 1;
    scale = std::max(scale, std::abs(alpha.back()) + b);
    beta_last = b;
    if (b <= opt.breakdown_tol * scale || scale == 0.0) {
      out.breakdown = true;
      break;
    }
    if (j + 1 < k) {
      beta.push_back(b);
      q = w / b;
    }
  }
  out.iterations = m;

  Matrix T = Matrix::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    T(j, j) = alpha[static_cast<std::size_t>(j)];
    if (j + 1 < m) T(j, j + 1) = T(j + 1, j) = beta[static_cast<std::size_t>(j)];
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(T);
  const Vector& theta = es.eigenvalues();  // ascending
  const Matrix& S = es.eigenvectors();
  const double lam1 = std::max(theta[m - 1], 0.0);
  const double tail = out.breakdown ? 0.0 : beta_last;

  const int take = std::min(r, m);
  for (int i = 0; i < take; ++i) {
    const int idx = m - 1 - i;
    double lam = theta[idx];
    if (lam < opt.clip_tol * lam1) lam = 0.0;
    out.eigenvalues[i] = lam;
    Vector v = Q.leftCols(m) * S.col(idx);
    v /= m_norm(v, M);
    out.eigenvectors.col(i) = v;
    out.residuals[i] = std::abs(tail * S(m - 1, idx));
    out.converged[static_cast<std::size_t>(i)] =
        lam1 == 0.0 || out.residuals[i] <= opt.tol * lam1;
  }
  return out;
}

}  // namespace pathoed
