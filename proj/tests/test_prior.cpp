#include <catch_amalgamated.hpp>

#include <random>

#include "pathoed/mesh.hpp"
#include "pathoed/prior.hpp"

using namespace pathoed;

namespace {

struct Setup {
  StructuredMesh mesh;
  SparseMatrix M;
  SparseMatrix Ks;
  explicit Setup(int n) : mesh(n), M(assemble_mass(mesh)), Ks(assemble_stiffness(mesh)) {}
};

Matrix dense_gamma(const Setup& s, double a1, double a2) {
  const Matrix Md = Matrix(s.M);
  const Matrix K = a1 * Matrix(s.Ks) + a2 * Md;
  const Matrix Kinv = K.inverse();
  return Kinv * Md * Kinv * Md;
}

}  // namespace

TEST_CASE("prior covariance matches a dense oracle") {
  const Setup s(6);
  const EllipticPrior prior(s.M, s.Ks, 0.55, 0.006);
  const Matrix G = dense_gamma(s, 0.55, 0.006);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Vector x(s.mesh.num_nodes());
  for (int i = 0; i < x.size(); ++i) x[i] = nd(rng);
  const Vector gx = prior.apply_gamma_pr(x);
  CHECK((gx - G * x).norm() <= 1e-10 * (G * x).norm());
  const Matrix Md = Matrix(s.M);
  const Matrix K = 0.55 * Matrix(s.Ks) + 0.006 * Md;
  const Vector inv_ref = Md.ldlt().solve(K * Md.ldlt().solve(K * x));
  CHECK((prior.apply_inv(x) - inv_ref).norm() <= 1e-10 * inv_ref.norm());
  CHECK((prior.apply_sqrt(prior.apply_sqrt(x)) - gx).norm() <= 1e-12 * gx.norm());

  Matrix X(s.mesh.num_nodes(), 3);
  for (int j = 0; j < 3; ++j) X.col(j) = x * (j + 1.0);
  const Matrix GX = prior.apply_gamma_pr(X);
  CHECK((GX - G * X).norm() <= 1e-10 * (G * X).norm());
}

TEST_CASE("prior covariance is self-adjoint and positive in the M inner product") {
  const Setup s(7);
  const EllipticPrior prior(s.M, s.Ks, 0.3, 0.05);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 5; ++trial) {
    Vector x(s.mesh.num_nodes()), y(s.mesh.num_nodes());
    for (int i = 0; i < x.size(); ++i) {
      x[i] = nd(rng);
      y[i] = nd(rng);
    }
    const double a = m_inner(prior.apply_gamma_pr(x), y, s.M);
    const double b = m_inner(x, prior.apply_gamma_pr(y), s.M);
    CHECK(std::abs(a - b) <= 1e-12 * std::max(std::abs(a), 1e-300) + 1e-15);
    CHECK(m_inner(prior.apply_gamma_pr(x), x, s.M) > 0.0);
  }
}

TEST_CASE("constant functions are eigenfunctions of the prior covariance") {
  const Setup s(8);
  const double a2 = 0.04;
  const EllipticPrior prior(s.M, s.Ks, 0.7, a2);
  const Vector one = Vector::Ones(s.mesh.num_nodes());
  const Vector g = prior.apply_gamma_pr(one);
  CHECK((g - one / (a2 * a2)).cwiseAbs().maxCoeff() <= 1e-9 / (a2 * a2));
}

TEST_CASE("nodal variance field matches the dense covariance diagonal") {
  const Setup s(9);
  const EllipticPrior prior(s.M, s.Ks, 0.55, 0.006);
  const Matrix Md = Matrix(s.M);
  const Matrix K = 0.55 * Matrix(s.Ks) + 0.006 * Md;
  const Matrix Kinv = K.inverse();
  const Vector ref = (Kinv * Md * Kinv).diagonal();
  const Vector var = prior.variance_field();
  CHECK((var - ref).cwiseAbs().maxCoeff() <= 1e-9 * ref.maxCoeff());
}

TEST_CASE("prior samples have the prescribed mean and covariance") {
  const Setup s(4);
  const int n = s.mesh.num_nodes();
  Vector mean(n);
  for (int i = 0; i < n; ++i) mean[i] = 0.1 * i;
  const EllipticPrior prior(s.M, s.Ks, 0.5, 0.5, mean);
  const Matrix Md = Matrix(s.M);
  const Matrix K = 0.5 * Matrix(s.Ks) + 0.5 * Md;
  const Matrix Kinv = K.inverse();
  const Matrix C = Kinv * Md * Kinv;

  std::mt19937_64 rng(11);
  const int n_samples = 40000;
  Vector sum = Vector::Zero(n);
  Matrix outer = Matrix::Zero(n, n);
  for (int k = 0; k < n_samples; ++k) {
    const Vector x = prior.sample_prior(rng) - mean;
    sum += x;
    outer += x * x.transpose();
  }
  const Vector emp_mean = sum / n_samples;
  const Matrix emp_cov = outer / n_samples - emp_mean * emp_mean.transpose();
  const double sd = std::sqrt(C.diagonal().maxCoeff());
  CHECK(emp_mean.cwiseAbs().maxCoeff() < 5.0 * sd / std::sqrt(n_samples));
  // Entrywise standard error of a covariance estimate is about sqrt(2/N) * var.
  CHECK((emp_cov - C).cwiseAbs().maxCoeff() < 6.0 * std::sqrt(2.0 / n_samples) * C.diagonal().maxCoeff());

  const Vector a = prior.sample_prior(5);
  const Vector b = prior.sample_prior(5);
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("prior input validation") {
  const Setup s(3);
  CHECK_THROWS_AS(EllipticPrior(s.M, s.Ks, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(EllipticPrior(s.M, s.Ks, 1.0, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(EllipticPrior(s.M, s.Ks, 1.0, 1.0, Vector::Ones(2)), std::invalid_argument);
  const EllipticPrior p(s.M, s.Ks, 1.0, 1.0);
  CHECK(p.mean().norm() == 0.0);
  CHECK_THROWS_AS(p.sample_from_normal(Vector::Ones(2)), std::invalid_argument);
}
