#include <catch_amalgamated.hpp>

#include <random>

#include "pathoed/observation.hpp"

using namespace pathoed;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix A(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) A(i, j) = nd(rng);
  return A;
}

// Straight segment from a to b over [ta, tb].
BezierPath segment(double ta, double tb) { return BezierPath(1, Pinning::free, {}, ta, tb); }

Eigen::VectorXd segment_design(const Point& a, const Point& b) {
  Eigen::VectorXd xi(4);
  xi << a[0], a[1], b[0], b[1];
  return xi;
}

}  // namespace

TEST_CASE("measurement schedules on the time grid") {
  const ObservationSchedule a = make_schedule(1.0 / 400, 400, 0.2, 0.4, 2);
  CHECK(a.n_y() == 40);
  CHECK(a.times.front() == Catch::Approx(0.2));
  CHECK(a.times.back() == Catch::Approx(0.395));
  CHECK(a.cols.front() == 79);
  const ObservationSchedule b = make_schedule(2.0 / 400, 400, 0.25, 1.0, 3);
  CHECK(b.n_y() == 50);
  CHECK(b.times.front() == Catch::Approx(0.25));
  CHECK(b.times.back() < 1.0);
  for (std::size_t k = 1; k < b.cols.size(); ++k) CHECK(b.cols[k] - b.cols[k - 1] == 3);
  CHECK_THROWS_AS(make_schedule(0.1, 10, 0.2, 0.4, 0), std::invalid_argument);
  CHECK_THROWS_AS(schedule_from_cols({3, 2}, 0.1, 10), std::invalid_argument);
  CHECK_THROWS_AS(schedule_from_cols({3, 10}, 0.1, 10), std::invalid_argument);
  const ObservationSchedule c = schedule_from_cols({0, 4, 9}, 0.1, 10);
  CHECK(c.last_col() == 9);
  CHECK(c.times[1] == Catch::Approx(0.5));
}

TEST_CASE("Phi for a path parked on a mesh node") {
  const auto mesh = build_mesh(5);
  const Point node = mesh.node(mesh.node_id(1, 2));
  const auto path = segment(0.0, 1.0);
  const auto sched = make_schedule(0.1, 10, 0.0, 1.0, 1);
  const auto obs = build_observation(mesh, path, segment_design(node, node), sched);
  const Matrix P = Matrix(phi_matrix(obs, mesh.num_nodes(), 10));
  REQUIRE(sched.n_y() == 9);
  for (int c : sched.cols) {
    CHECK(P.col(c).sum() == Catch::Approx(1.0));
    CHECK(P(mesh.node_id(1, 2), c) == Catch::Approx(1.0));
  }
}

TEST_CASE("Phi columns are zero outside the window and sum to one inside") {
  const auto mesh = build_mesh(6);
  const auto path = segment(0.3, 0.7);
  const auto sched = make_schedule(0.05, 20, 0.3, 0.7, 1);
  const auto obs = build_observation(mesh, path, segment_design(Point(0.1, 0.2), Point(0.9, 0.6)), sched);
  const Matrix P = Matrix(phi_matrix(obs, mesh.num_nodes(), 20));
  std::vector<bool> in(20, false);
  for (int c : sched.cols) in[static_cast<std::size_t>(c)] = true;
  for (int c = 0; c < 20; ++c) {
    if (in[static_cast<std::size_t>(c)]) {
      CHECK(P.col(c).sum() == Catch::Approx(1.0).epsilon(1e-14));
      CHECK((P.col(c).array() != 0.0).count() <= 3);
    } else {
      CHECK(P.col(c).norm() == 0.0);
    }
  }
}

TEST_CASE("Phi derivative matches central differences inside elements") {
  const auto mesh = build_mesh(6);
  const BezierPath path(3, Pinning::free, {}, 0.0, 1.0);
  const auto sched = make_schedule(0.1, 10, 0.0, 1.0, 1);
  Eigen::VectorXd xi(8);
  xi << 0.13, 0.21, 0.37, 0.81, 0.63, 0.27, 0.87, 0.74;
  const auto obs = build_observation(mesh, path, xi, sched);
  const double h = 1e-7;
  for (int j = 0; j < 8; ++j) {
    Eigen::VectorXd a = xi, b = xi;
    a[j] += h;
    b[j] -= h;
    const auto oa = build_observation(mesh, path, a, sched);
    const auto ob = build_observation(mesh, path, b, sched);
    // Keep the FD stencil inside one element per time sample.
    bool same = true;
    for (int k = 0; k < obs.n_y(); ++k) {
      for (int v = 0; v < 3; ++v) {
        same = same && oa.phi[static_cast<std::size_t>(k)].index[v] == obs.phi[static_cast<std::size_t>(k)].index[v] &&
               ob.phi[static_cast<std::size_t>(k)].index[v] == obs.phi[static_cast<std::size_t>(k)].index[v];
      }
    }
    REQUIRE(same);
    const Matrix fd = (Matrix(phi_matrix(oa, 36, 10)) - Matrix(phi_matrix(ob, 36, 10))) / (2 * h);
    const Matrix an = Matrix(phi_derivative(obs, j, 36, 10));
    CHECK((fd - an).norm() <= 1e-6 * std::max(an.norm(), 1.0));
  }
}

TEST_CASE("observe is linear and exact for linear fields") {
  const auto mesh = build_mesh(5);
  const auto path = segment(0.0, 1.0);
  const auto sched = make_schedule(0.125, 8, 0.0, 1.0, 2);
  const Eigen::VectorXd xi = segment_design(Point(0.05, 0.9), Point(0.85, 0.15));
  const auto obs = build_observation(mesh, path, xi, sched);
  const int n = mesh.num_nodes();
  CHECK(observe(obs, Matrix(Matrix::Zero(n, 8))).norm() == 0.0);
  CHECK((observe(obs, Matrix(Matrix::Constant(n, 8, 2.5))) - Vector::Constant(obs.n_y(), 2.5)).norm() < 1e-14);
  Matrix U = Matrix::Zero(n, 8);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 8; ++c) U(i, c) = mesh.node(i)[0] + mesh.node(i)[1] + c;
  const Vector y = observe(obs, U);
  for (int k = 0; k < obs.n_y(); ++k) {
    const Point r = obs.points[static_cast<std::size_t>(k)];
    CHECK(y[k] == Catch::Approx(r[0] + r[1] + obs.schedule.cols[static_cast<std::size_t>(k)]).epsilon(1e-13));
  }
  const Matrix A = random_matrix(n, 8, 1), B = random_matrix(n, 8, 2);
  CHECK((observe(obs, Matrix(2.0 * A - B)) - (2.0 * observe(obs, A) - observe(obs, B))).norm() < 1e-13);
  // Design derivative for a linear field is the path Jacobian applied to the gradient (1, 1).
  const Matrix D = observe_derivative(obs, U);
  for (int k = 0; k < obs.n_y(); ++k) {
    const Eigen::RowVectorXd ref = Eigen::RowVector2d(1.0, 1.0) * obs.jac[static_cast<std::size_t>(k)];
    CHECK((D.row(k) - ref).norm() < 1e-12);
  }
}

TEST_CASE("observation adjoint identity") {
  const auto mesh = build_mesh(4);
  const SparseMatrix M = assemble_mass(mesh);
  const SpdFactor mf(M);
  const auto path = segment(0.0, 1.0);
  const auto sched = schedule_from_cols({1, 4, 6}, 0.125, 8);
  Vector w(8);
  for (int c = 0; c < 8; ++c) w[c] = 0.1 + 0.01 * c;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    std::mt19937_64 rng(trial);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto obs = build_observation(mesh, path, segment_design(Point(u(rng), u(rng)), Point(u(rng), u(rng))), sched);
    const Snapshot U(random_matrix(16, 8, 100 + trial), w);
    const Vector y = random_matrix(3, 1, 200 + trial).col(0);
    const double lhs = observe(obs, U).dot(y);
    const double rhs = st_inner(U, adjoint_observe(obs, y, mf, w), M);
    CHECK(std::abs(lhs - rhs) <= 1e-11 * std::max(std::abs(lhs), 1e-12));
  }
  const auto obs = build_observation(mesh, path, segment_design(Point(0.2, 0.3), Point(0.7, 0.9)), sched);
  CHECK(adjoint_observe(obs, Vector::Zero(3), mf, w).values.norm() == 0.0);
  const Snapshot e = adjoint_observe(obs, Vector::Unit(3, 1), mf, w);
  for (int c = 0; c < 8; ++c) {
    if (c == 4) {
      const Vector ref = mf.solve(obs.phi[1].dense(16)) / w[4];
      CHECK((e.values.col(c) - ref).norm() <= 1e-13 * ref.norm());
    } else {
      CHECK(e.values.col(c).norm() == 0.0);
    }
  }
  CHECK_THROWS_AS(adjoint_observe(obs, Vector::Zero(2), mf, w), std::invalid_argument);

  // Point-source form agrees with the dual of the snapshot form.
  const Vector y(Eigen::Vector3d(0.3, -1.2, 0.8));
  const Matrix G = sources_to_dual(observation_sources(obs, y), 16);
  const Snapshot V = adjoint_observe(obs, y, mf, w);
  Matrix Gref = M * V.values;
  Gref *= w.asDiagonal();
  CHECK((G - Gref.leftCols(G.cols())).norm() <= 1e-12 * G.norm());
}

TEST_CASE("observations are continuous in the design") {
  const auto mesh = build_mesh(7);
  const BezierPath path(3, Pinning::free, {}, 0.0, 1.0);
  const auto sched = make_schedule(0.05, 20, 0.0, 1.0, 1);
  const Matrix U = random_matrix(49, 20, 3);
  Eigen::VectorXd xi(8);
  xi << 0.1, 0.1, 1.0 / 3.0, 0.9, 2.0 / 3.0, 0.1, 0.9, 0.9;  // passes through mesh edges
  const Vector y0 = observe(build_observation(mesh, path, xi, sched), U);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd d(8);
    for (int i = 0; i < 8; ++i) d[i] = nd(rng);
    const Vector y1 = observe(build_observation(mesh, path, Eigen::VectorXd(xi + 1e-8 * d), sched), U);
    CHECK((y1 - y0).cwiseAbs().maxCoeff() <= 100.0 * U.cwiseAbs().maxCoeff() * 1e-8 * d.norm());
  }
}

TEST_CASE("clamped path points") {
  const auto mesh = build_mesh(5);
  const auto path = segment(0.0, 1.0);
  const auto sched = schedule_from_cols({0, 1, 2, 3}, 0.25, 4);
  const auto obs = build_observation(mesh, path, segment_design(Point(0.5, 0.5), Point(1.5, 0.5)), sched);
  CHECK(obs.clamped == 2);  // x = 1.25 and x = 1.5
  // The clamped x coordinate contributes no design derivative.
  const Matrix U = random_matrix(25, 4, 5);
  const Matrix D = observe_derivative(obs, U);
  CHECK(D(3, 0) == 0.0);
  CHECK(D(3, 2) == 0.0);
  const auto sub = obs.subset({true, false, true, false});
  CHECK(sub.n_y() == 2);
  CHECK(sub.clamped == 1);
}

TEST_CASE("mollified observation") {
  const auto mesh = build_mesh(41);
  const SparseMatrix M = assemble_mass(mesh);
  const int n_t = 201;
  std::vector<double> times(n_t);
  for (int l = 0; l < n_t; ++l) times[static_cast<std::size_t>(l)] = l / 200.0;
  const BezierPath path(2, Pinning::free, {}, 0.0, 1.0);
  Eigen::VectorXd xi(6);
  xi << 0.3, 0.35, 0.5, 0.75, 0.7, 0.4;
  Matrix U(mesh.num_nodes(), n_t);
  for (int l = 0; l < n_t; ++l)
    for (int i = 0; i < mesh.num_nodes(); ++i) {
      const Point x = mesh.node(i);
      U(i, l) = std::exp(-(x - Point(0.45, 0.55)).squaredNorm() / 0.08) * (1.0 + times[static_cast<std::size_t>(l)]);
    }
  const std::vector<double> tk = {0.3, 0.5, 0.7};
  // Reference: pointwise P1 value at r(t_k), t_k on the grid.
  Vector ref(3);
  for (int k = 0; k < 3; ++k) {
    const int l = static_cast<int>(std::lround(tk[static_cast<std::size_t>(k)] * 200));
    ref[k] = mesh.eval_basis(path.eval(tk[static_cast<std::size_t>(k)], xi)).dot(U.col(l));
  }

  MollifierSettings s;
  s.eps_x = 4e-3;
  s.eps_t = 4e-3;
  double prev = std::numeric_limits<double>::infinity();
  double first = 0.0;
  for (int level = 0; level < 5; ++level) {
    const Vector y = mollified_observe(mesh, M, U, times, path, xi, tk, s);
    const double err = (y - ref).cwiseAbs().maxCoeff();
    CHECK(err < prev);
    if (level == 0) first = err;
    prev = err;
    s.eps_x /= 2;
    s.eps_t /= 2;
  }
  // The smoothing bias is first order in the kernel variances.
  CHECK(prev < first / 8.0);

  Matrix C = Matrix::Constant(mesh.num_nodes(), n_t, 3.0);
  const Vector yc = mollified_observe(mesh, M, C, times, path, xi, tk, s);
  CHECK((yc - Vector::Constant(3, 3.0)).cwiseAbs().maxCoeff() < 1e-12);

  const Matrix A = random_matrix(mesh.num_nodes(), n_t, 6);
  const Vector lin = mollified_observe(mesh, M, Matrix(2.0 * A + U), times, path, xi, tk, s);
  const Vector sep = 2.0 * mollified_observe(mesh, M, A, times, path, xi, tk, s) +
                     mollified_observe(mesh, M, U, times, path, xi, tk, s);
  CHECK((lin - sep).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, sep.cwiseAbs().maxCoeff()));

  s.eps_x = 0.0;
  CHECK_THROWS_AS(mollified_observe(mesh, M, U, times, path, xi, tk, s), std::invalid_argument);
}

TEST_CASE("logistic obscured-region weight") {
  const ObscuredRegion D;
  CHECK(rbf_weight(D, Point(0.5 + 0.16, 0.5)) == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(rbf_weight(D, Point(0.5, 0.5 - 0.16)) == Catch::Approx(0.5).epsilon(1e-14));
  CHECK(rbf_weight(D, D.center) > 0.999);
  CHECK(rbf_weight(D, Point(0.5 + 0.32, 0.5)) < 0.001);
  CHECK(rbf_weight(D, Point(5.0, 0.5)) > 0.0);
  CHECK(rbf_weight(D, Point(5.0, 0.5)) < 1e-180);
  CHECK(rbf_weight(D, Point(50.0, 0.5)) >= 0.0);
  CHECK(rbf_grad(D, D.center).norm() == 0.0);

  const double h = 1e-7;
  for (const Point& x : {Point(0.62, 0.55), Point(0.3, 0.4), Point(0.5, 0.35), Point(0.7, 0.71)}) {
    const Point g = rbf_grad(D, x);
    const Point fd((rbf_weight(D, x + Point(h, 0)) - rbf_weight(D, x - Point(h, 0))) / (2 * h),
                   (rbf_weight(D, x + Point(0, h)) - rbf_weight(D, x - Point(0, h))) / (2 * h));
    CHECK((fd - g).norm() <= 1e-7 * std::max(g.norm(), 1e-3));
  }
  ObscuredRegion bad;
  bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("filter weights along a path") {
  const auto mesh = build_mesh(9);
  ObscuredRegion D;
  D.beta = 1e-3;
  const auto path = segment(0.0, 1.0);
  const auto sched = make_schedule(0.05, 20, 0.0, 1.0, 1);
  const auto far = build_observation(mesh, path, segment_design(Point(0.05, 0.05), Point(0.95, 0.05)), sched);
  const FilterWeights fa = filter_matrix(D, far);
  CHECK(fa.p.maxCoeff() < 1e-6);
  const auto through = build_observation(mesh, path, segment_design(Point(0.0, 0.5), Point(1.0, 0.5)), sched);
  const FilterWeights ft = filter_matrix(D, through);
  CHECK(ft.p[9] > 0.999);  // t = 0.5 sits at the center

  D.beta = 0.05;
  const BezierPath curve(3, Pinning::free, {}, 0.0, 1.0);
  Eigen::VectorXd xi(8);
  xi << 0.2, 0.3, 0.4, 0.9, 0.6, 0.2, 0.8, 0.7;
  const auto obs = build_observation(mesh, curve, xi, sched);
  const FilterWeights f = filter_matrix(D, obs);
  const double h = 1e-6;
  for (int j = 0; j < 8; ++j) {
    Eigen::VectorXd a = xi, b = xi;
    a[j] += h;
    b[j] -= h;
    const Vector fd = (filter_matrix(D, build_observation(mesh, curve, a, sched)).p -
                       filter_matrix(D, build_observation(mesh, curve, b, sched)).p) / (2 * h);
    CHECK((fd - f.dp.col(j)).norm() <= 1e-6 * std::max(f.dp.col(j).norm(), 1e-3));
  }
  for (int k = 0; k < f.p.size(); ++k) {
    CHECK(f.p[k] > 0.0);
    CHECK(f.p[k] < 1.0);
  }
}
