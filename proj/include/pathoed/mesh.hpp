#pragma once

// Structured P1 triangulation of the unit square with matrix assembly and
// point evaluation of the nodal basis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace pathoed {

using Point = Eigen::Vector2d;
using SparseMatrix = Eigen::SparseMatrix<double>;
using VelocityField = std::function<Point(const Point&)>;

/// Nonzero entries of a length-n_x vector. Basis evaluations have at most 3.
struct SparseVector {
  std::array<int, 3> index{};
  std::array<double, 3> value{};
  int size = 0;

  double dot(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    double s = 0.0;
    for (int a = 0; a < size; ++a) s += value[a] * x[index[a]];
    return s;
  }

  double sum() const {
    double s = 0.0;
    for (int a = 0; a < size; ++a) s += value[a];
    return s;
  }

  /// x += alpha * this
  void add_to(Eigen::Ref<Eigen::VectorXd> x, double alpha = 1.0) const {
    for (int a = 0; a < size; ++a) x[index[a]] += alpha * value[a];
  }

  Eigen::VectorXd dense(int n) const {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    add_to(x);
    return x;
  }
};

/// Gradient of the active basis functions at a point, one SparseVector per
/// coordinate direction.
struct BasisGradient {
  SparseVector d1;
  SparseVector d2;
};

class StructuredMesh {
 public:
  explicit StructuredMesh(int n_side) : n_side_(n_side) {
    if (n_side < 2) {
      throw std::invalid_argument("build_mesh: n_side must be >= 2, got " +
                                  std::to_string(n_side));
    }
    h_ = 1.0 / static_cast<double>(n_side - 1);
    nodes_.reserve(static_cast<std::size_t>(n_side) * n_side);
    for (int j = 0; j < n_side; ++j) {
      for (int i = 0; i < n_side; ++i) {
        nodes_.emplace_back(i * h_, j * h_);
      }
    }
    // Each cell is split along the lower-left -> upper-right diagonal.
    for (int j = 0; j + 1 < n_side; ++j) {
      for (int i = 0; i + 1 < n_side; ++i) {
        const int ll = node_id(i, j);
        const int lr = node_id(i + 1, j);
        const int ur = node_id(i + 1, j + 1);
        const int ul = node_id(i, j + 1);
        triangles_.push_back({ll, lr, ur});
        triangles_.push_back({ll, ur, ul});
      }
    }
  }

  int n_side() const { return n_side_; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_triangles() const { return static_cast<int>(triangles_.size()); }
  double spacing() const { return h_; }
  double element_area() const { return 0.5 * h_ * h_; }
  const std::vector<Point>& nodes() const { return nodes_; }
  const Point& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }

  int node_id(int i, int j) const { return i + j * n_side_; }

  /// Nodes on the named edges ("left", "right", "bottom", "top").
  std::vector<int> edge_nodes(const std::vector<std::string>& edges) const {
    std::vector<char> mark(nodes_.size(), 0);
    for (const auto& e : edges) {
      for (int k = 0; k < n_side_; ++k) {
        if (e == "left") {
          mark[node_id(0, k)] = 1;
        } else if (e == "right") {
          mark[node_id(n_side_ - 1, k)] = 1;
        } else if (e == "bottom") {
          mark[node_id(k, 0)] = 1;
        } else if (e == "top") {
          mark[node_id(k, n_side_ - 1)] = 1;
        } else {
          throw std::invalid_argument("unknown boundary edge '" + e + "'");
        }
      }
    }
    std::vector<int> out;
    for (std::size_t i = 0; i < mark.size(); ++i) {
      if (mark[i]) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  /// Locates x (clamped to the closed square) in a triangle and returns the
  /// barycentric weights at that triangle's vertices.
  SparseVector eval_basis(const Point& x) const {
    const Located loc = locate(x);
    SparseVector out;
    out.size = 3;
    out.index = loc.vertex;
    if (loc.lower) {
      out.value = {1.0 - loc.s, loc.s - loc.t, loc.t};
    } else {
      out.value = {1.0 - loc.t, loc.s, loc.t - loc.s};
    }
    return out;
  }

  /// Gradients of the active basis functions (constant on the triangle that
  /// contains x).
  BasisGradient eval_basis_grad(const Point& x) const {
    const Located loc = locate(x);
    const double inv_h = 1.0 / h_;
    BasisGradient g;
    g.d1.size = g.d2.size = 3;
    g.d1.index = g.d2.index = loc.vertex;
    if (loc.lower) {
      g.d1.value = {-inv_h, inv_h, 0.0};
      g.d2.value = {0.0, -inv_h, inv_h};
    } else {
      g.d1.value = {0.0, inv_h, -inv_h};
      g.d2.value = {-inv_h, 0.0, inv_h};
    }
    return g;
  }

  /// Number of points that were clamped into the square by eval_basis /
  /// eval_basis_grad. Diagnostic only.
  static bool outside(const Point& x) {
    return x[0] < 0.0 || x[0] > 1.0 || x[1] < 0.0 || x[1] > 1.0;
  }

  /// Index of the triangle containing x (after clamping).
  int containing_triangle(const Point& x) const {
    const Located loc = locate(x);
    return 2 * (loc.ci + loc.cj * (n_side_ - 1)) + (loc.lower ? 0 : 1);
  }

 private:
  struct Located {
    std::array<int, 3> vertex;
    double s;  // local x coordinate in [0,1]
    double t;  // local y coordinate in [0,1]
    bool lower;
    int ci;
    int cj;
  };

  Located locate(const Point& x) const {
    const double px = std::clamp(x[0], 0.0, 1.0) / h_;
    const double py = std::clamp(x[1], 0.0, 1.0) / h_;
    const int last = n_side_ - 2;
    const int ci = std::clamp(static_cast<int>(std::floor(px)), 0, last);
    const int cj = std::clamp(static_cast<int>(std::floor(py)), 0, last);
    const double s = px - ci;
    const double t = py - cj;
    Located loc;
    loc.s = s;
    loc.t = t;
    loc.ci = ci;
    loc.cj = cj;
    loc.lower = s >= t;
    const int ll = node_id(ci, cj);
    const int ur = node_id(ci + 1, cj + 1);
    if (loc.lower) {
      loc.vertex = {ll, node_id(ci + 1, cj), ur};
    } else {
      loc.vertex = {ll, ur, node_id(ci, cj + 1)};
    }
    return loc;
  }

  int n_side_;
  double h_;
  std::vector<Point> nodes_;
  std::vector<std::array<int, 3>> triangles_;
};

inline StructuredMesh build_mesh(int n_side) { return StructuredMesh(n_side); }

namespace detail {

struct ElementGeometry {
  double area;
  std::array<Point, 3> grad;  // gradients of the three barycentric functions
  Point centroid;
};

inline ElementGeometry element_geometry(const StructuredMesh& mesh,
                                        const std::array<int, 3>& tri) {
  const Point& p0 = mesh.node(tri[0]);
  const Point& p1 = mesh.node(tri[1]);
  const Point& p2 = mesh.node(tri[2]);
  const double det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
  ElementGeometry g;
  g.area = 0.5 * std::abs(det);
  g.grad[0] = Point(p1[1] - p2[1], p2[0] - p1[0]) / det;
  g.grad[1] = Point(p2[1] - p0[1], p0[0] - p2[0]) / det;
  g.grad[2] = Point(p0[1] - p1[1], p1[0] - p0[0]) / det;
  g.centroid = (p0 + p1 + p2) / 3.0;
  return g;
}

template <typename Local>
SparseMatrix assemble(const StructuredMesh& mesh, Local&& local) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(mesh.num_triangles()) * 9);
  for (const auto& tri : mesh.triangles()) {
    const ElementGeometry geo = element_geometry(mesh, tri);
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        const double v = local(geo, a, b);
        if (v != 0.0) trip.emplace_back(tri[a], tri[b], v);
      }
    }
  }
  SparseMatrix out(mesh.num_nodes(), mesh.num_nodes());
  out.setFromTriplets(trip.begin(), trip.end());
  out.makeCompressed();
  return out;
}

}  // namespace detail

/// M_ij = integral of phi_i phi_j.
inline SparseMatrix assemble_mass(const StructuredMesh& mesh) {
  return detail::assemble(mesh, [](const detail::ElementGeometry& g, int a, int b) {
    return g.area * (a == b ? 2.0 : 1.0) / 12.0;
  });
}

/// (K_s)_ij = integral of grad phi_i . grad phi_j.
inline SparseMatrix assemble_stiffness(const StructuredMesh& mesh) {
  return detail::assemble(mesh, [](const detail::ElementGeometry& g, int a, int b) {
    return g.area * g.grad[a].dot(g.grad[b]);
  });
}

/// (N_adv)_ij = integral of (v . grad phi_j) phi_i, with v sampled at the
/// triangle centroid.
inline SparseMatrix assemble_advection(const StructuredMesh& mesh, const VelocityField& velocity) {
  return detail::assemble(mesh, [&velocity](const detail::ElementGeometry& g, int a, int b) {
    (void)a;
    return g.area / 3.0 * velocity(g.centroid).dot(g.grad[b]);
  });
}

}  // namespace pathoed
