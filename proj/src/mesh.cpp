#include "sbglm/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>

#include <Eigen/Geometry>

#include "sbglm/error.hpp"
#include "sbglm/io.hpp"

namespace sbglm {

namespace {

double area_of(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

// cot of the angle at `apex` in triangle (apex, p, q)
double cotangent(const Eigen::Vector3d& apex, const Eigen::Vector3d& p, const Eigen::Vector3d& q) {
  const Eigen::Vector3d u = p - apex;
  const Eigen::Vector3d v = q - apex;
  return u.dot(v) / u.cross(v).norm();
}

}  // namespace

SurfaceMesh::SurfaceMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Triangle> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  const int n = num_vertices();
  std::map<std::pair<int, int>, int> edge_count;
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& tri = triangles_[t];
    for (int idx : tri) {
      if (idx < 0 || idx >= n) {
        throw ConfigError("triangle " + std::to_string(t) + " references vertex " +
                          std::to_string(idx) + " outside [0, " + std::to_string(n) + ")");
      }
    }
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] ||
        area_of(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]) <= 0.0) {
      throw ConfigError("degenerate triangle " + std::to_string(t));
    }
    for (int e = 0; e < 3; ++e) {
      const int a = tri[e];
      const int b = tri[(e + 1) % 3];
      const auto key = std::minmax(a, b);
      if (++edge_count[{key.first, key.second}] > 2) {
        throw ConfigError("edge (" + std::to_string(key.first) + ", " +
                          std::to_string(key.second) + ") shared by more than two triangles");
      }
    }
  }
  for (const auto& v : vertices_) {
    if (!v.allFinite()) throw ConfigError("non-finite vertex coordinate");
  }
  neighbors_.assign(n, {});
  for (const auto& [edge, count] : edge_count) {
    neighbors_[edge.first].push_back(edge.second);
    neighbors_[edge.second].push_back(edge.first);
  }
  for (auto& list : neighbors_) std::sort(list.begin(), list.end());
}

std::vector<std::pair<int, int>> SurfaceMesh::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < num_vertices(); ++i)
    for (int j : neighbors_[i])
      if (i < j) out.emplace_back(i, j);
  return out;
}

double SurfaceMesh::triangle_area(int t) const {
  const auto& tri = triangles_.at(t);
  return area_of(vertices_[tri[0]], vertices_[tri[1]], vertices_[tri[2]]);
}

double SurfaceMesh::total_area() const {
  double total = 0.0;
  for (int t = 0; t < num_triangles(); ++t) total += triangle_area(t);
  return total;
}

SurfaceMesh SurfaceMesh::with_vertices(std::vector<Eigen::Vector3d> vertices) const {
  if (vertices.size() != vertices_.size()) {
    throw ConfigError("with_vertices: vertex count mismatch");
  }
  return SurfaceMesh(std::move(vertices), triangles_);
}

SparseMatrix FemMatrices::mass_matrix() const {
  SparseMatrix c(size(), size());
  c.reserve(Eigen::VectorXi::Constant(size(), 1));
  for (int i = 0; i < size(); ++i) c.insert(i, i) = mass[i];
  c.makeCompressed();
  return c;
}

FemMatrices assemble_fem(const SurfaceMesh& mesh) {
  const int n = mesh.num_vertices();
  const auto& x = mesh.vertices();
  FemMatrices fem;
  fem.mass = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(mesh.triangles().size() * 9);
  for (int t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles()[t];
    const double area = mesh.triangle_area(t);
    if (!(area > 0.0)) throw ConfigError("degenerate triangle " + std::to_string(t));
    for (int k = 0; k < 3; ++k) {
      fem.mass[tri[k]] += area / 3.0;
      // edge opposite to corner k
      const int i = tri[(k + 1) % 3];
      const int j = tri[(k + 2) % 3];
      const double w = 0.5 * cotangent(x[tri[k]], x[i], x[j]);
      triplets.emplace_back(i, j, -w);
      triplets.emplace_back(j, i, -w);
      triplets.emplace_back(i, i, w);
      triplets.emplace_back(j, j, w);
    }
  }
  fem.stiffness.resize(n, n);
  fem.stiffness.setFromTriplets(triplets.begin(), triplets.end());
  fem.stiffness.makeCompressed();
  for (int i = 0; i < n; ++i) {
    if (!(fem.mass[i] > 0.0)) {
      throw ConfigError("vertex " + std::to_string(i) + " belongs to no triangle");
    }
  }
  return fem;
}

Eigen::SparseMatrix<int> vertex_adjacency(const SurfaceMesh& mesh) {
  const int n = mesh.num_vertices();
  std::vector<Eigen::Triplet<int>> triplets;
  for (int i = 0; i < n; ++i)
    for (int j : mesh.neighbors()[i]) triplets.emplace_back(i, j, 1);
  Eigen::SparseMatrix<int> adj(n, n);
  adj.setFromTriplets(triplets.begin(), triplets.end());
  return adj;
}

std::vector<int> connected_components(const SurfaceMesh& mesh) {
  const int n = mesh.num_vertices();
  std::vector<int> label(n, -1);
  int next = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    label[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int u : mesh.neighbors()[v]) {
        if (label[u] < 0) {
          label[u] = next;
          stack.push_back(u);
        }
      }
    }
    ++next;
  }
  return label;
}

double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

SurfaceSmoother::SurfaceSmoother(const SurfaceMesh& mesh, double fwhm) : fwhm_(fwhm) {
  if (!(fwhm >= 0.0)) throw ConfigError("smoothing fwhm must be non-negative");
  const int n = mesh.num_vertices();
  const auto labels = connected_components(mesh);
  num_components_ = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  if (fwhm == 0.0) {
    weights_.resize(n, n);
    weights_.setIdentity();
    return;
  }
  const double sigma = fwhm_to_sigma(fwhm);
  const double cutoff = 3.0 * sigma;
  const auto& x = mesh.vertices();

  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> touched;
  using Item = std::pair<double, int>;
  for (int src = 0; src < n; ++src) {
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
    dist[src] = 0.0;
    touched.assign(1, src);
    heap.emplace(0.0, src);
    while (!heap.empty()) {
      const auto [d, v] = heap.top();
      heap.pop();
      if (d > dist[v]) continue;
      for (int u : mesh.neighbors()[v]) {
        const double nd = d + (x[u] - x[v]).norm();
        if (nd <= cutoff && nd < dist[u]) {
          if (std::isinf(dist[u])) touched.push_back(u);
          dist[u] = nd;
          heap.emplace(nd, u);
        }
      }
    }
    std::sort(touched.begin(), touched.end());
    double total = 0.0;
    for (int u : touched) total += std::exp(-0.5 * dist[u] * dist[u] / (sigma * sigma));
    for (int u : touched) {
      triplets.emplace_back(src, u, std::exp(-0.5 * dist[u] * dist[u] / (sigma * sigma)) / total);
      dist[u] = std::numeric_limits<double>::infinity();
    }
  }
  weights_.resize(n, n);
  weights_.setFromTriplets(triplets.begin(), triplets.end());
  weights_.makeCompressed();
}

Eigen::VectorXd SurfaceSmoother::apply(const Eigen::VectorXd& field) const {
  if (field.size() != weights_.cols()) throw ConfigError("smooth: field length mismatch");
  if (identity()) return field;
  return weights_ * field;
}

Eigen::MatrixXd SurfaceSmoother::apply_rows(const Eigen::MatrixXd& data) const {
  if (data.cols() != weights_.cols()) throw ConfigError("smooth: column count mismatch");
  if (identity()) return data;
  return data * SparseMatrix(weights_.transpose());
}

Eigen::VectorXd surface_smooth(const SurfaceMesh& mesh, const Eigen::VectorXd& field,
                               double fwhm) {
  SurfaceSmoother smoother(mesh, fwhm);
  if (smoother.num_components() > 1 && fwhm > 0.0) {
    std::cerr << "warning: mesh has " << smoother.num_components()
              << " connected components; smoothing within each\n";
  }
  return smoother.apply(field);
}

std::vector<EdgeRatio> edge_distance_distortion(const SurfaceMesh& surf_a,
                                                const SurfaceMesh& surf_b) {
  if (surf_a.num_vertices() != surf_b.num_vertices() ||
      surf_a.triangles() != surf_b.triangles()) {
    throw ConfigError("edge_distance_distortion: surfaces do not share a triangulation");
  }
  std::vector<EdgeRatio> out;
  const auto& xa = surf_a.vertices();
  const auto& xb = surf_b.vertices();
  for (const auto& [i, j] : surf_a.edges()) {
    out.push_back({i, j, (xa[i] - xa[j]).norm() / (xb[i] - xb[j]).norm()});
  }
  return out;
}

DistortionSummary summarize_distortion(const std::vector<EdgeRatio>& ratios) {
  if (ratios.empty()) throw ConfigError("summarize_distortion: no edges");
  std::vector<double> r;
  r.reserve(ratios.size());
  for (const auto& e : ratios) r.push_back(e.ratio);
  std::sort(r.begin(), r.end());
  // linear interpolation between order statistics
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(r.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, r.size() - 1);
    return r[lo] + (pos - static_cast<double>(lo)) * (r[hi] - r[lo]);
  };
  return {r.front(), q(0.05), q(0.25), q(0.5), q(0.75), q(0.95), r.back()};
}

void write_mesh(const std::filesystem::path& path, const SurfaceMesh& mesh) {
  std::string out = "mesh " + std::to_string(mesh.num_vertices()) + " " +
                    std::to_string(mesh.num_triangles()) + "\n";
  for (const auto& v : mesh.vertices()) {
    out += io::format_double(v.x()) + " " + io::format_double(v.y()) + " " +
           io::format_double(v.z()) + "\n";
  }
  for (const auto& t : mesh.triangles()) {
    out += std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
  }
  io::write_text(path, out);
}

SurfaceMesh read_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open mesh file: " + path.string());
  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> std::istringstream {
    if (!std::getline(in, line)) {
      throw ConfigError(path.string() + ": unexpected end of file after line " +
                        std::to_string(line_no));
    }
    ++line_no;
    return std::istringstream(line);
  };
  auto fail = [&](const std::string& msg) {
    throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  auto header = next_line();
  std::string tag;
  long long n = -1, t = -1;
  if (!(header >> tag >> n >> t) || tag != "mesh" || n < 0 || t < 0) {
    fail("expected header 'mesh <N> <T>'");
  }
  std::string extra;
  if (header >> extra) fail("trailing content in header");

  std::vector<Eigen::Vector3d> vertices(static_cast<std::size_t>(n));
  for (auto& v : vertices) {
    auto ss = next_line();
    if (!(ss >> v.x() >> v.y() >> v.z()) || (ss >> extra)) fail("expected 'x y z'");
  }
  std::vector<Triangle> triangles(static_cast<std::size_t>(t));
  for (auto& tri : triangles) {
    auto ss = next_line();
    if (!(ss >> tri[0] >> tri[1] >> tri[2]) || (ss >> extra)) fail("expected 'i j k'");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) fail("trailing content");
  }
  return SurfaceMesh(std::move(vertices), std::move(triangles));
}

}  // namespace sbglm
