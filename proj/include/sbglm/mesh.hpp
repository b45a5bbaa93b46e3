#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace sbglm {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triangle = std::array<int, 3>;

/// Triangulated surface. Coordinates are in millimetres.
///
/// Construction validates the mesh: indices in range, no zero-area
/// triangles, and every edge shared by at most two triangles.
class SurfaceMesh {
 public:
  SurfaceMesh() = default;
  SurfaceMesh(std::vector<Eigen::Vector3d> vertices, std::vector<Triangle> triangles);

  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_triangles() const { return static_cast<int>(triangles_.size()); }
  const std::vector<Eigen::Vector3d>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }

  /// Sorted neighbour lists (vertices sharing an edge).
  const std::vector<std::vector<int>>& neighbors() const { return neighbors_; }

  /// Unique undirected edges (i < j), lexicographically sorted.
  std::vector<std::pair<int, int>> edges() const;

  double triangle_area(int t) const;
  double total_area() const;

  /// Same triangles, new coordinates.
  SurfaceMesh with_vertices(std::vector<Eigen::Vector3d> vertices) const;

 private:
  std::vector<Eigen::Vector3d> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<std::vector<int>> neighbors_;
};

/// Linear finite-element matrices. `mass` is the lumped (diagonal) mass
/// matrix, `stiffness` the cotangent Laplacian.
struct FemMatrices {
  Eigen::VectorXd mass;
  SparseMatrix stiffness;

  int size() const { return static_cast<int>(mass.size()); }
  SparseMatrix mass_matrix() const;
};

FemMatrices assemble_fem(const SurfaceMesh& mesh);

/// Symmetric 0/1 adjacency with zero diagonal.
Eigen::SparseMatrix<int> vertex_adjacency(const SurfaceMesh& mesh);

/// Connected component label per vertex, labels numbered from 0 in order
/// of lowest vertex index.
std::vector<int> connected_components(const SurfaceMesh& mesh);

/// Row-normalized Gaussian smoothing operator over graph-geodesic distance.
///
/// Distances are shortest paths along mesh edges. The kernel is truncated
/// at three standard deviations, sigma = fwhm / (2 sqrt(2 ln 2)).
class SurfaceSmoother {
 public:
  SurfaceSmoother(const SurfaceMesh& mesh, double fwhm);

  Eigen::VectorXd apply(const Eigen::VectorXd& field) const;
  /// Smooths each row of a (rows x N) matrix, e.g. a T x N timeseries.
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& data) const;

  double fwhm() const { return fwhm_; }
  bool identity() const { return fwhm_ == 0.0; }
  int num_components() const { return num_components_; }
  const SparseMatrix& weights() const { return weights_; }

 private:
  double fwhm_;
  int num_components_ = 1;
  SparseMatrix weights_;
};

/// One-shot convenience around SurfaceSmoother. Warns on stderr if the mesh
/// is disconnected (smoothing stays within components).
Eigen::VectorXd surface_smooth(const SurfaceMesh& mesh, const Eigen::VectorXd& field,
                               double fwhm);

double fwhm_to_sigma(double fwhm);

struct EdgeRatio {
  int a;
  int b;
  double ratio;
};

struct DistortionSummary {
  double min, q05, q25, median, q75, q95, max;
};

/// Per-edge ratio |u - v|_A / |u - v|_B for two embeddings of one triangulation.
std::vector<EdgeRatio> edge_distance_distortion(const SurfaceMesh& surf_a,
                                                const SurfaceMesh& surf_b);

DistortionSummary summarize_distortion(const std::vector<EdgeRatio>& ratios);

// Text format: "mesh N T", N lines "x y z", T lines "i j k" (0-based).
void write_mesh(const std::filesystem::path& path, const SurfaceMesh& mesh);
SurfaceMesh read_mesh(const std::filesystem::path& path);

}  // namespace sbglm
