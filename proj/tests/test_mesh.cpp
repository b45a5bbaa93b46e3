#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/simulate.hpp"

using namespace sbglm;

namespace {

SurfaceMesh single_triangle(Eigen::Vector3d a, Eigen::Vector3d b, Eigen::Vector3d c) {
  return SurfaceMesh({a, b, c}, {Triangle{0, 1, 2}});
}

// Stiffness from element gradients: G_ij = sum_T area_T grad(phi_i) . grad(phi_j).
Eigen::MatrixXd gradient_stiffness(const SurfaceMesh& mesh) {
  const int n = mesh.num_vertices();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (const auto& t : mesh.triangles()) {
    const Eigen::Vector3d& p0 = mesh.vertices()[t[0]];
    const Eigen::Vector3d e1 = mesh.vertices()[t[1]] - p0;
    const Eigen::Vector3d e2 = mesh.vertices()[t[2]] - p0;
    // local 2D frame
    const Eigen::Vector3d u = e1.normalized();
    const Eigen::Vector3d w = (e2 - e2.dot(u) * u).normalized();
    Eigen::Matrix3d coords;
    coords << 1, 1, 1, 0, e1.dot(u), e2.dot(u), 0, e1.dot(w), e2.dot(w);
    // rows of inv(coords^T) give the linear basis coefficients (c, gx, gy)
    const Eigen::Matrix3d basis = coords.inverse();
    const double area = 0.5 * std::abs(e1.dot(u) * e2.dot(w) - e2.dot(u) * e1.dot(w));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        g(t[i], t[j]) += area * (basis(i, 1) * basis(j, 1) + basis(i, 2) * basis(j, 2));
  }
  return g;
}

}  // namespace

TEST_CASE("equilateral triangle has lumped mass area/3") {
  const auto mesh = single_triangle({0, 0, 0}, {1, 0, 0}, {0.5, std::sqrt(3.0) / 2, 0});
  const auto fem = assemble_fem(mesh);
  for (int i = 0; i < 3; ++i) CHECK(fem.mass[i] == doctest::Approx(std::sqrt(3.0) / 12).epsilon(1e-12));
  CHECK(fem.mass[0] == doctest::Approx(0.1443).epsilon(1e-3));
  const Eigen::MatrixXd g(fem.stiffness);
  CHECK(g(0, 1) == doctest::Approx(-0.5 / std::sqrt(3.0)));
  CHECK(g(0, 0) == doctest::Approx(1.0 / std::sqrt(3.0)));
}

TEST_CASE("right triangle cotangent stiffness") {
  const auto mesh = single_triangle({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
  const Eigen::MatrixXd g(assemble_fem(mesh).stiffness);
  Eigen::Matrix3d expected;
  expected << 1, -0.5, -0.5, -0.5, 0.5, 0, -0.5, 0, 0.5;
  CHECK((g - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stiffness matches gradient assembly on a curved mesh") {
  MeshSpec spec;
  spec.kind = "icosphere";
  spec.level = 2;
  spec.radius = 3.0;
  const auto mesh = make_mesh(spec);
  const auto fem = assemble_fem(mesh);
  const Eigen::MatrixXd g(fem.stiffness);
  CHECK((g - gradient_stiffness(mesh)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((g - g.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.rowwise().sum().cwiseAbs().maxCoeff() < 1e-10);
  CHECK(fem.mass.sum() == doctest::Approx(mesh.total_area()));
  CHECK(fem.mass.minCoeff() > 0.0);
}

TEST_CASE("icosahedron topology") {
  MeshSpec spec;
  spec.kind = "icosphere";
  spec.level = 0;
  const auto mesh = make_mesh(spec);
  CHECK(mesh.num_vertices() == 12);
  CHECK(mesh.num_triangles() == 20);
  CHECK(mesh.edges().size() == 30);
  for (const auto& nb : mesh.neighbors()) CHECK(nb.size() == 5);
  CHECK(vertex_adjacency(mesh).sum() == 60);
}

TEST_CASE("grid sizes") {
  MeshSpec spec;
  spec.rows = 2;
  spec.cols = 2;
  auto mesh = make_mesh(spec);
  CHECK(mesh.num_vertices() == 4);
  CHECK(mesh.num_triangles() == 2);
  spec.rows = 5;
  spec.cols = 7;
  mesh = make_mesh(spec);
  CHECK(mesh.num_vertices() == 35);
  CHECK(mesh.num_triangles() == 2 * 4 * 6);
}

TEST_CASE("invalid meshes are rejected") {
  const Eigen::Vector3d a(0, 0, 0), b(1, 0, 0), c(0, 1, 0), d(0, 0, 1), e(1, 1, 1);
  CHECK_THROWS_AS(SurfaceMesh({a, b, c}, {Triangle{0, 1, 3}}), ConfigError);
  CHECK_THROWS_AS(SurfaceMesh({a, b, Eigen::Vector3d(2, 0, 0)}, {Triangle{0, 1, 2}}), ConfigError);
  CHECK_THROWS_AS(SurfaceMesh({a, b, c, d, e}, {Triangle{0, 1, 2}, Triangle{0, 1, 3}, Triangle{0, 1, 4}}),
                  ConfigError);
}

TEST_CASE("connected components") {
  const Eigen::Vector3d a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  const Eigen::Vector3d o(5, 0, 0);
  const SurfaceMesh mesh({a, b, c, a + o, b + o, c + o}, {Triangle{0, 1, 2}, Triangle{3, 4, 5}});
  const auto labels = connected_components(mesh);
  CHECK(labels == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(SurfaceSmoother(mesh, 2.0).num_components() == 2);
}

TEST_CASE("surface smoothing properties") {
  MeshSpec spec;
  spec.rows = 12;
  spec.cols = 12;
  spec.spacing = 1.0;
  const auto mesh = make_mesh(spec);
  const int n = mesh.num_vertices();
  Eigen::VectorXd field = Eigen::VectorXd::Zero(n);
  field[5 * 12 + 5] = 1.0;

  const SurfaceSmoother none(mesh, 0.0);
  CHECK(none.identity());
  CHECK((none.apply(field) - field).norm() == 0.0);

  const SurfaceSmoother smoother(mesh, 4.0);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  CHECK((smoother.apply(ones) - ones).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::VectorXd smoothed = smoother.apply(field);
  CHECK(smoothed.minCoeff() >= 0.0);
  CHECK(smoothed.maxCoeff() < 1.0);
  CHECK(smoothed[5 * 12 + 5] == smoothed.maxCoeff());
  // truncation at three sigma of graph distance
  const double cutoff = 3.0 * fwhm_to_sigma(4.0);
  CHECK(smoothed[0] == 0.0);
  CHECK(cutoff < 10.0);
  CHECK(fwhm_to_sigma(2.0 * std::sqrt(2.0 * std::log(2.0))) == doctest::Approx(1.0));

  const Eigen::MatrixXd rows = Eigen::MatrixXd::Random(3, n);
  const Eigen::MatrixXd out = smoother.apply_rows(rows);
  for (int r = 0; r < 3; ++r)
    CHECK((out.row(r).transpose() - smoother.apply(rows.row(r).transpose())).norm() < 1e-12);
}

TEST_CASE("edge distortion") {
  MeshSpec spec;
  spec.rows = 4;
  spec.cols = 4;
  const auto mesh = make_mesh(spec);
  auto same = edge_distance_distortion(mesh, mesh);
  for (const auto& e : same) CHECK(e.ratio == doctest::Approx(1.0));
  std::vector<Eigen::Vector3d> scaled = mesh.vertices();
  for (auto& v : scaled) v *= 2.0;
  const auto ratios = edge_distance_distortion(mesh, mesh.with_vertices(scaled));
  CHECK(ratios.size() == mesh.edges().size());
  const auto s = summarize_distortion(ratios);
  CHECK(s.min == doctest::Approx(0.5));
  CHECK(s.max == doctest::Approx(0.5));
  CHECK(s.median == doctest::Approx(0.5));

  spec.rows = 3;
  CHECK_THROWS_AS(edge_distance_distortion(mesh, make_mesh(spec)), ConfigError);
}

TEST_CASE("mesh file round trip") {
  MeshSpec spec;
  spec.kind = "icosphere";
  spec.level = 1;
  const auto mesh = make_mesh(spec);
  const auto path = std::filesystem::temp_directory_path() / "sbglm_mesh_roundtrip.txt";
  write_mesh(path, mesh);
  const auto back = read_mesh(path);
  CHECK(back.num_vertices() == mesh.num_vertices());
  CHECK(back.triangles() == mesh.triangles());
  for (int i = 0; i < mesh.num_vertices(); ++i) CHECK(back.vertices()[i] == mesh.vertices()[i]);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_mesh(path), ConfigError);
}
