#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sbglm::io {

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double x);

/// Reads a whitespace-separated numeric matrix. Blank lines and lines
/// starting with '#' are skipped; every row must have the same width.
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

/// Writes one row per line, tab separated.
void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);

void write_vector(const std::filesystem::path& path, const Eigen::VectorXd& v);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Throws ConfigError naming `what` if the path does not exist.
void require_exists(const std::filesystem::path& path, const std::string& what);

}  // namespace sbglm::io
