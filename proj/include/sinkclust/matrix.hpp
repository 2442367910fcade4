#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sinkclust {

/// Dense row-major matrix of doubles. Vectors are stored as n x 1 columns
/// unless stated otherwise.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Builds a matrix from nested initializer lists, e.g. `make_matrix({{1, 2}, {3, 4}})`.
Matrix make_matrix(std::initializer_list<std::initializer_list<double>> rows);

/// Column vector from values.
Vector make_vector(std::initializer_list<double> values);
Vector make_vector(const std::vector<double>& values);

std::string shape_string(const Matrix& m);

bool all_finite(const Matrix& m);

}  // namespace sinkclust
