#include "sinkclust/matrix.hpp"

#include "sinkclust/errors.hpp"

namespace sinkclust {

Matrix make_matrix(std::initializer_list<std::initializer_list<double>> rows)
{
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = n == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.begin()->size());
    Matrix m(n, p);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        if (static_cast<Eigen::Index>(row.size()) != p)
            throw ShapeError("make_matrix: ragged rows");
        Eigen::Index j = 0;
        for (double v : row)
            m(i, j++) = v;
        ++i;
    }
    return m;
}

Vector make_vector(std::initializer_list<double> values)
{
    return make_vector(std::vector<double>(values));
}

Vector make_vector(const std::vector<double>& values)
{
    Vector v(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = values[i];
    return v;
}

std::string shape_string(const Matrix& m)
{
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

bool all_finite(const Matrix& m)
{
    return m.allFinite();
}

}  // namespace sinkclust
