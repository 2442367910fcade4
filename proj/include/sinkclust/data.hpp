#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sinkclust/matrix.hpp"

namespace sinkclust {

/// Rows of `features` are samples. Labels are for evaluation only.
struct Dataset {
    Matrix features;
    std::optional<std::vector<int>> labels;
    std::string name;

    Eigen::Index n() const { return features.rows(); }
    Eigen::Index d() const { return features.cols(); }
    /// 1 + largest label, 0 without labels.
    int classes() const;
    /// Throws ConsistencyError on a label count mismatch or a negative label,
    /// ContractError on non-finite features.
    void validate() const;
    /// First `limit` rows (all of them when limit <= 0 or limit >= n).
    Dataset head(Eigen::Index limit) const;
    Dataset subset(const std::vector<int>& rows) const;
};

/// Big-endian IDX, images magic 2051 with dims [n, rows, cols] and labels
/// magic 2049 with dims [n]. Pixels are scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset load_idx_images(const std::filesystem::path& images);

/// Inverse of load_idx. Features are mapped back with round(255 x) and must
/// lie in [0, 1]; rows x cols must equal d.
void write_idx(const Dataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels, int rows, int cols);

/// Numeric CSV, one sample per line. With `label_column` >= 0 that column
/// holds integer labels and is removed from the features.
Dataset load_csv(const std::filesystem::path& path, int label_column = -1);

/// Isotropic Gaussian samples, n_per_cluster[k] of them around centers.row(k).
/// Normal draws come from Box-Muller over a counter-based generator.
Dataset make_blobs(const std::vector<int>& n_per_cluster, const Matrix& centers, double sigma,
                   std::uint64_t seed);

/// Seeded shuffle of 0..n-1 for `epoch`, cut into floor(n / m) batches of m;
/// the remainder is dropped.
std::vector<std::vector<int>> batch_iter(Eigen::Index n, Eigen::Index m, std::uint64_t seed,
                                         int epoch);

/// Rows of `data` selected by `rows`.
Matrix gather_rows(const Matrix& data, const std::vector<int>& rows);

}  // namespace sinkclust
