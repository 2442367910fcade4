#include "sinkclust/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "sinkclust/errors.hpp"

namespace sinkclust {

namespace {

constexpr std::uint32_t kImagesMagic = 2051;
constexpr std::uint32_t kLabelsMagic = 2049;

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad())
        throw IoError("read failed for " + path.string());
    return ss.str();
}

struct IdxFile {
    std::vector<std::uint32_t> dims;
    std::string payload;
};

std::uint32_t be32(const std::string& bytes, std::size_t at)
{
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i)
        v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
    return v;
}

void put_be32(std::string& out, std::uint32_t v)
{
    for (int shift = 24; shift >= 0; shift -= 8)
        out.push_back(static_cast<char>((v >> shift) & 0xffu));
}

IdxFile parse_idx(const std::filesystem::path& path, std::uint32_t magic, std::size_t ndims)
{
    const std::string bytes = read_file(path);
    const std::size_t header = 4 * (1 + ndims);
    if (bytes.size() < 4)
        throw IoError(path.string() + ": truncated IDX header");
    const std::uint32_t found = be32(bytes, 0);
    if (found != magic)
        throw FormatError(path.string() + ": magic " + std::to_string(found) + ", expected " +
                          std::to_string(magic));
    if (bytes.size() < header)
        throw IoError(path.string() + ": truncated IDX header");
    IdxFile out;
    std::size_t expected = 1;
    for (std::size_t i = 0; i < ndims; ++i) {
        out.dims.push_back(be32(bytes, 4 * (1 + i)));
        expected *= out.dims.back();
    }
    if (bytes.size() < header + expected)
        throw IoError(path.string() + ": truncated IDX payload (" +
                      std::to_string(bytes.size() - header) + " of " + std::to_string(expected) +
                      " bytes)");
    if (bytes.size() > header + expected)
        throw FormatError(path.string() + ": trailing bytes after IDX payload");
    out.payload = bytes.substr(header);
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform in (0, 1] from draw number `counter` of stream `seed`.
double counter_uniform(std::uint64_t seed, std::uint64_t counter)
{
    const std::uint64_t bits = splitmix64(splitmix64(seed) ^ counter);
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

int Dataset::classes() const
{
    if (!labels || labels->empty())
        return 0;
    return 1 + *std::max_element(labels->begin(), labels->end());
}

void Dataset::validate() const
{
    if (labels) {
        if (static_cast<Eigen::Index>(labels->size()) != n())
            throw ConsistencyError(name + ": " + std::to_string(labels->size()) + " labels for " +
                                   std::to_string(n()) + " samples");
        for (int y : *labels)
            if (y < 0)
                throw ConsistencyError(name + ": negative label");
    }
    if (!all_finite(features))
        throw ContractError(name + ": non-finite feature");
}

Dataset Dataset::head(Eigen::Index limit) const
{
    if (limit <= 0 || limit >= n())
        return *this;
    Dataset out{features.topRows(limit), std::nullopt, name};
    if (labels)
        out.labels = std::vector<int>(labels->begin(), labels->begin() + limit);
    return out;
}

Dataset Dataset::subset(const std::vector<int>& rows) const
{
    Dataset out{gather_rows(features, rows), std::nullopt, name};
    if (labels) {
        out.labels.emplace();
        for (int r : rows)
            out.labels->push_back(labels->at(static_cast<std::size_t>(r)));
    }
    return out;
}

Dataset load_idx_images(const std::filesystem::path& images)
{
    const IdxFile img = parse_idx(images, kImagesMagic, 3);
    const Eigen::Index n = img.dims[0];
    const Eigen::Index d = static_cast<Eigen::Index>(img.dims[1]) * img.dims[2];
    Dataset out;
    out.name = images.filename().string();
    out.features.resize(n, d);
    for (Eigen::Index i = 0; i < n * d; ++i)
        out.features.data()[i] =
            static_cast<unsigned char>(img.payload[static_cast<std::size_t>(i)]) / 255.0;
    return out;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels)
{
    Dataset out = load_idx_images(images);
    const IdxFile lab = parse_idx(labels, kLabelsMagic, 1);
    if (static_cast<Eigen::Index>(lab.dims[0]) != out.n())
        throw ConsistencyError(images.string() + " has " + std::to_string(out.n()) +
                               " images but " + labels.string() + " has " +
                               std::to_string(lab.dims[0]) + " labels");
    out.labels.emplace();
    out.labels->reserve(lab.payload.size());
    for (char c : lab.payload)
        out.labels->push_back(static_cast<unsigned char>(c));
    return out;
}

void write_idx(const Dataset& data, const std::filesystem::path& images,
               const std::filesystem::path& labels, int rows, int cols)
{
    if (static_cast<Eigen::Index>(rows) * cols != data.d())
        throw ShapeError("write_idx: " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " does not match d = " + std::to_string(data.d()));
    if (data.features.size() > 0 &&
        (data.features.minCoeff() < 0.0 || data.features.maxCoeff() > 1.0))
        throw ContractError("write_idx: features must lie in [0, 1]");

    std::string img;
    put_be32(img, kImagesMagic);
    put_be32(img, static_cast<std::uint32_t>(data.n()));
    put_be32(img, static_cast<std::uint32_t>(rows));
    put_be32(img, static_cast<std::uint32_t>(cols));
    for (Eigen::Index i = 0; i < data.features.size(); ++i)
        img.push_back(static_cast<char>(std::lround(data.features.data()[i] * 255.0)));
    write_file(images, img);

    if (!labels.empty()) {
        if (!data.labels)
            throw ContractError("write_idx: dataset has no labels");
        std::string lab;
        put_be32(lab, kLabelsMagic);
        put_be32(lab, static_cast<std::uint32_t>(data.labels->size()));
        for (int y : *data.labels) {
            if (y < 0 || y > 255)
                throw ContractError("write_idx: label out of byte range");
            lab.push_back(static_cast<char>(y));
        }
        write_file(labels, lab);
    }
}

Dataset load_csv(const std::filesystem::path& path, int label_column)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::string line;
    std::size_t width = 0;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<double> values;
        std::stringstream ss(line);
        std::string cell;
        int column = 0;
        while (std::getline(ss, cell, ',')) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0) {
                if (rows.empty() && values.empty() && lineno == 1)
                    break;  // header
                throw FormatError(path.string() + ":" + std::to_string(lineno) +
                                  ": not a number: '" + cell + "'");
            }
            if (column++ == label_column)
                labels.push_back(static_cast<int>(std::lround(v)));
            else
                values.push_back(v);
        }
        if (values.empty())
            continue;
        if (width == 0)
            width = values.size();
        if (values.size() != width)
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(width) + " columns");
        rows.push_back(std::move(values));
    }
    Dataset out;
    out.name = path.filename().string();
    out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < width; ++j)
            out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    if (label_column >= 0)
        out.labels = std::move(labels);
    out.validate();
    return out;
}

Dataset make_blobs(const std::vector<int>& n_per_cluster, const Matrix& centers, double sigma,
                   std::uint64_t seed)
{
    if (!(sigma >= 0.0))
        throw ContractError("make_blobs: sigma must be >= 0");
    if (static_cast<Eigen::Index>(n_per_cluster.size()) != centers.rows())
        throw ShapeError("make_blobs: " + std::to_string(n_per_cluster.size()) +
                         " cluster sizes for " + std::to_string(centers.rows()) + " centers");
    for (int c : n_per_cluster)
        if (c < 0)
            throw ContractError("make_blobs: negative cluster size");
    const Eigen::Index total = std::accumulate(n_per_cluster.begin(), n_per_cluster.end(), 0);
    Dataset out;
    out.name = "blobs";
    out.features.resize(total, centers.cols());
    out.labels.emplace();
    std::uint64_t counter = 0;
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < n_per_cluster.size(); ++k) {
        for (int s = 0; s < n_per_cluster[k]; ++s, ++row) {
            for (Eigen::Index j = 0; j < centers.cols(); ++j, counter += 2) {
                const double u1 = counter_uniform(seed, counter);
                const double u2 = counter_uniform(seed, counter + 1);
                const double z = std::sqrt(-2.0 * std::log(u1)) *
                                 std::cos(2.0 * std::numbers::pi * u2);
                out.features(row, j) = centers(static_cast<Eigen::Index>(k), j) + sigma * z;
            }
            out.labels->push_back(static_cast<int>(k));
        }
    }
    return out;
}

std::vector<std::vector<int>> batch_iter(Eigen::Index n, Eigen::Index m, std::uint64_t seed,
                                         int epoch)
{
    if (m < 1)
        throw ContractError("batch_iter: batch size must be >= 1");
    if (m > n)
        throw ContractError("batch_iter: batch size " + std::to_string(m) + " exceeds " +
                            std::to_string(n) + " samples");
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> batches;
    for (Eigen::Index b = 0; b + m <= n; b += m)
        batches.emplace_back(order.begin() + b, order.begin() + b + m);
    return batches;
}

Matrix gather_rows(const Matrix& data, const std::vector<int>& rows)
{
    Matrix out(static_cast<Eigen::Index>(rows.size()), data.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= data.rows())
            throw ContractError("gather_rows: index " + std::to_string(rows[i]) +
                                " out of range");
        out.row(static_cast<Eigen::Index>(i)) = data.row(rows[i]);
    }
    return out;
}

}  // namespace sinkclust
