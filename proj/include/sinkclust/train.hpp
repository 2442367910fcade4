#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sinkclust/cluster_losses.hpp"
#include "sinkclust/data.hpp"
#include "sinkclust/neural.hpp"

namespace sinkclust {

enum class Method { ae_kmeans, soft_kmeans, ot };

std::string to_string(Method m);
Method parse_method(const std::string& s);

struct BlobSpec {
    int clusters = 3;
    int per_cluster = 300;
    int dim = 10;
    double sigma = 0.1;
    /// Center k sits at spread * e_k (random in [-spread, spread]^dim if dim < clusters).
    double spread = 1.0;
    std::uint64_t seed = 7;
};

struct DatasetSpec {
    /// blobs | mnist | idx | csv
    std::string kind = "mnist";
    /// mnist: directory holding the IDX pair; csv: the file. Relative paths
    /// that do not exist are retried under $SINKCLUST_DATA_DIR.
    std::string path = "mnist";
    std::string images;  ///< idx only
    std::string labels;  ///< idx only
    int label_column = -1;  ///< csv only
    long limit = 0;         ///< keep the first `limit` samples (0 = all)
    BlobSpec blobs;
};

struct TrainConfig {
    Method method = Method::ot;
    int K = 10;
    double epsilon = 1e-2;
    double lambda = 1.0;
    int batch_size = 300;
    int n_pretrain = 10;
    int n_epochs = 50;
    std::vector<double> proportions;  ///< empty = uniform
    double base_lr = 1e-3;
    int decay_every = 40;
    double decay_factor = 0.5;
    struct {
        std::uint64_t weights = 1;
        std::uint64_t shuffle = 2;
        std::uint64_t kmeans = 3;
    } seeds;
    struct {
        int max_iterations = 1000;
        double tolerance = 1e-6;
        SinkhornMode mode = SinkhornMode::log_domain;
        OtGradient gradient = OtGradient::unrolled;
        bool transport_cost_only = false;
        bool update_columns = true;
    } sinkhorn;
    std::vector<Eigen::Index> hidden = {500, 250};
    Eigen::Index latent = 10;
    int kmeans_max_iter = 300;
    double kmeans_tol = 1e-8;
    DatasetSpec dataset;
    bool save_checkpoint = true;

    /// Throws ContractError on an invalid combination.
    void validate() const;
    Vector weights() const;  ///< proportions, or uniform when empty
    AdamConfig adam() const;
    CombinedLossConfig loss_config() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Reads a (possibly partial) config on top of the defaults. Unknown keys and
/// type mismatches throw ContractError.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);
/// Applies "a.b.c=VALUE"; VALUE is parsed as JSON, or taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Loads or generates the dataset described by `spec` and applies `limit`.
Dataset load_dataset(const DatasetSpec& spec);

struct EpochRecord {
    int epoch = 0;
    double recon_loss = 0.0;              ///< per sample
    std::optional<double> cluster_loss;   ///< per batch, absent for ae_kmeans
    std::optional<double> accuracy;       ///< absent without labels
    double sinkhorn_iters = 0.0;          ///< mean per batch
    double marginal_violation = 0.0;      ///< max over batches
    std::vector<double> batch_violations;
};

struct RunMetrics {
    std::vector<double> pretrain_losses;  ///< per sample, one per pre-training epoch
    std::vector<EpochRecord> epochs;      ///< epoch 0 = after center initialization
    std::optional<double> initial_accuracy;
    std::optional<double> final_accuracy;
    std::vector<int> assignments;
    std::vector<std::string> warnings;
    double elapsed_seconds = 0.0;
    nlohmann::json config;
};

struct TrainState {
    AutoencoderParams params;
    ClusterModel model;
    Adam optimizer;
    int global_epoch = 0;  ///< drives the shuffle and the learning-rate decay
};

TrainState init_state(const TrainConfig& cfg, Eigen::Index input_dim);

/// n_pretrain epochs of Adam on the reconstruction loss. Returns the mean
/// per-sample loss of each epoch.
std::vector<double> pretrain(const TrainConfig& cfg, const Dataset& data, TrainState& state);

/// k-means++ and Lloyd on the embedded dataset; proportions from the config.
/// Appends a warning when a k-means cluster size is off from n w_k by more
/// than a factor of two.
ClusterModel init_centers(const TrainConfig& cfg, const Dataset& data,
                          const AutoencoderParams& params,
                          std::vector<std::string>* warnings = nullptr);

/// One pass over the shuffled batches with one Adam step each. The centers
/// are only updated for soft_kmeans and ot.
EpochRecord train_epoch(const TrainConfig& cfg, const Dataset& data, TrainState& state);

/// Nearest-center assignment of the embedded dataset; ae_kmeans runs a fresh
/// k-means on the embedding instead.
std::vector<int> final_clustering(const TrainConfig& cfg, const AutoencoderParams& params,
                                  const ClusterModel& model, const Dataset& data);

/// Full run. With a non-empty `out_dir`, writes metrics.csv (updated each
/// epoch), summary.json and checkpoint.bin there.
RunMetrics run_experiment(const TrainConfig& cfg, const std::filesystem::path& out_dir = {});
RunMetrics run_experiment(const TrainConfig& cfg, const Dataset& data,
                          const std::filesystem::path& out_dir = {});

/// metrics.csv body, %.17g numbers, empty cells for absent values.
std::string metrics_csv(const RunMetrics& metrics);

}  // namespace sinkclust
