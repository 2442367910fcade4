#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sinkclust/autodiff.hpp"
#include "sinkclust/matrix.hpp"

namespace sinkclust {

/// Fully connected layer, y = x W + b with W: in x out and b: 1 x out.
struct DenseLayer {
    Matrix weight;
    Matrix bias;
};

/// Encoder/decoder pair. Hidden layers use ReLU; the latent layer and the
/// reconstruction layer are linear. `encoder_dims` runs input -> latent,
/// e.g. {784, 500, 250, 10}; the decoder mirrors it.
struct AutoencoderParams {
    std::vector<Eigen::Index> encoder_dims;
    std::vector<DenseLayer> encoder;
    std::vector<DenseLayer> decoder;

    Eigen::Index input_dim() const { return encoder_dims.front(); }
    Eigen::Index latent_dim() const { return encoder_dims.back(); }

    /// Every weight and bias, encoder first, in a fixed order shared by the
    /// optimizer and the checkpoint format.
    std::vector<Matrix*> parameters();
    std::vector<const Matrix*> parameters() const;
    std::size_t parameter_count() const;
};

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
AutoencoderParams make_autoencoder(const std::vector<Eigen::Index>& encoder_dims,
                                   std::uint64_t seed);

/// Parameters bound as leaves on a tape, in `AutoencoderParams::parameters()` order.
struct TapedAutoencoder {
    std::vector<ad::Var> encoder_weight, encoder_bias;
    std::vector<ad::Var> decoder_weight, decoder_bias;

    std::vector<ad::Var> parameters() const;
};

TapedAutoencoder bind(ad::Tape& tape, const AutoencoderParams& params);

ad::Var encoder_forward(const TapedAutoencoder& net, const ad::Var& batch);
ad::Var decoder_forward(const TapedAutoencoder& net, const ad::Var& embedded);
/// sum_i ||x_i - g(f(x_i))||^2 over the batch rows.
ad::Var reconstruction_loss(const TapedAutoencoder& net, const ad::Var& batch);

// Tape-free evaluation, used for full-dataset embedding.
Matrix encode(const AutoencoderParams& params, const Matrix& batch);
Matrix decode(const AutoencoderParams& params, const Matrix& embedded);
double reconstruction_loss(const AutoencoderParams& params, const Matrix& batch);

struct AdamConfig {
    double base_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_hat = 1e-8;
    /// Step decay: lr = base_lr * decay_factor^(epoch / decay_every).
    int decay_every = 40;
    double decay_factor = 0.5;

    double learning_rate(int epoch) const;
};

/// Bias-corrected Adam. Moments and step counts are kept per parameter slot;
/// slot i always refers to the i-th entry of the list passed to `step`.
class Adam {
public:
    explicit Adam(AdamConfig config = {});

    /// Updates params[i] -= lr * mhat / (sqrt(vhat) + eps_hat). Slots are
    /// created on first use; a slot never stepped keeps a zero step count.
    void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, int epoch);

    const AdamConfig& config() const { return config_; }
    std::size_t slot_count() const { return slots_.size(); }
    const Matrix& first_moment(std::size_t slot) const { return slots_.at(slot).m; }
    const Matrix& second_moment(std::size_t slot) const { return slots_.at(slot).v; }
    long step_count(std::size_t slot) const { return slots_.at(slot).steps; }

private:
    struct Slot {
        Matrix m, v;
        long steps = 0;
    };
    AdamConfig config_;
    std::vector<Slot> slots_;
};

/// Metadata stored in a checkpoint's JSON header.
struct CheckpointInfo {
    std::uint64_t seed = 0;
    int epoch = 0;
    std::string method;
    Matrix centers;     ///< K x p, may be empty
    Vector proportions; ///< length K, may be empty
};

/// Layout: 8-byte little-endian header length, UTF-8 JSON header, then every
/// parameter (in `parameters()` order) followed by the centers as row-major
/// little-endian doubles.
void save_checkpoint(const std::filesystem::path& path, const AutoencoderParams& params,
                     const CheckpointInfo& info);
std::pair<AutoencoderParams, CheckpointInfo> load_checkpoint(const std::filesystem::path& path);

}  // namespace sinkclust
