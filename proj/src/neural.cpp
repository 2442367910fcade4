#include "sinkclust/neural.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"
#include "sinkclust/errors.hpp"

namespace sinkclust {

namespace {

DenseLayer glorot_layer(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(in, out), Matrix::Zero(1, out)};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
        layer.weight.data()[i] = dist(rng);
    return layer;
}

DenseLayer empty_layer(Eigen::Index in, Eigen::Index out)
{
    return DenseLayer{Matrix::Zero(in, out), Matrix::Zero(1, out)};
}

ad::Var dense_chain(const std::vector<ad::Var>& weights, const std::vector<ad::Var>& biases,
                    ad::Var h)
{
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (h.cols() != weights[l].rows())
            throw ShapeError("dense layer " + std::to_string(l) + ": input width " +
                             std::to_string(h.cols()) + ", expected " +
                             std::to_string(weights[l].rows()));
        h = ad::add_row_vector(ad::matmul(h, weights[l]), biases[l]);
        if (l + 1 < weights.size())
            h = ad::relu(h);
    }
    return h;
}

Matrix dense_chain(const std::vector<DenseLayer>& layers, const Matrix& x)
{
    Matrix h = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (h.cols() != layers[l].weight.rows())
            throw ShapeError("dense layer " + std::to_string(l) + ": input width " +
                             std::to_string(h.cols()) + ", expected " +
                             std::to_string(layers[l].weight.rows()));
        Matrix z = h * layers[l].weight;
        z.rowwise() += layers[l].bias.row(0);
        if (l + 1 < layers.size())
            z = z.cwiseMax(0.0);
        h = std::move(z);
    }
    return h;
}

std::vector<DenseLayer> mirrored_layers(const std::vector<Eigen::Index>& dims, bool decoder,
                                        std::mt19937_64* rng)
{
    std::vector<DenseLayer> layers;
    const std::size_t count = dims.size() - 1;
    for (std::size_t l = 0; l < count; ++l) {
        const Eigen::Index in = decoder ? dims[count - l] : dims[l];
        const Eigen::Index out = decoder ? dims[count - l - 1] : dims[l + 1];
        layers.push_back(rng ? glorot_layer(in, out, *rng) : empty_layer(in, out));
    }
    return layers;
}

void write_le_u64(std::ostream& os, std::uint64_t v)
{
    std::array<char, 8> bytes{};
    for (int i = 0; i < 8; ++i)
        bytes[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(bytes.data(), 8);
}

std::uint64_t read_le_u64(std::istream& is)
{
    std::array<unsigned char, 8> bytes{};
    if (!is.read(reinterpret_cast<char*>(bytes.data()), 8))
        throw IoError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | bytes[static_cast<std::size_t>(i)];
    return v;
}

void write_doubles(std::ostream& os, const Matrix& m)
{
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, m.data() + i, sizeof bits);
        write_le_u64(os, bits);
    }
}

void read_doubles(std::istream& is, Matrix& m)
{
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const std::uint64_t bits = read_le_u64(is);
        std::memcpy(m.data() + i, &bits, sizeof bits);
    }
}

}  // namespace

std::vector<Matrix*> AutoencoderParams::parameters()
{
    std::vector<Matrix*> out;
    for (auto* layers : {&encoder, &decoder})
        for (auto& layer : *layers) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
        }
    return out;
}

std::vector<const Matrix*> AutoencoderParams::parameters() const
{
    std::vector<const Matrix*> out;
    for (auto* layers : {&encoder, &decoder})
        for (const auto& layer : *layers) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
        }
    return out;
}

std::size_t AutoencoderParams::parameter_count() const
{
    std::size_t n = 0;
    for (const auto* p : parameters())
        n += static_cast<std::size_t>(p->size());
    return n;
}

AutoencoderParams make_autoencoder(const std::vector<Eigen::Index>& encoder_dims,
                                   std::uint64_t seed)
{
    if (encoder_dims.size() < 2)
        throw ContractError("autoencoder: need at least input and latent dims");
    for (auto d : encoder_dims)
        if (d < 1)
            throw ContractError("autoencoder: layer widths must be positive");
    std::mt19937_64 rng(seed);
    AutoencoderParams p;
    p.encoder_dims = encoder_dims;
    p.encoder = mirrored_layers(encoder_dims, false, &rng);
    p.decoder = mirrored_layers(encoder_dims, true, &rng);
    return p;
}

std::vector<ad::Var> TapedAutoencoder::parameters() const
{
    std::vector<ad::Var> out;
    for (std::size_t l = 0; l < encoder_weight.size(); ++l) {
        out.push_back(encoder_weight[l]);
        out.push_back(encoder_bias[l]);
    }
    for (std::size_t l = 0; l < decoder_weight.size(); ++l) {
        out.push_back(decoder_weight[l]);
        out.push_back(decoder_bias[l]);
    }
    return out;
}

TapedAutoencoder bind(ad::Tape& tape, const AutoencoderParams& params)
{
    TapedAutoencoder net;
    for (const auto& layer : params.encoder) {
        net.encoder_weight.push_back(tape.leaf(layer.weight));
        net.encoder_bias.push_back(tape.leaf(layer.bias));
    }
    for (const auto& layer : params.decoder) {
        net.decoder_weight.push_back(tape.leaf(layer.weight));
        net.decoder_bias.push_back(tape.leaf(layer.bias));
    }
    return net;
}

ad::Var encoder_forward(const TapedAutoencoder& net, const ad::Var& batch)
{
    return dense_chain(net.encoder_weight, net.encoder_bias, batch);
}

ad::Var decoder_forward(const TapedAutoencoder& net, const ad::Var& embedded)
{
    return dense_chain(net.decoder_weight, net.decoder_bias, embedded);
}

ad::Var reconstruction_loss(const TapedAutoencoder& net, const ad::Var& batch)
{
    ad::Var residual = ad::sub(batch, decoder_forward(net, encoder_forward(net, batch)));
    return ad::sum(ad::mul(residual, residual));
}

Matrix encode(const AutoencoderParams& params, const Matrix& batch)
{
    return dense_chain(params.encoder, batch);
}

Matrix decode(const AutoencoderParams& params, const Matrix& embedded)
{
    return dense_chain(params.decoder, embedded);
}

double reconstruction_loss(const AutoencoderParams& params, const Matrix& batch)
{
    return (batch - decode(params, encode(params, batch))).squaredNorm();
}

double AdamConfig::learning_rate(int epoch) const
{
    if (decay_every <= 0)
        return base_lr;
    return base_lr * std::pow(decay_factor, epoch / decay_every);
}

Adam::Adam(AdamConfig config) : config_(config) {}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, int epoch)
{
    if (params.size() != grads.size())
        throw ShapeError("adam: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    if (slots_.size() < params.size())
        slots_.resize(params.size());
    const double lr = config_.learning_rate(epoch);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = grads[i];
        if (p.rows() != g.rows() || p.cols() != g.cols())
            throw ShapeError("adam: gradient " + shape_string(g) + " for parameter " +
                             shape_string(p));
        Slot& s = slots_[i];
        if (s.m.size() == 0) {
            s.m = Matrix::Zero(p.rows(), p.cols());
            s.v = Matrix::Zero(p.rows(), p.cols());
        }
        ++s.steps;
        s.m = config_.beta1 * s.m + (1.0 - config_.beta1) * g;
        s.v = config_.beta2 * s.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(s.steps));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(s.steps));
        p.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + config_.eps_hat);
    }
}

void save_checkpoint(const std::filesystem::path& path, const AutoencoderParams& params,
                     const CheckpointInfo& info)
{
    nlohmann::json header;
    header["format"] = "sinkclust-checkpoint";
    header["version"] = 1;
    header["encoder_dims"] = params.encoder_dims;
    header["seed"] = info.seed;
    header["epoch"] = info.epoch;
    header["method"] = info.method;
    header["centers_shape"] = {info.centers.rows(), info.centers.cols()};
    header["proportions"] = std::vector<double>(info.proportions.data(),
                                                info.proportions.data() + info.proportions.size());
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("checkpoint: cannot open " + path.string() + " for writing");
    write_le_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params.parameters())
        write_doubles(os, *p);
    write_doubles(os, info.centers);
    if (!os)
        throw IoError("checkpoint: write failed for " + path.string());
}

std::pair<AutoencoderParams, CheckpointInfo> load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("checkpoint: cannot open " + path.string());
    const std::uint64_t length = read_le_u64(is);
    if (length > (1u << 24))
        throw FormatError("checkpoint: implausible header length");
    std::string text(length, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(length)))
        throw IoError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (header.value("format", "") != "sinkclust-checkpoint")
        throw FormatError("checkpoint: not a sinkclust checkpoint");

    AutoencoderParams params;
    CheckpointInfo info;
    try {
        params.encoder_dims = header.at("encoder_dims").get<std::vector<Eigen::Index>>();
        info.seed = header.at("seed").get<std::uint64_t>();
        info.epoch = header.at("epoch").get<int>();
        info.method = header.at("method").get<std::string>();
        const auto shape = header.at("centers_shape").get<std::vector<Eigen::Index>>();
        info.centers = Matrix::Zero(shape.at(0), shape.at(1));
        info.proportions = make_vector(header.at("proportions").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    if (params.encoder_dims.size() < 2)
        throw FormatError("checkpoint: bad encoder_dims");
    params.encoder = mirrored_layers(params.encoder_dims, false, nullptr);
    params.decoder = mirrored_layers(params.encoder_dims, true, nullptr);
    for (auto* p : params.parameters())
        read_doubles(is, *p);
    read_doubles(is, info.centers);
    return {std::move(params), std::move(info)};
}

}  // namespace sinkclust
