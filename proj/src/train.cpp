#include "sinkclust/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "sinkclust/errors.hpp"
#include "sinkclust/evaluation.hpp"
#include "sinkclust/kmeans.hpp"

namespace sinkclust {

using nlohmann::json;

namespace {

std::string mode_name(SinkhornMode m)
{
    return m == SinkhornMode::standard ? "standard" : "log_domain";
}

std::string gradient_name(OtGradient g)
{
    return g == OtGradient::envelope ? "envelope" : "unrolled";
}

// Every key of `given` must exist in `reference`, recursively through objects.
void check_keys(const json& given, const json& reference, const std::string& prefix)
{
    if (!given.is_object())
        return;
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!reference.contains(it.key()))
            throw ContractError("config: unknown key '" + key + "'");
        if (reference.at(it.key()).is_object())
            check_keys(it.value(), reference.at(it.key()), key);
    }
}

std::filesystem::path resolve(const std::string& p)
{
    std::filesystem::path path(p);
    if (std::filesystem::exists(path) || path.is_absolute())
        return path;
    if (const char* root = std::getenv("SINKCLUST_DATA_DIR")) {
        const auto alt = std::filesystem::path(root) / path;
        if (std::filesystem::exists(alt))
            return alt;
    }
    return path;
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double mean_recon(const AutoencoderParams& params, const Matrix& x)
{
    return reconstruction_loss(params, x) / static_cast<double>(x.rows());
}

std::optional<double> accuracy_of(const Dataset& data, const std::vector<int>& assignments)
{
    if (!data.labels)
        return std::nullopt;
    return clustering_accuracy(*data.labels, assignments);
}

std::vector<Matrix> gradients_of(const ad::Gradients& grads, const std::vector<ad::Var>& vars)
{
    std::vector<Matrix> out;
    out.reserve(vars.size());
    for (const auto& v : vars)
        out.push_back(grads.of(v));
    return out;
}

}  // namespace

std::string to_string(Method m)
{
    switch (m) {
    case Method::ae_kmeans: return "ae_kmeans";
    case Method::soft_kmeans: return "soft_kmeans";
    case Method::ot: return "ot";
    }
    return "?";
}

Method parse_method(const std::string& s)
{
    if (s == "ae_kmeans")
        return Method::ae_kmeans;
    if (s == "soft_kmeans")
        return Method::soft_kmeans;
    if (s == "ot")
        return Method::ot;
    throw ContractError("unknown method '" + s + "' (expected ae_kmeans, soft_kmeans or ot)");
}

void TrainConfig::validate() const
{
    if (K < 1)
        throw ContractError("config: K must be >= 1");
    if (batch_size < 1)
        throw ContractError("config: batch_size must be >= 1");
    if (n_pretrain < 0 || n_epochs < 0)
        throw ContractError("config: epoch counts must be >= 0");
    if (method != Method::ae_kmeans && !(epsilon > 0.0))
        throw ContractError("config: epsilon must be > 0");
    if (!(base_lr > 0.0))
        throw ContractError("config: base_lr must be > 0");
    if (!(decay_factor > 0.0))
        throw ContractError("config: decay.factor must be > 0");
    if (!proportions.empty())
        validate_proportions(make_vector(proportions), K);
    if (latent < 1)
        throw ContractError("config: architecture.latent must be >= 1");
    for (auto h : hidden)
        if (h < 1)
            throw ContractError("config: architecture.hidden widths must be >= 1");
    if (sinkhorn.max_iterations < 1 || !(sinkhorn.tolerance > 0.0))
        throw ContractError("config: sinkhorn.max_iterations and tolerance must be positive");
}

Vector TrainConfig::weights() const
{
    if (proportions.empty())
        return Vector::Constant(K, 1.0 / static_cast<double>(K));
    return make_vector(proportions);
}

AdamConfig TrainConfig::adam() const
{
    AdamConfig a;
    a.base_lr = base_lr;
    a.decay_every = decay_every;
    a.decay_factor = decay_factor;
    return a;
}

CombinedLossConfig TrainConfig::loss_config() const
{
    CombinedLossConfig c;
    c.term = method == Method::ot            ? ClusterTerm::ot
             : method == Method::soft_kmeans ? ClusterTerm::soft_kmeans
                                             : ClusterTerm::none;
    c.lambda = lambda;
    c.ot.sinkhorn.epsilon = epsilon;
    c.ot.sinkhorn.max_iterations = sinkhorn.max_iterations;
    c.ot.sinkhorn.tolerance = sinkhorn.tolerance;
    c.ot.sinkhorn.mode = sinkhorn.mode;
    c.ot.sinkhorn.update_columns = sinkhorn.update_columns;
    c.ot.gradient = sinkhorn.gradient;
    c.ot.transport_cost_only = sinkhorn.transport_cost_only;
    return c;
}

json to_json(const TrainConfig& c)
{
    const auto& b = c.dataset.blobs;
    return json{
        {"method", to_string(c.method)},
        {"K", c.K},
        {"epsilon", c.epsilon},
        {"lambda", c.lambda},
        {"batch_size", c.batch_size},
        {"n_pretrain", c.n_pretrain},
        {"n_epochs", c.n_epochs},
        {"proportions", c.proportions},
        {"base_lr", c.base_lr},
        {"decay", {{"every", c.decay_every}, {"factor", c.decay_factor}}},
        {"seeds",
         {{"weights", c.seeds.weights}, {"shuffle", c.seeds.shuffle}, {"kmeans", c.seeds.kmeans}}},
        {"sinkhorn",
         {{"max_iterations", c.sinkhorn.max_iterations},
          {"tolerance", c.sinkhorn.tolerance},
          {"mode", mode_name(c.sinkhorn.mode)},
          {"gradient", gradient_name(c.sinkhorn.gradient)},
          {"transport_cost_only", c.sinkhorn.transport_cost_only},
          {"update_columns", c.sinkhorn.update_columns}}},
        {"architecture", {{"hidden", c.hidden}, {"latent", c.latent}}},
        {"kmeans", {{"max_iter", c.kmeans_max_iter}, {"tol", c.kmeans_tol}}},
        {"dataset",
         {{"kind", c.dataset.kind},
          {"path", c.dataset.path},
          {"images", c.dataset.images},
          {"labels", c.dataset.labels},
          {"label_column", c.dataset.label_column},
          {"limit", c.dataset.limit},
          {"blobs",
           {{"clusters", b.clusters},
            {"per_cluster", b.per_cluster},
            {"dim", b.dim},
            {"sigma", b.sigma},
            {"spread", b.spread},
            {"seed", b.seed}}}}},
        {"save_checkpoint", c.save_checkpoint},
    };
}

TrainConfig config_from_json(const json& given)
{
    const json defaults = to_json(TrainConfig{});
    check_keys(given, defaults, "");
    json j = defaults;
    j.merge_patch(given);

    TrainConfig c;
    try {
        c.method = parse_method(j.at("method").get<std::string>());
        c.K = j.at("K").get<int>();
        c.epsilon = j.at("epsilon").get<double>();
        c.lambda = j.at("lambda").get<double>();
        c.batch_size = j.at("batch_size").get<int>();
        c.n_pretrain = j.at("n_pretrain").get<int>();
        c.n_epochs = j.at("n_epochs").get<int>();
        c.proportions = j.at("proportions").get<std::vector<double>>();
        c.base_lr = j.at("base_lr").get<double>();
        c.decay_every = j.at("decay").at("every").get<int>();
        c.decay_factor = j.at("decay").at("factor").get<double>();
        c.seeds.weights = j.at("seeds").at("weights").get<std::uint64_t>();
        c.seeds.shuffle = j.at("seeds").at("shuffle").get<std::uint64_t>();
        c.seeds.kmeans = j.at("seeds").at("kmeans").get<std::uint64_t>();
        const auto& s = j.at("sinkhorn");
        c.sinkhorn.max_iterations = s.at("max_iterations").get<int>();
        c.sinkhorn.tolerance = s.at("tolerance").get<double>();
        const auto mode = s.at("mode").get<std::string>();
        if (mode != "standard" && mode != "log_domain")
            throw ContractError("config: sinkhorn.mode must be standard or log_domain");
        c.sinkhorn.mode = mode == "standard" ? SinkhornMode::standard : SinkhornMode::log_domain;
        const auto grad = s.at("gradient").get<std::string>();
        if (grad != "unrolled" && grad != "envelope")
            throw ContractError("config: sinkhorn.gradient must be unrolled or envelope");
        c.sinkhorn.gradient = grad == "envelope" ? OtGradient::envelope : OtGradient::unrolled;
        c.sinkhorn.transport_cost_only = s.at("transport_cost_only").get<bool>();
        c.sinkhorn.update_columns = s.at("update_columns").get<bool>();
        c.hidden = j.at("architecture").at("hidden").get<std::vector<Eigen::Index>>();
        c.latent = j.at("architecture").at("latent").get<Eigen::Index>();
        c.kmeans_max_iter = j.at("kmeans").at("max_iter").get<int>();
        c.kmeans_tol = j.at("kmeans").at("tol").get<double>();
        const auto& d = j.at("dataset");
        c.dataset.kind = d.at("kind").get<std::string>();
        c.dataset.path = d.at("path").get<std::string>();
        c.dataset.images = d.at("images").get<std::string>();
        c.dataset.labels = d.at("labels").get<std::string>();
        c.dataset.label_column = d.at("label_column").get<int>();
        c.dataset.limit = d.at("limit").get<long>();
        const auto& b = d.at("blobs");
        c.dataset.blobs.clusters = b.at("clusters").get<int>();
        c.dataset.blobs.per_cluster = b.at("per_cluster").get<int>();
        c.dataset.blobs.dim = b.at("dim").get<int>();
        c.dataset.blobs.sigma = b.at("sigma").get<double>();
        c.dataset.blobs.spread = b.at("spread").get<double>();
        c.dataset.blobs.seed = b.at("seed").get<std::uint64_t>();
        c.save_checkpoint = j.at("save_checkpoint").get<bool>();
    } catch (const json::exception& e) {
        throw ContractError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ContractError("override '" + assignment + "' is not KEY=VALUE");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &j;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.'))
        parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object())
            *node = json::object();
        node = &(*node)[parts[i]];
    }
    if (!node->is_object())
        *node = json::object();
    (*node)[parts.back()] = value;
}

Dataset load_dataset(const DatasetSpec& spec)
{
    Dataset data;
    if (spec.kind == "blobs") {
        const auto& b = spec.blobs;
        if (b.clusters < 1 || b.dim < 1 || b.per_cluster < 0)
            throw ContractError("blobs: clusters and dim must be >= 1");
        Matrix centers = Matrix::Zero(b.clusters, b.dim);
        if (b.dim >= b.clusters) {
            for (int k = 0; k < b.clusters; ++k)
                centers(k, k) = b.spread;
        } else {
            std::mt19937_64 rng(b.seed ^ 0x5bd1e995u);
            std::uniform_real_distribution<double> u(-b.spread, b.spread);
            for (Eigen::Index i = 0; i < centers.size(); ++i)
                centers.data()[i] = u(rng);
        }
        data = make_blobs(std::vector<int>(static_cast<std::size_t>(b.clusters), b.per_cluster),
                          centers, b.sigma, b.seed);
    } else if (spec.kind == "mnist") {
        const auto dir = resolve(spec.path);
        const std::pair<const char*, const char*> names[] = {
            {"mnist10k-images-idx3-ubyte", "mnist10k-labels-idx1-ubyte"},
            {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"},
        };
        bool found = false;
        for (const auto& [img, lab] : names) {
            if (std::filesystem::exists(dir / img)) {
                data = load_idx(dir / img, dir / lab);
                found = true;
                break;
            }
        }
        if (!found)
            throw IoError("no MNIST IDX files under " + dir.string() +
                          " (set SINKCLUST_DATA_DIR or dataset.path)");
        data.name = "mnist";
    } else if (spec.kind == "idx") {
        data = spec.labels.empty() ? load_idx_images(resolve(spec.images))
                                   : load_idx(resolve(spec.images), resolve(spec.labels));
    } else if (spec.kind == "csv") {
        data = load_csv(resolve(spec.path), spec.label_column);
    } else {
        throw ContractError("dataset.kind must be blobs, mnist, idx or csv, not '" + spec.kind +
                            "'");
    }
    data = data.head(spec.limit);
    data.validate();
    return data;
}

TrainState init_state(const TrainConfig& cfg, Eigen::Index input_dim)
{
    std::vector<Eigen::Index> dims{input_dim};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(cfg.latent);
    TrainState state{make_autoencoder(dims, cfg.seeds.weights), ClusterModel{},
                     Adam(cfg.adam()), 0};
    return state;
}

std::vector<double> pretrain(const TrainConfig& cfg, const Dataset& data, TrainState& state)
{
    std::vector<double> losses;
    for (int e = 0; e < cfg.n_pretrain; ++e, ++state.global_epoch) {
        double total = 0.0;
        Eigen::Index seen = 0;
        for (const auto& rows : batch_iter(data.n(), cfg.batch_size, cfg.seeds.shuffle,
                                           state.global_epoch)) {
            const Matrix x = gather_rows(data.features, rows);
            ad::Tape tape;
            auto net = bind(tape, state.params);
            auto loss = reconstruction_loss(net, tape.constant(x));
            auto grads = tape.backward(loss);
            state.optimizer.step(state.params.parameters(), gradients_of(grads, net.parameters()),
                                 state.global_epoch);
            total += loss.scalar();
            seen += x.rows();
        }
        losses.push_back(total / static_cast<double>(seen));
    }
    return losses;
}

ClusterModel init_centers(const TrainConfig& cfg, const Dataset& data,
                          const AutoencoderParams& params, std::vector<std::string>* warnings)
{
    const Matrix z = encode(params, data.features);
    const auto km = kmeans(z, cfg.K, cfg.seeds.kmeans, cfg.kmeans_max_iter, cfg.kmeans_tol);
    ClusterModel model{km.centers, cfg.weights()};
    model.validate();

    std::vector<double> sizes(static_cast<std::size_t>(cfg.K), 0.0);
    for (int a : km.assignments)
        sizes[static_cast<std::size_t>(a)] += 1.0;
    for (int k = 0; k < cfg.K; ++k) {
        const double expected = model.proportions(k) * static_cast<double>(data.n());
        const double got = sizes[static_cast<std::size_t>(k)];
        if (got > 2.0 * expected || got < 0.5 * expected) {
            std::ostringstream msg;
            msg << "initial k-means cluster " << k << " has " << got << " points, proportions ask for "
                << expected;
            if (warnings)
                warnings->push_back(msg.str());
        }
    }
    return model;
}

EpochRecord train_epoch(const TrainConfig& cfg, const Dataset& data, TrainState& state)
{
    const auto loss_cfg = cfg.loss_config();
    const bool moves_centers = cfg.method != Method::ae_kmeans;
    const Vector w = state.model.proportions.size() ? state.model.proportions : cfg.weights();

    EpochRecord rec;
    double recon = 0.0, cluster = 0.0, iters = 0.0;
    Eigen::Index seen = 0;
    const auto batches = batch_iter(data.n(), cfg.batch_size, cfg.seeds.shuffle, state.global_epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const Matrix x = gather_rows(data.features, batches[b]);
        ad::Tape tape;
        auto net = bind(tape, state.params);
        auto centers = moves_centers ? tape.leaf(state.model.centers)
                                     : tape.constant(state.model.centers);
        CombinedLoss loss;
        try {
            loss = combined_loss(net, centers, tape.constant(x), w, loss_cfg);
        } catch (const NumericalInstability& e) {
            throw NumericalInstability("epoch " + std::to_string(state.global_epoch) + " batch " +
                                       std::to_string(b) + ": " + e.what());
        }
        auto grads = tape.backward(loss.total);

        auto slots = state.params.parameters();
        auto vars = net.parameters();
        if (moves_centers) {
            slots.push_back(&state.model.centers);
            vars.push_back(centers);
        }
        auto g = gradients_of(grads, vars);
        bool finite = std::isfinite(loss.total.scalar());
        for (const auto& m : g)
            finite = finite && all_finite(m);
        if (!finite)
            throw NumericalInstability("epoch " + std::to_string(state.global_epoch) + " batch " +
                                       std::to_string(b) +
                                       ": non-finite loss or gradient (try log_domain Sinkhorn or a "
                                       "larger epsilon)");
        state.optimizer.step(slots, g, state.global_epoch);

        recon += loss.reconstruction.scalar();
        seen += x.rows();
        if (cfg.method != Method::ae_kmeans)
            cluster += loss.clustering.scalar();
        if (cfg.method == Method::ot) {
            iters += loss.sinkhorn_iterations;
            rec.batch_violations.push_back(loss.marginal_violation);
            rec.marginal_violation = std::max(rec.marginal_violation, loss.marginal_violation);
        }
    }
    const double nb = static_cast<double>(batches.size());
    rec.recon_loss = recon / static_cast<double>(seen);
    if (cfg.method != Method::ae_kmeans)
        rec.cluster_loss = cluster / nb;
    rec.sinkhorn_iters = iters / nb;
    ++state.global_epoch;
    return rec;
}

std::vector<int> final_clustering(const TrainConfig& cfg, const AutoencoderParams& params,
                                  const ClusterModel& model, const Dataset& data)
{
    const Matrix z = encode(params, data.features);
    if (cfg.method == Method::ae_kmeans)
        return kmeans(z, cfg.K, cfg.seeds.kmeans, cfg.kmeans_max_iter, cfg.kmeans_tol).assignments;
    return assign_nearest(z, model.centers);
}

std::string metrics_csv(const RunMetrics& m)
{
    std::string out = "epoch,recon_loss,cluster_loss,accuracy,sinkhorn_iters,marginal_violation\n";
    for (const auto& r : m.epochs) {
        out += std::to_string(r.epoch) + "," + fmt(r.recon_loss) + "," +
               (r.cluster_loss ? fmt(*r.cluster_loss) : "") + "," +
               (r.accuracy ? fmt(*r.accuracy) : "") + "," + fmt(r.sinkhorn_iters) + "," +
               fmt(r.marginal_violation) + "\n";
    }
    return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
}

json summary_json(const RunMetrics& m, const std::string& error)
{
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json j{{"initial_accuracy", opt(m.initial_accuracy)},
           {"final_accuracy", opt(m.final_accuracy)},
           {"epochs_completed", m.epochs.empty() ? 0 : m.epochs.size() - 1},
           {"pretrain_losses", m.pretrain_losses},
           {"warnings", m.warnings},
           {"elapsed_seconds", m.elapsed_seconds},
           {"config", m.config}};
    if (!error.empty())
        j["error"] = error;
    return j;
}

}  // namespace

RunMetrics run_experiment(const TrainConfig& cfg, const std::filesystem::path& out_dir)
{
    cfg.validate();
    return run_experiment(cfg, load_dataset(cfg.dataset), out_dir);
}

RunMetrics run_experiment(const TrainConfig& cfg, const Dataset& data,
                          const std::filesystem::path& out_dir)
{
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    RunMetrics m;
    m.config = to_json(cfg);
    if (!out_dir.empty())
        std::filesystem::create_directories(out_dir);

    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    auto persist = [&](const std::string& error) {
        if (out_dir.empty())
            return;
        m.elapsed_seconds = elapsed();
        write_text(out_dir / "metrics.csv", metrics_csv(m));
        write_text(out_dir / "summary.json", summary_json(m, error).dump(2) + "\n");
    };

    TrainState state = init_state(cfg, data.d());
    try {
        m.pretrain_losses = pretrain(cfg, data, state);
        state.model = init_centers(cfg, data, state.params, &m.warnings);

        EpochRecord init;
        init.recon_loss = mean_recon(state.params, data.features);
        init.accuracy = accuracy_of(data, final_clustering(cfg, state.params, state.model, data));
        m.initial_accuracy = init.accuracy;
        m.epochs.push_back(init);
        persist("");

        for (int e = 1; e <= cfg.n_epochs; ++e) {
            EpochRecord rec = train_epoch(cfg, data, state);
            rec.epoch = e;
            rec.accuracy = accuracy_of(data, final_clustering(cfg, state.params, state.model, data));
            m.epochs.push_back(std::move(rec));
            persist("");
        }
        m.assignments = final_clustering(cfg, state.params, state.model, data);
        m.final_accuracy = accuracy_of(data, m.assignments);
    } catch (const std::exception& e) {
        persist(e.what());
        throw;
    }
    persist("");
    if (!out_dir.empty() && cfg.save_checkpoint) {
        CheckpointInfo info{cfg.seeds.weights, state.global_epoch, to_string(cfg.method),
                            state.model.centers, state.model.proportions};
        save_checkpoint(out_dir / "checkpoint.bin", state.params, info);
    }
    m.elapsed_seconds = elapsed();
    return m;
}

}  // namespace sinkclust
