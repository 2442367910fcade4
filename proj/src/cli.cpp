#include "sinkclust/cli.hpp"

#include <glob.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "sinkclust/errors.hpp"
#include "sinkclust/evaluation.hpp"
#include "sinkclust/kmeans.hpp"
#include "sinkclust/train.hpp"

namespace sinkclust {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsage = 1;
constexpr int kFailure = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigFlags {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::string> method;
    std::optional<double> epsilon;
    std::optional<int> pretrain;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
        app->add_option("--set", overrides, "KEY=VALUE override, dotted key, JSON value")
            ->take_all();
        app->add_option("--method", method, "ae_kmeans | soft_kmeans | ot")
            ->check(CLI::IsMember({"ae_kmeans", "soft_kmeans", "ot"}));
        app->add_option("--epsilon", epsilon, "entropic regularization");
        app->add_option("--pretrain", pretrain, "pre-training epochs");
        app->add_option("--epochs", epochs, "training epochs");
        app->add_option("--seed", seed, "sets the weights, shuffle and k-means seeds");
    }

    // File, then the convenience flags, then --set.
    json resolve() const
    {
        json j = json::object();
        if (!config.empty()) {
            std::ifstream in(config);
            try {
                j = json::parse(in);
            } catch (const json::exception& e) {
                throw UsageError(config + ": " + e.what());
            }
        }
        if (method)
            j["method"] = *method;
        if (epsilon)
            j["epsilon"] = *epsilon;
        if (pretrain)
            j["n_pretrain"] = *pretrain;
        if (epochs)
            j["n_epochs"] = *epochs;
        if (seed) {
            for (const char* k : {"weights", "shuffle", "kmeans"})
                j["seeds"][k] = *seed;
        }
        for (const auto& o : overrides)
            apply_override(j, o);
        return j;
    }

    TrainConfig build() const
    {
        try {
            return config_from_json(resolve());
        } catch (const ContractError& e) {
            throw UsageError(e.what());
        }
    }
};

std::vector<double> parse_list(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError("not a number in list: '" + item + "'");
        }
    }
    if (out.empty())
        throw UsageError("empty list");
    return out;
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<fs::path> expand(const std::string& pattern)
{
    std::vector<fs::path> out;
    if (fs::is_directory(pattern)) {
        for (const auto& entry : fs::recursive_directory_iterator(pattern))
            if (entry.path().filename() == "summary.json")
                out.push_back(entry.path());
    } else {
        glob_t g{};
        if (::glob(pattern.c_str(), 0, nullptr, &g) == 0)
            for (std::size_t i = 0; i < g.gl_pathc; ++i)
                out.emplace_back(g.gl_pathv[i]);
        globfree(&g);
    }
    std::sort(out.begin(), out.end());
    return out;
}

double final_accuracy(const fs::path& summary)
{
    std::ifstream in(summary);
    if (!in)
        throw IoError("cannot open " + summary.string());
    try {
        const json j = json::parse(in);
        return j.at("final_accuracy").get<double>();
    } catch (const json::exception& e) {
        throw FormatError(summary.string() + ": " + e.what());
    }
}

int cmd_train(const ConfigFlags& flags, const std::string& out_dir, std::ostream& out)
{
    const TrainConfig cfg = flags.build();
    const RunMetrics m = run_experiment(cfg, out_dir);
    for (const auto& w : m.warnings)
        out << "warning: " << w << "\n";
    out << "method " << to_string(cfg.method) << "  epochs " << cfg.n_epochs;
    if (m.final_accuracy)
        out << "  initial accuracy " << *m.initial_accuracy << "  final accuracy "
            << *m.final_accuracy;
    out << "  (" << m.elapsed_seconds << " s)\n";
    out << "wrote " << (fs::path(out_dir) / "metrics.csv").string() << "\n";
    return 0;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& epsilons, int repeats, int jobs,
              const std::string& out_dir, std::ostream& out)
{
    const TrainConfig base = flags.build();
    const auto eps = parse_list(epsilons);
    if (repeats < 1 || jobs < 1)
        throw UsageError("--repeats and --jobs must be >= 1");

    struct Task {
        double epsilon;
        int repeat;
        fs::path dir;
        std::optional<double> accuracy;
        std::string error;
    };
    std::vector<Task> tasks;
    for (std::size_t e = 0; e < eps.size(); ++e)
        for (int r = 0; r < repeats; ++r)
            tasks.push_back({eps[e], r,
                             fs::path(out_dir) / ("eps_" + fmt(eps[e])) / ("rep_" + std::to_string(r)),
                             std::nullopt, ""});

    std::mutex lock;
    std::size_t next = 0;
    auto worker = [&] {
        while (true) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> g(lock);
                if (next >= tasks.size())
                    return;
                i = next++;
            }
            Task& t = tasks[i];
            TrainConfig cfg = base;
            cfg.epsilon = t.epsilon;
            cfg.seeds.weights += static_cast<std::uint64_t>(t.repeat);
            cfg.seeds.shuffle += static_cast<std::uint64_t>(t.repeat);
            cfg.seeds.kmeans += static_cast<std::uint64_t>(t.repeat);
            try {
                t.accuracy = run_experiment(cfg, t.dir).final_accuracy;
            } catch (const std::exception& e) {
                t.error = e.what();
            }
            std::lock_guard<std::mutex> g(lock);
            out << "epsilon " << t.epsilon << " repeat " << t.repeat << ": "
                << (t.error.empty() ? (t.accuracy ? fmt(*t.accuracy) : "no labels") : t.error)
                << "\n";
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < std::min<int>(jobs, static_cast<int>(tasks.size())); ++j)
        pool.emplace_back(worker);
    for (auto& th : pool)
        th.join();

    std::string csv = "epsilon,mean_accuracy,std_accuracy,runs\n";
    bool failed = false;
    for (double e : eps) {
        std::vector<double> acc;
        for (const auto& t : tasks) {
            if (t.epsilon != e)
                continue;
            failed = failed || !t.error.empty();
            if (t.accuracy)
                acc.push_back(*t.accuracy);
        }
        double mean = 0.0, var = 0.0;
        for (double a : acc)
            mean += a;
        mean = acc.empty() ? std::nan("") : mean / static_cast<double>(acc.size());
        for (double a : acc)
            var += (a - mean) * (a - mean);
        const double sd = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
        csv += fmt(e) + "," + fmt(mean) + "," + fmt(sd) + "," + std::to_string(acc.size()) + "\n";
    }
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "sweep.csv", std::ios::binary) << csv;
    out << csv;
    return failed ? kFailure : 0;
}

int cmd_evaluate(const ConfigFlags& flags, const std::string& checkpoint, const std::string& out_dir,
                 std::ostream& out)
{
    const TrainConfig cfg = flags.build();
    auto [params, info] = load_checkpoint(checkpoint);
    const Dataset data = load_dataset(cfg.dataset);
    if (data.d() != params.input_dim())
        throw ShapeError("dataset has d = " + std::to_string(data.d()) + ", checkpoint expects " +
                         std::to_string(params.input_dim()));
    TrainConfig eval = cfg;
    eval.method = parse_method(info.method);
    eval.K = static_cast<int>(info.centers.rows());
    const ClusterModel model{info.centers, info.proportions};
    const auto assigned = final_clustering(eval, params, model, data);
    out << "checkpoint " << checkpoint << "  method " << info.method << "  n " << data.n();
    if (data.labels)
        out << "  accuracy " << fmt(clustering_accuracy(*data.labels, assigned));
    out << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream f(fs::path(out_dir) / "assignments.csv", std::ios::binary);
        f << "index,cluster" << (data.labels ? ",label" : "") << "\n";
        for (std::size_t i = 0; i < assigned.size(); ++i) {
            f << i << "," << assigned[i];
            if (data.labels)
                f << "," << (*data.labels)[i];
            f << "\n";
        }
    }
    return 0;
}

int cmd_compare(const std::vector<std::string>& patterns, std::ostream& out)
{
    std::vector<std::vector<fs::path>> groups;
    if (patterns.size() == 2) {
        for (const auto& p : patterns)
            groups.push_back(expand(p));
    } else {
        // The shell already expanded the globs: split by parent directory.
        std::map<fs::path, std::vector<fs::path>> by_dir;
        std::vector<fs::path> order;
        for (const auto& p : patterns) {
            const auto parent = fs::path(p).parent_path();
            if (!by_dir.count(parent))
                order.push_back(parent);
            by_dir[parent].push_back(p);
        }
        if (order.size() != 2)
            throw UsageError("compare: expected two metric sets, got files from " +
                             std::to_string(order.size()) + " directories");
        for (const auto& d : order)
            groups.push_back(by_dir[d]);
    }
    std::vector<std::vector<double>> acc(2);
    for (int s = 0; s < 2; ++s) {
        if (groups[s].empty())
            throw UsageError("compare: set " + std::to_string(s + 1) + " matched no files");
        for (const auto& p : groups[s])
            acc[s].push_back(final_accuracy(p));
    }
    const auto r = welch_t_test(acc[0], acc[1]);
    out << "n_a " << acc[0].size() << "  n_b " << acc[1].size() << "\n";
    out << "t " << fmt(r.t) << "\ndof " << fmt(r.df) << "\np " << fmt(r.p_value) << "\n";
    return 0;
}

int cmd_gen_blobs(const BlobSpec& spec, const std::string& path, std::ostream& out)
{
    DatasetSpec ds;
    ds.kind = "blobs";
    ds.blobs = spec;
    const Dataset data = load_dataset(ds);
    const fs::path target(path);
    if (target.has_parent_path())
        fs::create_directories(target.parent_path());
    std::ofstream f(target, std::ios::binary);
    if (!f)
        throw IoError("cannot write " + path);
    for (Eigen::Index j = 0; j < data.d(); ++j)
        f << "x" << j << ",";
    f << "label\n";
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        for (Eigen::Index j = 0; j < data.d(); ++j)
            f << fmt(data.features(i, j)) << ",";
        f << (*data.labels)[static_cast<std::size_t>(i)] << "\n";
    }
    out << "wrote " << data.n() << " points in " << data.d() << " dimensions to " << path << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Deep clustering with entropic optimal transport", "sinkclust"};
    app.require_subcommand(1);

    ConfigFlags train_flags, sweep_flags, eval_flags;
    std::string train_out = "runs/train", sweep_out = "runs/sweep", eval_out;
    std::string epsilons = "0.001,0.01,0.1";
    int repeats = 3, jobs = 1, train_jobs = 1;
    std::string checkpoint;
    std::vector<std::string> patterns;
    BlobSpec blobs;
    std::string blobs_out = "blobs.csv";

    auto* train = app.add_subcommand("train", "run one experiment");
    train_flags.attach(train);
    train->add_option("--out", train_out, "output directory");
    train->add_option("--jobs", train_jobs, "accepted for symmetry; a single run uses one thread");

    auto* sweep = app.add_subcommand("sweep-epsilon", "accuracy as a function of epsilon");
    sweep_flags.attach(sweep);
    sweep->add_option("--epsilons", epsilons, "comma-separated list");
    sweep->add_option("--repeats", repeats, "runs per epsilon (seeds offset by repeat)");
    sweep->add_option("--jobs", jobs, "parallel runs");
    sweep->add_option("--out", sweep_out, "output directory");

    auto* evaluate = app.add_subcommand("evaluate", "cluster a dataset with a checkpoint");
    eval_flags.attach(evaluate);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
    evaluate->add_option("--out", eval_out, "directory for assignments.csv");

    auto* compare = app.add_subcommand("compare", "Welch t-test on two sets of summary.json");
    compare->add_option("sets", patterns, "two globs, directories, or shell-expanded files")
        ->required();

    auto* gen = app.add_subcommand("gen-blobs", "write a Gaussian blob dataset as CSV");
    gen->add_option("--clusters", blobs.clusters);
    gen->add_option("--per-cluster", blobs.per_cluster);
    gen->add_option("--dim", blobs.dim);
    gen->add_option("--sigma", blobs.sigma);
    gen->add_option("--spread", blobs.spread);
    gen->add_option("--seed", blobs.seed);
    gen->add_option("--out", blobs_out, "CSV path");

    std::vector<const char*> argv{"sinkclust"};
    for (const auto& a : args)
        argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        if (*train)
            return cmd_train(train_flags, train_out, out);
        if (*sweep)
            return cmd_sweep(sweep_flags, epsilons, repeats, jobs, sweep_out, out);
        if (*evaluate)
            return cmd_evaluate(eval_flags, checkpoint, eval_out, out);
        if (*compare)
            return cmd_compare(patterns, out);
        if (*gen)
            return cmd_gen_blobs(blobs, blobs_out, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kUsage;
}

int run_cli(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace sinkclust
