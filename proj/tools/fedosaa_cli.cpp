// Command-line driver: runs experiments from a JSON config and writes plot-ready traces.

#include "fedosaa/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace fedosaa;

struct RunOptions {
    std::string config;
    std::string problem;
    std::string algo;
    std::string eta;
    std::optional<int> local_epochs;
    std::optional<std::size_t> batch_size;
    std::optional<std::size_t> clients;
    std::optional<std::size_t> rounds;
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    std::optional<double> tolerance;
    std::optional<std::size_t> threads;
    std::string dataset;
    std::string partition;
    std::string out;
    bool quiet = false;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

ExperimentConfig resolve_config(const RunOptions& opt) {
    ExperimentConfig cfg = opt.config.empty() ? ExperimentConfig{} : load_config(opt.config);

    if (!opt.problem.empty()) {
        if (opt.problem == "quadratic") {
            cfg.problem = ProblemKind::Quadratic;
        } else if (opt.problem == "logistic") {
            cfg.problem = ProblemKind::Logistic;
        } else {
            throw ConfigError("unknown problem '" + opt.problem + "' (quadratic, logistic)");
        }
    }
    if (!opt.dataset.empty()) {
        cfg.problem = ProblemKind::Logistic;
        cfg.logistic.dataset = opt.dataset;
    }
    if (!opt.partition.empty()) cfg.partition = parse_partition_scheme(opt.partition);
    if (opt.clients) cfg.clients = *opt.clients;
    if (opt.rounds) cfg.rounds = *opt.rounds;
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.gamma) cfg.gamma = *opt.gamma;
    if (opt.tolerance) cfg.tolerance = *opt.tolerance;

    if (!opt.algo.empty()) {
        const AlgoConfig base = cfg.algorithms.empty() ? AlgoConfig{} : cfg.algorithms.front();
        cfg.algorithms.clear();
        for (const auto& name : split_list(opt.algo)) {
            AlgoConfig a = base;
            a.variant = parse_variant(name);
            cfg.algorithms.push_back(a);
        }
    }
    for (auto& a : cfg.algorithms) {
        if (!opt.eta.empty()) {
            if (opt.eta.find("/beta") != std::string::npos) {
                a.eta_over_beta = parse_eta_over_beta(opt.eta);
            } else {
                a.eta = std::stod(opt.eta);
                a.eta_over_beta = 0.0;
            }
        }
        if (opt.local_epochs) a.local_epochs = *opt.local_epochs;
        if (opt.batch_size) a.batch_size = *opt.batch_size;
        if (opt.threads) a.threads = *opt.threads;
    }
    if (!opt.out.empty()) {
        const std::filesystem::path out(opt.out);
        cfg.csv_out.clear();
        cfg.json_out.clear();
        if (out.extension() == ".csv") {
            cfg.csv_out = opt.out;
        } else if (out.extension() == ".json") {
            cfg.json_out = opt.out;
        } else {
            cfg.csv_out = opt.out + ".csv";
            cfg.json_out = opt.out + ".json";
        }
    }
    cfg.validate();
    return cfg;
}

void print_summary(const std::vector<Trace>& traces, const ExperimentConfig& cfg, const Problem& problem) {
    std::printf("problem: %s, d = %zu, K = %zu, f* = %.12g\n",
                cfg.problem == ProblemKind::Quadratic ? "quadratic" : "logistic", problem.model->dim(),
                problem.model->num_clients(), problem.f_star);
    std::printf("%-18s %8s %14s %10s %12s  %s\n", "algorithm", "rounds", "rel_err", "comm", "floats", "status");
    for (const auto& tr : traces) {
        const TraceRecord& last = tr.records.back();
        std::string status = tr.converged ? "converged" : "max rounds";
        if (tr.diverged) status = "failed in round " + std::to_string(tr.failed_round) + ": " + tr.failure;
        std::printf("%-18s %8zu %14.6e %10llu %12llu  %s\n", tr.algo.c_str(), last.t, last.rel_err,
                    static_cast<unsigned long long>(last.comm_rounds),
                    static_cast<unsigned long long>(last.comm_floats), status.c_str());
    }
}

int run(const RunOptions& opt) {
    const ExperimentConfig cfg = resolve_config(opt);
    const Problem problem = build_problem(cfg);
    const std::vector<Trace> traces = run_experiment(cfg, problem);
    if (!opt.quiet) print_summary(traces, cfg, problem);
    if (!cfg.csv_out.empty()) emit_traces(traces, TraceFormat::Csv, std::filesystem::path(cfg.csv_out), &cfg);
    if (!cfg.json_out.empty()) emit_traces(traces, TraceFormat::Json, std::filesystem::path(cfg.json_out), &cfg);
    if (cfg.csv_out.empty() && cfg.json_out.empty() && opt.quiet) emit_traces(traces, TraceFormat::Csv, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated optimization simulator with one-step Anderson acceleration"};
    app.require_subcommand(1);

    RunOptions opt;
    CLI::App* run_cmd = app.add_subcommand("run", "Run the algorithms of an experiment and write traces");
    run_cmd->add_option("-c,--config", opt.config, "Experiment config (JSON) or an emitted JSON trace");
    run_cmd->add_option("--problem", opt.problem, "quadratic or logistic");
    run_cmd->add_option("--algo", opt.algo, "Comma-separated algorithm names (e.g. FedOSAA-SVRG,FedSVRG)");
    run_cmd->add_option("--eta", opt.eta, "Local step size, a number or '<c>/beta'");
    run_cmd->add_option("--local-epochs", opt.local_epochs, "Local steps L");
    run_cmd->add_option("--batch-size", opt.batch_size, "Mini-batch size per client (0 = full batch)");
    run_cmd->add_option("--clients", opt.clients, "Number of clients K");
    run_cmd->add_option("--rounds", opt.rounds, "Maximum aggregation rounds T");
    run_cmd->add_option("--seed", opt.seed, "Global seed");
    run_cmd->add_option("--gamma", opt.gamma, "l2 regularization of the logistic loss");
    run_cmd->add_option("--tolerance", opt.tolerance, "Stop once the relative error drops below this");
    run_cmd->add_option("--threads", opt.threads, "Worker threads for client updates");
    run_cmd->add_option("--dataset", opt.dataset, "LIBSVM file (selects the logistic problem)");
    run_cmd->add_option("--partition", opt.partition, "iid, imbalance or label-skew")
        ->check(CLI::IsMember({"iid", "imbalance", "label-skew"}));
    run_cmd->add_option("-o,--out", opt.out, "Output path: .csv, .json, or a stem for both");
    run_cmd->add_flag("-q,--quiet", opt.quiet, "No summary table (CSV goes to stdout when no --out)");

    std::size_t gen_examples = 2000;
    std::size_t gen_dim = 20;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    CLI::App* gen_cmd = app.add_subcommand("generate-logistic", "Write a synthetic LIBSVM classification dataset");
    gen_cmd->add_option("-n,--examples", gen_examples, "Number of examples")->capture_default_str();
    gen_cmd->add_option("-d,--dim", gen_dim, "Number of features")->capture_default_str();
    gen_cmd->add_option("--seed", gen_seed, "Seed")->capture_default_str();
    gen_cmd->add_option("-o,--out", gen_out, "Output file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) return run(opt);
        if (*gen_cmd) {
            const Dataset data = generate_logistic_dataset(gen_examples, gen_dim, gen_seed);
            std::ofstream out(gen_out);
            if (!out) throw Error("cannot open " + gen_out);
            write_libsvm(out, data);
            std::printf("wrote %zu examples with %zu features to %s\n", data.size(), data.dim(), gen_out.c_str());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
