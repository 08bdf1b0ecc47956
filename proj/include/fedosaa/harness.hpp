#pragma once

#include "fedosaa/algorithms.hpp"
#include "fedosaa/dataset.hpp"
#include "fedosaa/objective.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedosaa {

enum class ProblemKind { Quadratic, Logistic };
enum class PartitionScheme { Iid, Imbalance, LabelSkew };

std::string_view to_string(PartitionScheme s);
PartitionScheme parse_partition_scheme(std::string_view name);

struct QuadraticSpec {
    std::size_t dim = 50;
    double kappa = 100.0;
    double heterogeneity = 0.1;
};

struct LogisticSpec {
    /// LIBSVM file; empty selects the synthetic generator.
    std::string dataset;
    /// Raw label -> {-1, +1}; empty means "+1 is positive, everything else negative".
    std::map<double, int> label_map;
    std::optional<std::size_t> subsample;
    std::size_t synthetic_examples = 2000;
    std::size_t synthetic_dim = 20;
};

struct ExperimentConfig {
    ProblemKind problem = ProblemKind::Quadratic;
    QuadraticSpec quadratic;
    LogisticSpec logistic;
    double gamma = 1e-3;
    PartitionScheme partition = PartitionScheme::Iid;
    std::size_t clients = 10;
    /// Imbalance proportions; empty selects the default heavy-tailed split.
    std::vector<double> proportions;
    std::vector<AlgoConfig> algorithms{AlgoConfig{}};
    std::size_t rounds = 100;
    double tolerance = 1e-8;
    std::uint64_t seed = 0;
    std::string csv_out;
    std::string json_out;

    /// Throws ConfigError; checks that a referenced dataset file exists.
    void validate() const;
};

/// Relative dataset paths are resolved against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& config);
nlohmann::json algo_to_json(const AlgoConfig& cfg);
AlgoConfig algo_from_json(const nlohmann::json& j);

/// "0.5/beta" -> 0.5
double parse_eta_over_beta(std::string_view text);

/// Reads a config file, or the "config" member of an emitted JSON trace.
ExperimentConfig load_config(const std::filesystem::path& path);

struct Problem {
    std::shared_ptr<const LossModel> model;
    Partition partition;
    Vector w_star;
    double f_star = 0.0;
};

struct ReferenceSolution {
    Vector w;
    double f = 0.0;
};

/// Quadratic: direct solve. Logistic: centralized damped Newton from 0 until
/// ||grad f|| <= tol; tol <= 0 selects 1e-12 * max(1, ||grad f(0)||).
ReferenceSolution reference_minimizer(const LossModel& model, double tol = 0.0);

/// Data, partition, model and reference solution shared by every algorithm of an experiment.
Problem build_problem(const ExperimentConfig& config);

struct TraceRecord {
    std::size_t t = 0;
    double rel_err = 0.0;
    double loss_gap = 0.0;
    double grad_norm = 0.0;
    std::uint64_t comm_rounds = 0;
    std::uint64_t comm_floats = 0;
    double wall_s = 0.0;
    double theta_min = std::numeric_limits<double>::quiet_NaN();
    double theta_med = std::numeric_limits<double>::quiet_NaN();
    double theta_max = std::numeric_limits<double>::quiet_NaN();
    double delta_min = std::numeric_limits<double>::quiet_NaN();
    double delta_med = std::numeric_limits<double>::quiet_NaN();
    double delta_max = std::numeric_limits<double>::quiet_NaN();
};

struct Trace {
    std::string algo;
    AlgoConfig config;
    std::vector<TraceRecord> records;
    bool converged = false;
    bool diverged = false;
    /// Round in which the run failed, and why.
    std::size_t failed_round = 0;
    std::string failure;

    /// First round with rel_err <= tol, if any.
    std::optional<std::size_t> rounds_to(double tol) const;
};

/// Runs one algorithm from w^0 = 0 for at most `rounds` rounds, stopping once
/// rel_err <= tolerance. Divergence and solver failures end the trace early.
Trace run_algorithm(const Problem& problem, const AlgoConfig& cfg, std::size_t rounds, double tolerance,
                    std::uint64_t seed);

std::vector<Trace> run_experiment(const ExperimentConfig& config, const Problem& problem);
std::vector<Trace> run_experiment(const ExperimentConfig& config);

enum class TraceFormat { Csv, Json };

/// CSV: one row per (algo, t), 17 significant digits, "nan" where undefined.
/// JSON: records grouped by algorithm plus the resolved config. Empty input throws.
void emit_traces(std::span<const Trace> traces, TraceFormat format, std::ostream& out,
                 const ExperimentConfig* config = nullptr);
void emit_traces(std::span<const Trace> traces, TraceFormat format, const std::filesystem::path& path,
                 const ExperimentConfig* config = nullptr);

/// Inverse of the CSV format; only the CSV columns are restored.
std::vector<Trace> parse_trace_csv(std::istream& in);

/// Median of the finite entries; NaN when there are none.
double finite_median(std::span<const double> values);

}  // namespace fedosaa
