#include "fedosaa/harness.hpp"

#include "fedosaa/random.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace fedosaa {

using nlohmann::json;

namespace {

// Stream ids for mix_seed; each random decision of an experiment has its own stream.
constexpr std::uint64_t kQuadraticStream = 10;
constexpr std::uint64_t kSyntheticDataStream = 11;
constexpr std::uint64_t kSubsampleStream = 12;
constexpr std::uint64_t kPartitionStream = 13;
constexpr std::uint64_t kClientStream = 20;

constexpr std::string_view kCsvHeader =
    "algo,t,rel_err,loss_gap,grad_norm,comm_rounds,comm_floats,wall_s,theta_med,delta_med";

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, std::string_view where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
    for (const auto& item : j.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw ConfigError("unknown key '" + item.key() + "' in " + std::string(where));
        }
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double parse_double(std::string_view s, std::size_t line) {
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(line, "bad number '" + std::string(s) + "'");
    }
    return x;
}

template <typename Int>
Int parse_int(std::string_view s, std::size_t line) {
    Int x = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError(line, "bad integer '" + std::string(s) + "'");
    }
    return x;
}

}  // namespace

double parse_eta_over_beta(std::string_view text) {
    constexpr std::string_view suffix = "/beta";
    if (text.size() <= suffix.size() || text.substr(text.size() - suffix.size()) != suffix) {
        throw ConfigError("step size '" + std::string(text) + "' must be a number or '<c>/beta'");
    }
    const std::string_view head = text.substr(0, text.size() - suffix.size());
    double c = 0.0;
    const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), c);
    if (ec != std::errc() || ptr != head.data() + head.size() || !(c > 0.0)) {
        throw ConfigError("bad step size '" + std::string(text) + "'");
    }
    return c;
}

namespace {

json nullable(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

struct Summary {
    double min = std::numeric_limits<double>::quiet_NaN();
    double med = std::numeric_limits<double>::quiet_NaN();
    double max = std::numeric_limits<double>::quiet_NaN();
};

Summary summarize(std::span<const double> values) {
    Summary s;
    s.med = finite_median(values);
    for (double v : values) {
        if (!std::isfinite(v)) continue;
        s.min = std::isnan(s.min) ? v : std::min(s.min, v);
        s.max = std::isnan(s.max) ? v : std::max(s.max, v);
    }
    return s;
}

}  // namespace

std::string_view to_string(PartitionScheme s) {
    switch (s) {
        case PartitionScheme::Iid:
            return "iid";
        case PartitionScheme::Imbalance:
            return "imbalance";
        case PartitionScheme::LabelSkew:
            return "label-skew";
    }
    return "iid";
}

PartitionScheme parse_partition_scheme(std::string_view name) {
    if (name == "iid") return PartitionScheme::Iid;
    if (name == "imbalance" || name == "imbalanced") return PartitionScheme::Imbalance;
    if (name == "label-skew" || name == "label_skew") return PartitionScheme::LabelSkew;
    throw ConfigError("unknown partition scheme '" + std::string(name) + "' (iid, imbalance, label-skew)");
}

void ExperimentConfig::validate() const {
    if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
    if (clients == 0) throw ConfigError("clients must be >= 1");
    if (algorithms.empty()) throw ConfigError("no algorithms configured");
    for (const auto& a : algorithms) a.validate();
    if (problem == ProblemKind::Quadratic) {
        if (quadratic.dim == 0) throw ConfigError("quadratic dim must be >= 1");
        if (!(quadratic.kappa >= 1.0)) throw ConfigError("quadratic kappa must be >= 1");
        if (partition != PartitionScheme::Iid) throw ConfigError("quadratic problems only support the iid layout");
    } else {
        if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
        if (!logistic.dataset.empty() && !std::filesystem::exists(logistic.dataset)) {
            throw ConfigError("dataset file not found: " + logistic.dataset);
        }
        for (const auto& [raw, mapped] : logistic.label_map) {
            if (mapped != 1 && mapped != -1) throw ConfigError("label_map targets must be -1 or +1");
        }
    }
}

json algo_to_json(const AlgoConfig& c) {
    return json{
        {"name", std::string(to_string(c.variant))},
        {"eta", c.eta_over_beta > 0.0 ? json(format_double(c.eta_over_beta) + "/beta") : json(c.eta)},
        {"local_epochs", c.local_epochs},
        {"batch_size", c.batch_size},
        {"krylov_iters", c.krylov_iters},
        {"krylov_tol", c.krylov_tol},
        {"line_search", c.line_search},
        {"minibatch_control_variate", c.minibatch_control_variate},
        {"scaffold_anchor", c.scaffold_anchor == ScaffoldAnchor::LocalResidual ? "residual" : "server"},
        {"diagnostics", c.diagnostics},
        {"threads", c.threads},
        {"aa",
         {{"damping", c.aa.damping},
          {"regularization", c.aa.regularization},
          {"filter", c.aa.filter},
          {"drop_tol", c.aa.drop_tol},
          {"carry_over", c.aa.carry_over},
          {"rcond", c.aa.rcond}}},
    };
}

AlgoConfig algo_from_json(const json& j) {
    AlgoConfig c;
    if (j.is_string()) {
        c.variant = parse_variant(j.get<std::string>());
        return c;
    }
    reject_unknown(j,
                   {"name", "eta", "local_epochs", "batch_size", "krylov_iters", "krylov_tol", "line_search",
                    "minibatch_control_variate", "scaffold_anchor", "diagnostics", "threads", "aa"},
                   "algorithm");
    if (!j.contains("name")) throw ConfigError("algorithm entry needs a 'name'");
    c.variant = parse_variant(get_or<std::string>(j, "name", ""));
    if (j.contains("eta") && j.at("eta").is_string()) {
        c.eta_over_beta = parse_eta_over_beta(j.at("eta").get<std::string>());
    } else {
        c.eta = get_or(j, "eta", c.eta);
    }
    c.local_epochs = get_or(j, "local_epochs", c.local_epochs);
    c.batch_size = get_or(j, "batch_size", c.batch_size);
    c.krylov_iters = get_or(j, "krylov_iters", c.krylov_iters);
    c.krylov_tol = get_or(j, "krylov_tol", c.krylov_tol);
    c.line_search = get_or(j, "line_search", c.line_search);
    c.minibatch_control_variate = get_or(j, "minibatch_control_variate", c.minibatch_control_variate);
    if (j.contains("scaffold_anchor")) {
        const std::string anchor = get_or<std::string>(j, "scaffold_anchor", "server");
        if (anchor == "server") {
            c.scaffold_anchor = ScaffoldAnchor::ServerVariate;
        } else if (anchor == "residual") {
            c.scaffold_anchor = ScaffoldAnchor::LocalResidual;
        } else {
            throw ConfigError("scaffold_anchor must be 'server' or 'residual'");
        }
    }
    c.diagnostics = get_or(j, "diagnostics", c.diagnostics);
    c.threads = get_or(j, "threads", c.threads);
    if (j.contains("aa")) {
        const json& a = j.at("aa");
        reject_unknown(a, {"damping", "regularization", "filter", "drop_tol", "carry_over", "rcond"}, "aa");
        c.aa.damping = get_or(a, "damping", c.aa.damping);
        c.aa.regularization = get_or(a, "regularization", c.aa.regularization);
        c.aa.filter = get_or(a, "filter", c.aa.filter);
        c.aa.drop_tol = get_or(a, "drop_tol", c.aa.drop_tol);
        c.aa.carry_over = get_or(a, "carry_over", c.aa.carry_over);
        c.aa.rcond = get_or(a, "rcond", c.aa.rcond);
    }
    c.validate();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json problem;
    if (c.problem == ProblemKind::Quadratic) {
        problem = {{"type", "quadratic"},
                   {"dim", c.quadratic.dim},
                   {"kappa", c.quadratic.kappa},
                   {"heterogeneity", c.quadratic.heterogeneity}};
    } else {
        problem = {{"type", "logistic"},
                   {"dataset", c.logistic.dataset},
                   {"synthetic_examples", c.logistic.synthetic_examples},
                   {"synthetic_dim", c.logistic.synthetic_dim}};
        if (c.logistic.subsample) problem["subsample"] = *c.logistic.subsample;
        if (!c.logistic.label_map.empty()) {
            json m = json::object();
            for (const auto& [raw, mapped] : c.logistic.label_map) m[format_double(raw)] = mapped;
            problem["label_map"] = m;
        }
    }
    json algos = json::array();
    for (const auto& a : c.algorithms) algos.push_back(algo_to_json(a));
    return json{
        {"problem", problem},
        {"gamma", c.gamma},
        {"partition", {{"scheme", std::string(to_string(c.partition))}, {"clients", c.clients}, {"proportions", c.proportions}}},
        {"algorithms", algos},
        {"rounds", c.rounds},
        {"tolerance", c.tolerance},
        {"seed", c.seed},
        {"output", {{"csv", c.csv_out}, {"json", c.json_out}}},
    };
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    reject_unknown(j, {"problem", "gamma", "partition", "algorithms", "rounds", "tolerance", "seed", "output"}, "config");
    ExperimentConfig c;
    if (j.contains("problem")) {
        const json& p = j.at("problem");
        const std::string type = get_or<std::string>(p, "type", "quadratic");
        if (type == "quadratic") {
            reject_unknown(p, {"type", "dim", "kappa", "heterogeneity"}, "problem");
            c.problem = ProblemKind::Quadratic;
            c.quadratic.dim = get_or(p, "dim", c.quadratic.dim);
            c.quadratic.kappa = get_or(p, "kappa", c.quadratic.kappa);
            c.quadratic.heterogeneity = get_or(p, "heterogeneity", c.quadratic.heterogeneity);
        } else if (type == "logistic") {
            reject_unknown(p, {"type", "dataset", "label_map", "subsample", "synthetic_examples", "synthetic_dim"},
                           "problem");
            c.problem = ProblemKind::Logistic;
            c.logistic.dataset = get_or<std::string>(p, "dataset", "");
            if (!c.logistic.dataset.empty() && !base_dir.empty()) {
                const std::filesystem::path path(c.logistic.dataset);
                if (path.is_relative()) c.logistic.dataset = (base_dir / path).lexically_normal().string();
            }
            if (p.contains("subsample") && !p.at("subsample").is_null()) {
                c.logistic.subsample = get_or<std::size_t>(p, "subsample", 0);
            }
            c.logistic.synthetic_examples = get_or(p, "synthetic_examples", c.logistic.synthetic_examples);
            c.logistic.synthetic_dim = get_or(p, "synthetic_dim", c.logistic.synthetic_dim);
            if (p.contains("label_map")) {
                for (const auto& item : p.at("label_map").items()) {
                    c.logistic.label_map[parse_double(item.key(), 0)] = item.value().get<int>();
                }
            }
        } else {
            throw ConfigError("unknown problem type '" + type + "' (quadratic, logistic)");
        }
    }
    c.gamma = get_or(j, "gamma", c.gamma);
    if (j.contains("partition")) {
        const json& p = j.at("partition");
        reject_unknown(p, {"scheme", "clients", "proportions"}, "partition");
        c.partition = parse_partition_scheme(get_or<std::string>(p, "scheme", "iid"));
        c.clients = get_or(p, "clients", c.clients);
        c.proportions = get_or(p, "proportions", c.proportions);
    }
    if (j.contains("algorithms")) {
        c.algorithms.clear();
        for (const auto& a : j.at("algorithms")) c.algorithms.push_back(algo_from_json(a));
    }
    c.rounds = get_or(j, "rounds", c.rounds);
    c.tolerance = get_or(j, "tolerance", c.tolerance);
    c.seed = get_or(j, "seed", c.seed);
    if (j.contains("output")) {
        const json& o = j.at("output");
        reject_unknown(o, {"csv", "json"}, "output");
        c.csv_out = get_or<std::string>(o, "csv", "");
        c.json_out = get_or<std::string>(o, "json", "");
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    if (j.is_object() && j.contains("config") && j.contains("traces")) j = j.at("config");
    return config_from_json(j, path.parent_path());
}

ReferenceSolution reference_minimizer(const LossModel& model, double tol) {
    ReferenceSolution out;
    if (const auto* q = dynamic_cast<const QuadraticModel*>(&model)) {
        out.w = q->minimizer();
        out.f = model.global_value(out.w);
        return out;
    }
    if (const auto* lr = dynamic_cast<const LogisticModel*>(&model); lr && !(lr->gamma() > 0.0)) {
        throw ConfigError("reference minimizer needs gamma > 0");
    }
    const Vector zero = Vector::Zero(static_cast<Eigen::Index>(model.dim()));
    if (!(tol > 0.0)) tol = 1e-12 * std::max(1.0, model.global_gradient(zero).norm());
    NewtonProblem problem{
        [&](const Vector& w) { return model.global_value(w); },
        [&](const Vector& w) { return model.global_gradient(w); },
        [&](const Vector& w) { return model.global_hessian(w); },
    };
    out.w = damped_newton(problem, zero, tol, 500).x;
    out.f = model.global_value(out.w);
    return out;
}

Problem build_problem(const ExperimentConfig& config) {
    config.validate();
    Problem p;
    if (config.problem == ProblemKind::Quadratic) {
        QuadraticFixture fx = generate_quadratic(config.quadratic.dim, config.clients, config.quadratic.kappa,
                                                 config.quadratic.heterogeneity, mix_seed(config.seed, kQuadraticStream));
        p.model = fx.model;
        std::vector<std::vector<std::size_t>> groups(config.clients);
        for (std::size_t k = 0; k < config.clients; ++k) groups[k] = {k};
        p.partition = Partition(std::move(groups));
    } else {
        auto data = std::make_shared<Dataset>();
        if (config.logistic.dataset.empty()) {
            *data = generate_logistic_dataset(config.logistic.synthetic_examples, config.logistic.synthetic_dim,
                                              mix_seed(config.seed, kSyntheticDataStream));
        } else {
            LabelMap labels = LabelMap::binary_default();
            if (!config.logistic.label_map.empty()) labels = LabelMap::explicit_map(config.logistic.label_map);
            *data = load_libsvm(config.logistic.dataset, labels);
        }
        if (config.logistic.subsample && *config.logistic.subsample < data->size()) {
            *data = subsample(*data, *config.logistic.subsample, mix_seed(config.seed, kSubsampleStream));
        }
        const std::uint64_t pseed = mix_seed(config.seed, kPartitionStream);
        switch (config.partition) {
            case PartitionScheme::Iid:
                p.partition = partition_iid(*data, config.clients, pseed);
                break;
            case PartitionScheme::Imbalance: {
                const std::vector<double> props =
                    config.proportions.empty() ? default_imbalance_proportions(config.clients) : config.proportions;
                if (props.size() != config.clients) {
                    throw ConfigError("imbalance proportions list must have one entry per client");
                }
                p.partition = partition_imbalanced(*data, props, pseed);
                break;
            }
            case PartitionScheme::LabelSkew:
                p.partition = partition_label_skew(*data, config.clients, pseed);
                break;
        }
        p.model = std::make_shared<LogisticModel>(data, p.partition, config.gamma);
    }
    const ReferenceSolution ref = reference_minimizer(*p.model);
    p.w_star = ref.w;
    p.f_star = ref.f;
    return p;
}

std::optional<std::size_t> Trace::rounds_to(double tol) const {
    for (const auto& r : records) {
        if (r.rel_err <= tol) return r.t;
    }
    return std::nullopt;
}

Trace run_algorithm(const Problem& problem, const AlgoConfig& config, std::size_t rounds, double tolerance,
                    std::uint64_t seed) {
    const LossModel& model = *problem.model;
    const AlgoConfig cfg = config.resolved(model);
    cfg.validate();
    const double scale = problem.w_star.norm() > 0.0 ? problem.w_star.norm() : 1.0;

    Trace trace;
    trace.algo = std::string(to_string(cfg.variant));
    trace.config = cfg;
    RoundState state = initial_state(model, Vector::Zero(static_cast<Eigen::Index>(model.dim())),
                                     mix_seed(seed, kClientStream));

    auto record = [&](double wall, const RoundReport* report) {
        TraceRecord r;
        r.t = state.t;
        r.rel_err = (state.w - problem.w_star).norm() / scale;
        r.loss_gap = model.global_value(state.w) - problem.f_star;
        r.grad_norm = model.global_gradient(state.w).norm();
        r.comm_rounds = state.comm.rounds;
        r.comm_floats = state.comm.floats_down;
        r.wall_s = wall;
        if (report) {
            const Summary th = summarize(report->theta);
            const Summary de = summarize(report->delta);
            r.theta_min = th.min;
            r.theta_med = th.med;
            r.theta_max = th.max;
            r.delta_min = de.min;
            r.delta_med = de.med;
            r.delta_max = de.max;
        }
        trace.records.push_back(r);
        return r.rel_err;
    };

    double wall = 0.0;
    if (record(wall, nullptr) <= tolerance) {
        trace.converged = true;
        return trace;
    }
    for (std::size_t t = 1; t <= rounds; ++t) {
        const auto start = std::chrono::steady_clock::now();
        RoundReport report;
        try {
            report = run_round(state, cfg, model);
        } catch (const Error& e) {
            trace.diverged = true;
            trace.failed_round = t;
            trace.failure = e.what();
            return trace;
        }
        wall += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (record(wall, &report) <= tolerance) {
            trace.converged = true;
            break;
        }
    }
    return trace;
}

std::vector<Trace> run_experiment(const ExperimentConfig& config, const Problem& problem) {
    std::vector<Trace> traces;
    traces.reserve(config.algorithms.size());
    for (const auto& algo : config.algorithms) {
        traces.push_back(run_algorithm(problem, algo, config.rounds, config.tolerance, config.seed));
    }
    return traces;
}

std::vector<Trace> run_experiment(const ExperimentConfig& config) { return run_experiment(config, build_problem(config)); }

void emit_traces(std::span<const Trace> traces, TraceFormat format, std::ostream& out, const ExperimentConfig* config) {
    if (traces.empty()) throw ConfigError("emit_traces: no traces");
    if (format == TraceFormat::Csv) {
        out << kCsvHeader << '\n';
        for (const auto& tr : traces) {
            for (const auto& r : tr.records) {
                out << tr.algo << ',' << r.t << ',' << format_double(r.rel_err) << ',' << format_double(r.loss_gap) << ','
                    << format_double(r.grad_norm) << ',' << r.comm_rounds << ',' << r.comm_floats << ','
                    << format_double(r.wall_s) << ',' << format_double(r.theta_med) << ','
                    << format_double(r.delta_med) << '\n';
            }
        }
    } else {
        json doc;
        if (config) doc["config"] = config_to_json(*config);
        json list = json::array();
        for (const auto& tr : traces) {
            json records = json::array();
            for (const auto& r : tr.records) {
                records.push_back({{"t", r.t},
                                   {"rel_err", nullable(r.rel_err)},
                                   {"loss_gap", nullable(r.loss_gap)},
                                   {"grad_norm", nullable(r.grad_norm)},
                                   {"comm_rounds", r.comm_rounds},
                                   {"comm_floats", r.comm_floats},
                                   {"wall_s", r.wall_s},
                                   {"theta", {{"min", nullable(r.theta_min)}, {"median", nullable(r.theta_med)}, {"max", nullable(r.theta_max)}}},
                                   {"delta", {{"min", nullable(r.delta_min)}, {"median", nullable(r.delta_med)}, {"max", nullable(r.delta_max)}}}});
            }
            json entry{{"algo", tr.algo},
                       {"config", algo_to_json(tr.config)},
                       {"converged", tr.converged},
                       {"diverged", tr.diverged},
                       {"records", records}};
            if (tr.diverged) {
                entry["failed_round"] = tr.failed_round;
                entry["failure"] = tr.failure;
            }
            list.push_back(entry);
        }
        doc["traces"] = list;
        out << doc.dump(2) << '\n';
    }
    if (!out) throw Error("emit_traces: write failed");
}

void emit_traces(std::span<const Trace> traces, TraceFormat format, const std::filesystem::path& path,
                 const ExperimentConfig* config) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    emit_traces(traces, format, out, config);
}

std::vector<Trace> parse_trace_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(1, "missing trace CSV header");
    std::vector<Trace> traces;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != 10) throw ParseError(line_no, "expected 10 fields, got " + std::to_string(fields.size()));
        if (traces.empty() || traces.back().algo != fields[0]) {
            traces.emplace_back();
            traces.back().algo = std::string(fields[0]);
        }
        TraceRecord r;
        r.t = parse_int<std::size_t>(fields[1], line_no);
        r.rel_err = parse_double(fields[2], line_no);
        r.loss_gap = parse_double(fields[3], line_no);
        r.grad_norm = parse_double(fields[4], line_no);
        r.comm_rounds = parse_int<std::uint64_t>(fields[5], line_no);
        r.comm_floats = parse_int<std::uint64_t>(fields[6], line_no);
        r.wall_s = parse_double(fields[7], line_no);
        r.theta_med = parse_double(fields[8], line_no);
        r.delta_med = parse_double(fields[9], line_no);
        traces.back().records.push_back(r);
    }
    return traces;
}

double finite_median(std::span<const double> values) {
    std::vector<double> v;
    v.reserve(values.size());
    for (double x : values) {
        if (std::isfinite(x)) v.push_back(x);
    }
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace fedosaa
