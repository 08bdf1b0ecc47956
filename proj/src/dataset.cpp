#include "fedosaa/dataset.hpp"

#include "fedosaa/errors.hpp"
#include "fedosaa/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string_view>

namespace fedosaa {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

std::vector<std::string_view> split_tokens(std::string_view line) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && is_space(line[i])) ++i;
        const std::size_t start = i;
        while (i < line.size() && !is_space(line[i])) ++i;
        if (i > start) tokens.push_back(line.substr(start, i - start));
    }
    return tokens;
}

std::optional<double> to_double(std::string_view text) {
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    if (text.empty()) return std::nullopt;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

std::optional<std::size_t> to_index(std::string_view text) {
    if (text.empty()) return std::nullopt;
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
    return value;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    return order;
}

// Floors of quota_k = weight_k * total, with leftover units handed out by
// largest fractional part (ties go to the lower index).
std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t total) {
    std::vector<std::size_t> sizes(weights.size());
    std::vector<double> fractions(weights.size());
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double quota = weights[k] * static_cast<double>(total);
        const double floor_quota = std::floor(quota);
        sizes[k] = static_cast<std::size_t>(floor_quota);
        fractions[k] = quota - floor_quota;
        assigned += sizes[k];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fractions[a] > fractions[b]; });
    for (std::size_t i = 0; assigned < total && i < order.size(); ++i, ++assigned) {
        ++sizes[order[i]];
    }
    return sizes;
}

}  // namespace

Dataset::Dataset(std::vector<Example> examples, std::size_t dim) : examples_(std::move(examples)), dim_(dim) {
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        const Example& ex = examples_[i];
        if (ex.label != 1 && ex.label != -1) {
            throw ConfigError("example " + std::to_string(i) + ": label must be -1 or +1");
        }
        std::size_t previous = 0;
        for (const Feature& f : ex.features) {
            if (f.index == 0 || f.index <= previous) {
                throw ConfigError("example " + std::to_string(i) + ": feature indices must be strictly increasing and 1-based");
            }
            if (f.index > dim_) {
                throw ConfigError("example " + std::to_string(i) + ": feature index exceeds dimension");
            }
            previous = f.index;
        }
    }
}

LabelMap LabelMap::binary_default() {
    LabelMap map;
    map.set(1.0, 1).set_fallback(-1);
    return map;
}

LabelMap LabelMap::explicit_map(const std::map<double, int>& entries) {
    LabelMap map;
    for (const auto& [raw, mapped] : entries) map.set(raw, mapped);
    return map;
}

LabelMap& LabelMap::set(double raw, int mapped) {
    if (mapped != 1 && mapped != -1) throw ConfigError("label map targets must be -1 or +1");
    entries_[raw] = mapped;
    return *this;
}

LabelMap& LabelMap::set_fallback(std::optional<int> mapped) {
    if (mapped && *mapped != 1 && *mapped != -1) throw ConfigError("label map fallback must be -1 or +1");
    fallback_ = mapped;
    return *this;
}

std::optional<int> LabelMap::operator()(double raw) const {
    if (const auto it = entries_.find(raw); it != entries_.end()) return it->second;
    return fallback_;
}

Dataset parse_libsvm(std::istream& in, const LabelMap& labels, std::optional<std::size_t> dim_override) {
    std::vector<Example> examples;
    std::size_t max_index = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = split_tokens(line);
        if (tokens.empty()) continue;

        const auto raw_label = to_double(tokens[0]);
        if (!raw_label) throw ParseError(line_no, "malformed label '" + std::string(tokens[0]) + "'");
        const auto label = labels(*raw_label);
        if (!label) throw ParseError(line_no, "unmapped label '" + std::string(tokens[0]) + "'");

        Example ex;
        ex.label = *label;
        ex.features.reserve(tokens.size() - 1);
        std::size_t previous = 0;
        for (std::size_t t = 1; t < tokens.size(); ++t) {
            const std::string_view tok = tokens[t];
            const auto colon = tok.find(':');
            if (colon == std::string_view::npos) {
                throw ParseError(line_no, "malformed feature token '" + std::string(tok) + "'");
            }
            const auto index = to_index(tok.substr(0, colon));
            const auto value = to_double(tok.substr(colon + 1));
            if (!index || *index == 0 || !value) {
                throw ParseError(line_no, "malformed feature token '" + std::string(tok) + "'");
            }
            if (*index <= previous) {
                throw ParseError(line_no, "feature index " + std::to_string(*index) + " is not increasing");
            }
            previous = *index;
            ex.features.push_back({*index, *value});
        }
        max_index = std::max(max_index, previous);
        examples.push_back(std::move(ex));
    }
    if (in.bad()) throw Error("I/O error while reading LIBSVM data");

    std::size_t dim = max_index;
    if (dim_override) {
        if (*dim_override < max_index) {
            throw ConfigError("dimension override " + std::to_string(*dim_override) +
                              " is below the largest feature index " + std::to_string(max_index));
        }
        dim = *dim_override;
    }
    return Dataset(std::move(examples), dim);
}

Dataset load_libsvm(const std::string& path, const LabelMap& labels, std::optional<std::size_t> dim_override) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset file '" + path + "'");
    return parse_libsvm(in, labels, dim_override);
}

void write_libsvm(std::ostream& out, const Dataset& data) {
    char buffer[64];
    for (const Example& ex : data.examples()) {
        out << (ex.label > 0 ? "+1" : "-1");
        for (const Feature& f : ex.features) {
            std::snprintf(buffer, sizeof buffer, "%.17g", f.value);
            out << ' ' << f.index << ':' << buffer;
        }
        out << '\n';
    }
}

Dataset subsample(const Dataset& data, std::size_t count, std::uint64_t seed) {
    if (count > data.size()) {
        throw ConfigError("subsample count " + std::to_string(count) + " exceeds dataset size " +
                          std::to_string(data.size()));
    }
    auto order = shuffled_indices(data.size(), seed);
    order.resize(count);
    std::sort(order.begin(), order.end());
    std::vector<Example> kept;
    kept.reserve(count);
    for (std::size_t i : order) kept.push_back(data[i]);
    return Dataset(std::move(kept), data.dim());
}

Partition::Partition(std::vector<std::vector<std::size_t>> clients) : clients_(std::move(clients)) {}

std::vector<std::size_t> Partition::client_sizes() const {
    std::vector<std::size_t> sizes;
    sizes.reserve(clients_.size());
    for (const auto& c : clients_) sizes.push_back(c.size());
    return sizes;
}

std::size_t Partition::total() const noexcept {
    std::size_t n = 0;
    for (const auto& c : clients_) n += c.size();
    return n;
}

Partition partition_iid(const Dataset& data, std::size_t num_clients, std::uint64_t seed) {
    if (num_clients == 0) throw ConfigError("client count must be positive");
    if (num_clients > data.size()) {
        throw ConfigError("client count " + std::to_string(num_clients) + " exceeds dataset size " +
                          std::to_string(data.size()));
    }
    const auto order = shuffled_indices(data.size(), seed);
    const std::size_t share = data.size() / num_clients;
    std::vector<std::vector<std::size_t>> clients(num_clients);
    for (std::size_t k = 0; k < num_clients; ++k) {
        clients[k].assign(order.begin() + static_cast<std::ptrdiff_t>(k * share),
                          order.begin() + static_cast<std::ptrdiff_t>((k + 1) * share));
    }
    return Partition(std::move(clients));
}

Partition partition_imbalanced(const Dataset& data, std::span<const double> proportions, std::uint64_t seed) {
    if (proportions.empty()) throw ConfigError("imbalanced partition needs at least one proportion");
    double sum = 0.0;
    for (double p : proportions) {
        if (!(p > 0.0)) throw ConfigError("imbalanced proportions must be positive");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("imbalanced proportions must sum to 1");
    for (double p : proportions) {
        if (std::floor(p * static_cast<double>(data.size())) < 1.0) {
            throw ConfigError("imbalanced partition would leave a client empty");
        }
    }

    const auto sizes = apportion(proportions, data.size());
    const auto order = shuffled_indices(data.size(), seed);
    std::vector<std::vector<std::size_t>> clients(proportions.size());
    std::size_t offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        clients[k].assign(order.begin() + static_cast<std::ptrdiff_t>(offset),
                          order.begin() + static_cast<std::ptrdiff_t>(offset + sizes[k]));
        offset += sizes[k];
    }
    return Partition(std::move(clients));
}

Partition partition_label_skew(const Dataset& data, std::size_t num_clients, std::uint64_t seed) {
    // Groups in ascending label order: -1 first, then +1.
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < data.size(); ++i) groups[data[i].label].push_back(i);
    if (groups.empty()) throw ConfigError("label-skew partition of an empty dataset");
    if (num_clients < groups.size()) {
        throw ConfigError("label-skew partition needs at least one client per label (" +
                          std::to_string(groups.size()) + " labels, " + std::to_string(num_clients) +
                          " clients)");
    }

    // One client per label up front; the rest follow class size.
    std::vector<double> class_share;
    for (const auto& [label, members] : groups) {
        class_share.push_back(static_cast<double>(members.size()) / static_cast<double>(data.size()));
    }
    auto allotted = apportion(class_share, num_clients - groups.size());
    for (auto& a : allotted) ++a;

    Rng rng(seed);
    std::vector<std::vector<std::size_t>> clients;
    clients.reserve(num_clients);
    std::size_t g = 0;
    for (auto& [label, members] : groups) {
        const std::size_t m = allotted[g++];
        if (members.size() < m) {
            throw ConfigError("label " + std::to_string(label) + " has fewer examples than allotted clients");
        }
        rng.shuffle(std::span<std::size_t>(members));
        const std::size_t base = members.size() / m;
        const std::size_t extra = members.size() % m;
        std::size_t offset = 0;
        for (std::size_t c = 0; c < m; ++c) {
            const std::size_t size = base + (c < extra ? 1 : 0);
            clients.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(offset),
                                 members.begin() + static_cast<std::ptrdiff_t>(offset + size));
            offset += size;
        }
    }
    return Partition(std::move(clients));
}

std::vector<double> default_imbalance_proportions(std::size_t num_clients) {
    if (num_clients < 3) throw ConfigError("the default imbalance profile needs at least 3 clients");
    std::vector<double> p(num_clients, (1.0 - 0.5 - 0.002) / static_cast<double>(num_clients - 2));
    p[0] = 0.5;
    p[1] = 0.002;
    return p;
}

}  // namespace fedosaa
