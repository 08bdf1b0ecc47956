#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedosaa {

/// One nonzero feature. `index` is 1-based as in the LIBSVM format.
struct Feature {
    std::size_t index = 0;
    double value = 0.0;

    friend bool operator==(const Feature&, const Feature&) = default;
};

/// A labeled sparse example. Labels are always -1 or +1.
struct Example {
    int label = 1;
    std::vector<Feature> features;  // strictly increasing indices

    friend bool operator==(const Example&, const Example&) = default;
};

/// Immutable collection of sparse examples with a fixed dimension.
class Dataset {
public:
    Dataset() = default;

    /// Validates every example against `dim` (indices increasing, within range, labels +-1).
    Dataset(std::vector<Example> examples, std::size_t dim);

    std::size_t size() const noexcept { return examples_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<Example>& examples() const noexcept { return examples_; }
    const Example& operator[](std::size_t i) const { return examples_[i]; }

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    std::vector<Example> examples_;
    std::size_t dim_ = 0;
};

/// Maps raw LIBSVM labels onto {-1, +1}.
///
/// Lookups are exact on the parsed numeric value. Labels without an explicit
/// entry go to the fallback; without a fallback they are rejected.
class LabelMap {
public:
    /// +1 maps to +1, every other label to -1.
    static LabelMap binary_default();

    /// Only the given entries are accepted.
    static LabelMap explicit_map(const std::map<double, int>& entries);

    LabelMap& set(double raw, int mapped);
    LabelMap& set_fallback(std::optional<int> mapped);

    std::optional<int> operator()(double raw) const;

    const std::map<double, int>& entries() const noexcept { return entries_; }
    std::optional<int> fallback() const noexcept { return fallback_; }

private:
    std::map<double, int> entries_;
    std::optional<int> fallback_;
};

/// Parses LIBSVM text. Blank lines are skipped; `dim_override` may only raise the dimension.
/// Throws ParseError with the offending 1-based line number.
Dataset parse_libsvm(std::istream& in, const LabelMap& labels = LabelMap::binary_default(),
                     std::optional<std::size_t> dim_override = std::nullopt);

Dataset load_libsvm(const std::string& path, const LabelMap& labels = LabelMap::binary_default(),
                    std::optional<std::size_t> dim_override = std::nullopt);

/// Writes LIBSVM text with round-trip exact values (17 significant digits).
void write_libsvm(std::ostream& out, const Dataset& data);

/// Seeded subsample of `count` examples without replacement, original order kept.
Dataset subsample(const Dataset& data, std::size_t count, std::uint64_t seed);

/// Disjoint assignment of dataset indices to K clients.
class Partition {
public:
    Partition() = default;
    explicit Partition(std::vector<std::vector<std::size_t>> clients);

    std::size_t num_clients() const noexcept { return clients_.size(); }
    const std::vector<std::size_t>& client(std::size_t k) const { return clients_[k]; }
    const std::vector<std::vector<std::size_t>>& clients() const noexcept { return clients_; }
    std::vector<std::size_t> client_sizes() const;
    std::size_t total() const noexcept;

    friend bool operator==(const Partition&, const Partition&) = default;

private:
    std::vector<std::vector<std::size_t>> clients_;
};

/// Equal shares of floor(N/K) after a seeded shuffle; the remainder is dropped.
Partition partition_iid(const Dataset& data, std::size_t num_clients, std::uint64_t seed);

/// Contiguous blocks of a seeded shuffle with sizes proportional to `proportions`.
Partition partition_imbalanced(const Dataset& data, std::span<const double> proportions,
                               std::uint64_t seed);

/// Every client holds a single label; clients are allotted to labels by class size.
Partition partition_label_skew(const Dataset& data, std::size_t num_clients, std::uint64_t seed);

/// The K=10 heavy-tailed proportions: 50%, 0.2%, and eight equal shares of the rest.
std::vector<double> default_imbalance_proportions(std::size_t num_clients);

}  // namespace fedosaa
