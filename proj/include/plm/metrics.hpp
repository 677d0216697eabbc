#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "plm/corpus.hpp"

namespace plm {

/// Fraction of positions with mask set where pred equals gold. Throws
/// ContractError on length mismatch or an empty selection.
double token_accuracy(std::span<const int> pred, std::span<const int> gold, std::span<const std::uint8_t> mask);

/// Fraction of exact matches. Throws ContractError on empty or mismatched input.
double top1_accuracy(std::span<const int> pred, std::span<const int> gold);

enum class RangeBand { short_range, medium_range, long_range };

/// |i-j| >= 24 is long, 12..23 medium, anything closer short. Throws ContractError for i == j.
RangeBand range_band(std::size_t i, std::size_t j);
std::string_view band_name(RangeBand band) noexcept;

/// Which pairs count as candidates: i<j, min_sep <= j-i (<= max_sep when set).
struct ContactRange {
    std::size_t min_sep = 6;
    std::optional<std::size_t> max_sep;
};

/// Range covering one band, e.g. {24, none} for long range.
ContactRange band_range(RangeBand band) noexcept;

struct RankedPair {
    std::size_t i = 0;
    std::size_t j = 0;
    double score = 0.0;
};

/// Candidate pairs that are valid in `truth`, sorted by (score desc, i asc, j asc).
/// `scores` is row-major L x L and must be symmetric where valid.
std::vector<RankedPair> rank_pairs(std::span<const double> scores, const ContactMap& truth,
                                   const ContactRange& range = {});

/// Hits among the top k = ceil(L / divisor) ranked candidates, divided by k.
/// Fewer than k candidates: all are taken, the denominator stays k. Throws
/// ContractError when there is no candidate pair.
double contact_precision(std::span<const double> scores, const ContactMap& truth, std::size_t divisor,
                         const ContactRange& range = {});

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks. Throws ContractError for fewer than
/// two points, mismatched lengths or a constant input (correlation undefined).
double spearman_rho(std::span<const double> x, std::span<const double> y);

}  // namespace plm
