#include "plm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "plm/error.hpp"

namespace plm {

double token_accuracy(std::span<const int> pred, std::span<const int> gold, std::span<const std::uint8_t> mask) {
    if (pred.size() != gold.size() || pred.size() != mask.size()) {
        throw ContractError(fmt::format("token_accuracy: lengths {}, {} and mask {} differ", pred.size(), gold.size(),
                                        mask.size()));
    }
    std::size_t selected = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!mask[i]) continue;
        ++selected;
        correct += pred[i] == gold[i];
    }
    if (selected == 0) throw ContractError("token_accuracy: no positions selected");
    return double(correct) / double(selected);
}

double top1_accuracy(std::span<const int> pred, std::span<const int> gold) {
    if (pred.empty()) throw ContractError("top1_accuracy: no predictions");
    if (pred.size() != gold.size()) {
        throw ContractError(fmt::format("top1_accuracy: {} predictions for {} labels", pred.size(), gold.size()));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == gold[i];
    return double(correct) / double(pred.size());
}

RangeBand range_band(std::size_t i, std::size_t j) {
    if (i == j) throw ContractError("range_band: i and j are equal");
    const std::size_t sep = i > j ? i - j : j - i;
    if (sep >= 24) return RangeBand::long_range;
    if (sep >= 12) return RangeBand::medium_range;
    return RangeBand::short_range;
}

std::string_view band_name(RangeBand band) noexcept {
    switch (band) {
        case RangeBand::short_range: return "short";
        case RangeBand::medium_range: return "medium";
        case RangeBand::long_range: return "long";
    }
    return "?";
}

ContactRange band_range(RangeBand band) noexcept {
    switch (band) {
        case RangeBand::short_range: return {1, 11};
        case RangeBand::medium_range: return {12, 23};
        case RangeBand::long_range: return {24, std::nullopt};
    }
    return {};
}

std::vector<RankedPair> rank_pairs(std::span<const double> scores, const ContactMap& truth,
                                   const ContactRange& range) {
    const std::size_t l = truth.size;
    if (scores.size() != l * l) {
        throw ContractError(fmt::format("rank_pairs: {} scores for a {}x{} contact map", scores.size(), l, l));
    }
    std::vector<RankedPair> pairs;
    for (std::size_t i = 0; i < l; ++i) {
        for (std::size_t j = i + 1; j < l; ++j) {
            if (!truth.is_valid(i, j)) continue;
            const double s = scores[i * l + j];
            if (std::isnan(s)) throw ContractError(fmt::format("rank_pairs: score ({},{}) is NaN", i, j));
            if (s != scores[j * l + i]) {
                throw ContractError(fmt::format("rank_pairs: scores not symmetric at ({},{})", i, j));
            }
            const std::size_t sep = j - i;
            if (sep < range.min_sep || (range.max_sep && sep > *range.max_sep)) continue;
            pairs.push_back({i, j, s});
        }
    }
    std::ranges::sort(pairs, [](const RankedPair& a, const RankedPair& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    });
    return pairs;
}

double contact_precision(std::span<const double> scores, const ContactMap& truth, std::size_t divisor,
                         const ContactRange& range) {
    if (divisor == 0) throw ContractError("contact_precision: divisor must be positive");
    const auto ranked = rank_pairs(scores, truth, range);
    if (ranked.empty()) throw ContractError("contact_precision: no candidate pairs");
    const std::size_t k = (truth.size + divisor - 1) / divisor;
    const std::size_t take = std::min(k, ranked.size());
    std::size_t hits = 0;
    for (std::size_t n = 0; n < take; ++n) hits += truth.is_contact(ranked[n].i, ranked[n].j);
    return double(hits) / double(k);
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t start = 0;
    while (start < order.size()) {
        std::size_t end = start + 1;
        while (end < order.size() && values[order[end]] == values[order[start]]) ++end;
        // positions start..end-1 hold ranks start+1..end
        const double mean = (double(start + 1) + double(end)) / 2.0;
        for (std::size_t n = start; n < end; ++n) ranks[order[n]] = mean;
        start = end;
    }
    return ranks;
}

double spearman_rho(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ContractError(fmt::format("spearman_rho: lengths {} and {} differ", x.size(), y.size()));
    }
    if (x.size() < 2) throw ContractError("spearman_rho: need at least two points");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(y[i])) throw ContractError("spearman_rho: NaN input");
    }
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double n = double(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw ContractError("spearman_rho: constant input, correlation undefined");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace plm
