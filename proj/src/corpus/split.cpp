#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "plm/corpus.hpp"
#include "plm/error.hpp"
#include "plm/random.hpp"

namespace plm {

DatasetSplit family_split(std::span<const ProteinRecord> records, const SplitOptions& options, std::uint64_t seed) {
    for (double f : {options.holdout_frac, options.valid_frac, options.test_frac}) {
        if (f < 0.0 || f > 1.0) throw ContractError("family_split: fractions must lie in [0,1]");
    }
    if (options.valid_frac + options.test_frac > 1.0) {
        throw ContractError("family_split: valid_frac + test_frac exceeds 1");
    }

    // Families in order of first appearance, so the shuffle below only depends on the seed.
    std::vector<std::string> families;
    std::unordered_map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].family) {
            throw ContractError("family_split: record '" + records[i].id + "' has no family");
        }
        auto [it, inserted] = members.try_emplace(*records[i].family);
        if (inserted) families.push_back(*records[i].family);
        it->second.push_back(i);
    }

    Rng family_rng = make_rng(seed, {hash_name("family_split/families")});
    std::shuffle(families.begin(), families.end(), family_rng);

    const double target = options.holdout_frac * static_cast<double>(records.size());
    std::vector<std::uint8_t> held(records.size(), 0);
    std::size_t held_count = 0;
    for (const auto& fam : families) {
        if (static_cast<double>(held_count) >= target) break;
        for (std::size_t i : members[fam]) held[i] = 1;
        held_count += members[fam].size();
    }

    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!held[i]) rest.push_back(i);
    }
    Rng record_rng = make_rng(seed, {hash_name("family_split/records")});
    std::vector<std::size_t> order = rest;
    std::shuffle(order.begin(), order.end(), record_rng);
    const auto n_valid = static_cast<std::size_t>(std::llround(options.valid_frac * static_cast<double>(rest.size())));
    const auto n_test = std::min(rest.size() - n_valid,
                                 static_cast<std::size_t>(std::llround(options.test_frac * static_cast<double>(rest.size()))));

    // 0 = train, 1 = valid, 2 = test, 3 = holdout
    std::vector<std::uint8_t> bucket(records.size(), 0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (held[i]) bucket[i] = 3;
    }
    for (std::size_t k = 0; k < n_valid; ++k) bucket[order[k]] = 1;
    for (std::size_t k = n_valid; k < n_valid + n_test; ++k) bucket[order[k]] = 2;

    DatasetSplit split;
    for (std::size_t i = 0; i < records.size(); ++i) {
        switch (bucket[i]) {
            case 0: split.train.push_back(records[i]); break;
            case 1: split.valid.push_back(records[i]); break;
            case 2: split.test.push_back(records[i]); break;
            default: split.holdout.push_back(records[i]); break;
        }
    }
    return split;
}

std::size_t hamming_distance(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) {
        throw ContractError("hamming_distance: lengths " + std::to_string(a.size()) + " and " +
                            std::to_string(b.size()) + " differ");
    }
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

}  // namespace plm
