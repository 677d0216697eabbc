#include "plm/masking.hpp"

#include <cmath>

#include "plm/error.hpp"

namespace plm {
namespace {

void check_rates(double rate, const MaskProportions& p) {
    if (!(rate > 0.0 && rate < 1.0)) throw ContractError("corrupt: rate must lie in (0,1)");
    if (p.mask < 0.0 || p.random < 0.0 || p.keep < 0.0 || std::abs(p.mask + p.random + p.keep - 1.0) > 1e-9) {
        throw ContractError("corrupt: proportions must be non-negative and sum to 1");
    }
}

void apply_corruption(CorruptedSequence& out, std::size_t pos, const MaskProportions& p, Rng& rng) {
    std::uniform_int_distribution<TokenId> residue(vocab::kFirstResidue, static_cast<TokenId>(vocab::kSize) - 1);
    out.selected[pos] = 1;
    out.targets[pos] = out.ids[pos];
    const double u = uniform01(rng);
    if (u < p.mask) {
        out.ids[pos] = vocab::kMask;
    } else if (u < p.mask + p.random) {
        out.ids[pos] = residue(rng);
    }
}

void check_batch(std::size_t n, std::size_t max_len) {
    if (n == 0) throw ContractError("collate: empty batch");
    if (max_len < 2) throw ContractError("collate: max_len must be at least 2");
}

}  // namespace

CorruptedSequence corrupt(const TokenSequence& seq, double rate, const MaskProportions& proportions, Rng& rng) {
    check_rates(rate, proportions);
    CorruptedSequence out;
    out.ids = seq.ids;
    out.targets.assign(seq.size(), vocab::kPad);
    out.selected.assign(seq.size(), 0);

    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (vocab::is_residue_slot(seq.ids[i])) slots.push_back(i);
    }
    if (slots.empty()) throw ContractError("corrupt: sequence has no residue positions");

    bool any = false;
    for (std::size_t pos : slots) {
        if (uniform01(rng) < rate) {
            apply_corruption(out, pos, proportions, rng);
            any = true;
        }
    }
    if (!any) {
        std::uniform_int_distribution<std::size_t> pick(0, slots.size() - 1);
        apply_corruption(out, slots[pick(rng)], proportions, rng);
    }
    return out;
}

TokenBatch collate(std::span<const TokenSequence> seqs, std::size_t max_len) {
    check_batch(seqs.size(), max_len);
    TokenBatch batch;
    batch.batch = seqs.size();
    batch.max_len = max_len;
    batch.ids.assign(seqs.size() * max_len, vocab::kPad);
    batch.attention.assign(seqs.size() * max_len, 0);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        const TokenSequence seq = truncate(seqs[b], max_len);
        for (std::size_t t = 0; t < seq.size(); ++t) {
            batch.ids[b * max_len + t] = seq.ids[t];
            batch.attention[b * max_len + t] = 1;
        }
        batch.lengths.push_back(seq.size());
    }
    return batch;
}

MaskedBatch collate(std::span<const CorruptedSequence> seqs, std::size_t max_len) {
    check_batch(seqs.size(), max_len);
    MaskedBatch out;
    TokenBatch& batch = out.input;
    batch.batch = seqs.size();
    batch.max_len = max_len;
    batch.ids.assign(seqs.size() * max_len, vocab::kPad);
    batch.attention.assign(seqs.size() * max_len, 0);
    out.target_ids.assign(seqs.size() * max_len, vocab::kPad);
    out.target_mask.assign(seqs.size() * max_len, 0);
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        const CorruptedSequence& seq = seqs[b];
        const std::size_t n = seq.ids.size();
        if (seq.targets.size() != n || seq.selected.size() != n) {
            throw ContractError("collate: corrupted sequence " + std::to_string(b) + " has ragged fields");
        }
        const bool cut = n > max_len;
        const std::size_t len = cut ? max_len : n;
        for (std::size_t t = 0; t < len; ++t) {
            const std::size_t at = b * max_len + t;
            batch.ids[at] = seq.ids[t];
            batch.attention[at] = 1;
            if (seq.selected[t]) {
                out.target_ids[at] = seq.targets[t];
                out.target_mask[at] = 1;
            }
        }
        if (cut) {
            const std::size_t last = b * max_len + max_len - 1;
            batch.ids[last] = vocab::kSep;
            out.target_ids[last] = vocab::kPad;
            out.target_mask[last] = 0;
        }
        batch.lengths.push_back(len);
    }
    return out;
}

}  // namespace plm
