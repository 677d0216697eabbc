#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "plm/random.hpp"
#include "plm/tokenizer.hpp"

namespace plm {

inline constexpr double kDefaultMaskRate = 0.15;

/// How selected positions are corrupted. Must sum to 1.
struct MaskProportions {
    double mask = 0.8;
    double random = 0.1;
    double keep = 0.1;
};

/// A token sequence after MLM corruption. targets[i] holds the original id
/// where selected[i] is set and [PAD] elsewhere.
struct CorruptedSequence {
    std::vector<TokenId> ids;
    std::vector<TokenId> targets;
    std::vector<std::uint8_t> selected;
};

/// Select each residue slot (residue or [UNK]) with probability `rate`; selected
/// positions become [MASK], a uniform residue id (5..29) or stay unchanged per
/// `proportions`. If nothing was selected, one uniformly chosen residue slot is.
/// Throws ContractError for a sequence without residue slots or bad rates.
CorruptedSequence corrupt(const TokenSequence& seq, double rate, const MaskProportions& proportions, Rng& rng);

inline CorruptedSequence corrupt(const TokenSequence& seq, Rng& rng) {
    return corrupt(seq, kDefaultMaskRate, MaskProportions{}, rng);
}

/// Right-padded batch of token ids; row-major [batch, max_len].
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t max_len = 0;
    std::vector<TokenId> ids;
    /// 1 on real tokens, 0 on [PAD].
    std::vector<std::uint8_t> attention;
    std::vector<std::size_t> lengths;

    TokenId id(std::size_t b, std::size_t t) const { return ids[b * max_len + t]; }
};

struct MaskedBatch {
    TokenBatch input;
    std::vector<TokenId> target_ids;
    /// 1 where the position contributes to the MLM loss.
    std::vector<std::uint8_t> target_mask;
};

/// Pads uncorrupted sequences. Sequences longer than max_len are truncated
/// ([CLS] + residues + [SEP]). Throws ContractError on an empty batch or max_len < 2.
TokenBatch collate(std::span<const TokenSequence> seqs, std::size_t max_len);

/// Pads corrupted sequences, truncating like the overload above; a truncated
/// tail loses its targets.
MaskedBatch collate(std::span<const CorruptedSequence> seqs, std::size_t max_len);

}  // namespace plm
