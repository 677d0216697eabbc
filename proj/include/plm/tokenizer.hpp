#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plm/tensor.hpp"

namespace plm {

/// Fixed 30-symbol vocabulary. Special ids are part of the checkpoint and
/// record formats and must never move.
namespace vocab {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kFirstResidue = 5;
inline constexpr std::size_t kSize = 30;

/// Residue letters at ids 5..29: the 20 standard amino acids, then the IUPAC
/// ambiguity and rare codes B Z X U O.
inline constexpr std::string_view kResidues = "ACDEFGHIKLMNPQRSTVWYBZXUO";

/// Letter [UNK] renders as when decoding.
inline constexpr char kUnknownResidue = 'X';

/// Token text for id (e.g. "[CLS]", "A"). Throws IndexError outside [0,30).
std::string_view token(TokenId id);

/// Id of a residue letter (case-insensitive), or kUnk for anything else.
TokenId residue_id(char c) noexcept;

constexpr bool is_special(TokenId id) noexcept { return id >= 0 && id < kFirstResidue; }

/// Positions the MLM objective may select: residues and [UNK].
constexpr bool is_residue_slot(TokenId id) noexcept {
    return id == kUnk || (id >= kFirstResidue && id < static_cast<TokenId>(kSize));
}

}  // namespace vocab

/// Encoded sequence: [CLS] residues... [SEP].
struct TokenSequence {
    std::vector<TokenId> ids;

    std::size_t size() const noexcept { return ids.size(); }
    std::size_t residue_count() const noexcept { return ids.size() >= 2 ? ids.size() - 2 : 0; }
};

/// [CLS] + one id per residue + [SEP]. Lowercase letters are upcased; anything
/// outside the 25-letter alphabet becomes [UNK]. Throws ContractError on empty text.
TokenSequence encode(std::string_view text);

/// Inverse of encode on the residue span. Special tokens are dropped and [UNK]
/// renders as 'X'. Throws IndexError for ids >= 30.
std::string decode(std::span<const TokenId> ids);

inline std::string decode(const TokenSequence& seq) {
    return decode(seq.ids);
}

/// Keep [CLS] + the first max_tokens-2 residues + [SEP].
TokenSequence truncate(const TokenSequence& seq, std::size_t max_tokens);

}  // namespace plm
