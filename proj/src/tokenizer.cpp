#include "plm/tokenizer.hpp"

#include <cctype>

#include "plm/error.hpp"

namespace plm {
namespace vocab {
namespace {

constexpr std::array<std::string_view, kFirstResidue> kSpecialText = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                                      "[MASK]"};

constexpr std::array<TokenId, 256> build_letter_table() {
    std::array<TokenId, 256> table{};
    for (auto& t : table) t = kUnk;
    for (std::size_t i = 0; i < kResidues.size(); ++i) {
        const auto upper = static_cast<unsigned char>(kResidues[i]);
        table[upper] = kFirstResidue + static_cast<TokenId>(i);
        table[upper + ('a' - 'A')] = kFirstResidue + static_cast<TokenId>(i);
    }
    return table;
}

constexpr auto kLetterTable = build_letter_table();

static_assert(kFirstResidue + kResidues.size() == kSize);

}  // namespace

std::string_view token(TokenId id) {
    if (id < 0 || static_cast<std::size_t>(id) >= kSize) {
        throw IndexError("token id " + std::to_string(id) + " outside [0," + std::to_string(kSize) + ")");
    }
    if (id < kFirstResidue) return kSpecialText[static_cast<std::size_t>(id)];
    return kResidues.substr(static_cast<std::size_t>(id - kFirstResidue), 1);
}

TokenId residue_id(char c) noexcept {
    return kLetterTable[static_cast<unsigned char>(c)];
}

}  // namespace vocab

TokenSequence encode(std::string_view text) {
    if (text.empty()) throw ContractError("encode: empty input");
    TokenSequence seq;
    seq.ids.reserve(text.size() + 2);
    seq.ids.push_back(vocab::kCls);
    for (char c : text) seq.ids.push_back(vocab::residue_id(c));
    seq.ids.push_back(vocab::kSep);
    return seq;
}

std::string decode(std::span<const TokenId> ids) {
    std::string out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const TokenId id = ids[i];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab::kSize) {
            throw IndexError("decode: id " + std::to_string(id) + " at position " + std::to_string(i) +
                             " outside [0," + std::to_string(vocab::kSize) + ")");
        }
        if (id == vocab::kUnk) {
            out.push_back(vocab::kUnknownResidue);
        } else if (!vocab::is_special(id)) {
            out.push_back(vocab::kResidues[static_cast<std::size_t>(id - vocab::kFirstResidue)]);
        }
    }
    return out;
}

TokenSequence truncate(const TokenSequence& seq, std::size_t max_tokens) {
    if (max_tokens < 2) throw ContractError("truncate: max_tokens must be at least 2");
    if (seq.size() <= max_tokens) return seq;
    TokenSequence out;
    out.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(max_tokens - 1));
    out.ids.push_back(vocab::kSep);
    return out;
}

}  // namespace plm
