#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "plm/corpus.hpp"
#include "plm/error.hpp"
#include "plm/random.hpp"
#include "plm/tokenizer.hpp"

namespace plm {
namespace {

constexpr std::string_view kStandard = "ACDEFGHIKLMNPQRSTVWY";

char random_residue(Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, kStandard.size() - 1);
    return kStandard[pick(rng)];
}

std::string random_sequence(std::size_t length, Rng& rng) {
    std::string s(length, 'A');
    for (auto& c : s) c = random_residue(rng);
    return s;
}

std::size_t draw_length(const SyntheticParams& p, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(p.min_length, p.max_length);
    return pick(rng);
}

void check_lengths(const SyntheticParams& p) {
    if (p.min_length == 0) throw ContractError("synthetic: min_length must be positive");
    if (p.min_length > p.max_length) {
        throw ContractError("synthetic: min_length " + std::to_string(p.min_length) + " exceeds max_length " +
                            std::to_string(p.max_length));
    }
}

void check_motifs(const SyntheticParams& p) {
    if (p.motifs.empty()) throw ContractError("synthetic: no motifs given");
    for (const auto& m : p.motifs) {
        if (m.empty()) throw ContractError("synthetic: empty motif");
        if (m.size() > p.min_length) {
            throw ContractError("synthetic: motif '" + m + "' is longer than min_length " +
                                std::to_string(p.min_length));
        }
    }
}

std::string plant(std::string seq, std::string_view motif, Rng& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, seq.size() - motif.size());
    seq.replace(pick(rng), motif.size(), motif);
    return seq;
}

std::vector<ProteinRecord> gen_motif(const SyntheticParams& p, std::uint64_t seed, bool labelled) {
    check_lengths(p);
    check_motifs(p);
    if (p.family_size == 0) throw ContractError("synthetic: family_size must be positive");
    Rng rng = make_rng(seed, {hash_name(labelled ? "synthetic/homology" : "synthetic/motif")});
    std::vector<ProteinRecord> out;
    out.reserve(p.count);
    for (std::size_t r = 0; r < p.count; ++r) {
        ProteinRecord rec;
        const std::size_t family = r / p.family_size;
        // homology cycles through the motifs per record so classes stay balanced;
        // the motif corpus keeps one motif per family.
        const std::size_t motif = (labelled ? r : family) % p.motifs.size();
        rec.id = fmt::format("{}{:05d}", labelled ? "hom" : "mot", r);
        rec.family = labelled ? fmt::format("fold{}", motif) : fmt::format("F{:04d}", family);
        rec.sequence = plant(random_sequence(draw_length(p, rng), rng), p.motifs[motif], rng);
        if (labelled) rec.label = ClassLabel{static_cast<int>(motif)};
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<ProteinRecord> gen_contact(const SyntheticParams& p, std::uint64_t seed) {
    check_lengths(p);
    if (!(p.contact_pair_rate >= 0.0 && p.contact_pair_rate <= 1.0)) {
        throw ContractError("synthetic: contact_pair_rate must lie in [0,1]");
    }
    Rng rng = make_rng(seed, {hash_name("synthetic/contact")});
    std::vector<ProteinRecord> out;
    out.reserve(p.count);
    for (std::size_t r = 0; r < p.count; ++r) {
        const std::size_t length = draw_length(p, rng);
        std::string seq = random_sequence(length, rng);
        for (std::size_t i = 0; i < length / 2; ++i) {
            if (uniform01(rng) < p.contact_pair_rate) seq[length - 1 - i] = seq[i];
        }
        ProteinRecord rec;
        rec.id = fmt::format("con{:05d}", r);
        rec.family = fmt::format("F{:04d}", r / std::max<std::size_t>(p.family_size, 1));
        rec.label = mirror_contact_map(seq);
        rec.sequence = std::move(seq);
        out.push_back(std::move(rec));
    }
    return out;
}

std::string mutate(std::string_view parent, std::size_t distance, Rng& rng) {
    std::vector<std::size_t> positions(parent.size());
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    std::string child(parent);
    for (std::size_t k = 0; k < distance; ++k) {
        const std::size_t pos = positions[k];
        char c = parent[pos];
        while (c == parent[pos]) c = random_residue(rng);
        child[pos] = c;
    }
    return child;
}

void check_mutation(const SyntheticParams& p) {
    check_lengths(p);
    if (p.max_near == 0) throw ContractError("synthetic: max_near must be at least 1");
    if (p.min_far <= p.max_near) throw ContractError("synthetic: min_far must exceed max_near");
    if (p.min_far > p.max_far) throw ContractError("synthetic: min_far exceeds max_far");
    if (p.max_far > p.min_length) {
        throw ContractError("synthetic: max_far " + std::to_string(p.max_far) + " exceeds min_length " +
                            std::to_string(p.min_length));
    }
}

std::vector<ProteinRecord> gen_mutation(const SyntheticParams& p, std::uint64_t seed) {
    check_mutation(p);
    const std::string parent = mutation_parent(p, seed);
    Rng rng = make_rng(seed, {hash_name("synthetic/mutation/children")});
    std::uniform_int_distribution<std::size_t> near(1, p.max_near);
    std::uniform_int_distribution<std::size_t> far(p.min_far, p.max_far);
    std::vector<ProteinRecord> out;
    out.reserve(p.count + p.count_far);
    for (std::size_t r = 0; r < p.count + p.count_far; ++r) {
        const std::size_t d = r < p.count ? near(rng) : far(rng);
        ProteinRecord rec;
        rec.id = fmt::format("mut{:05d}", r);
        rec.family = fmt::format("hamming{}", d);
        rec.sequence = mutate(parent, d, rng);
        rec.label = RealValue{mutation_value(parent, rec.sequence)};
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<ProteinRecord> gen_ss_rule(const SyntheticParams& p, std::uint64_t seed) {
    check_lengths(p);
    (void)ss_alphabet(p.ss_task);
    Rng rng = make_rng(seed, {hash_name("synthetic/ss_rule")});
    std::vector<ProteinRecord> out;
    out.reserve(p.count);
    for (std::size_t r = 0; r < p.count; ++r) {
        ProteinRecord rec;
        rec.id = fmt::format("ss{:05d}", r);
        rec.family = fmt::format("F{:04d}", r / std::max<std::size_t>(p.family_size, 1));
        rec.sequence = random_sequence(draw_length(p, rng), rng);
        std::string tags(rec.sequence.size(), ' ');
        std::ranges::transform(rec.sequence, tags.begin(), [&](char c) { return ss_rule_label(c, p.ss_task); });
        rec.label = TokenLabels{std::move(tags)};
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace

std::string_view synthetic_name(SyntheticKind kind) noexcept {
    switch (kind) {
        case SyntheticKind::motif: return "motif";
        case SyntheticKind::homology: return "homology";
        case SyntheticKind::contact: return "contact";
        case SyntheticKind::mutation: return "mutation";
        case SyntheticKind::ss_rule: return "ss_rule";
    }
    return "?";
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
    for (auto k : {SyntheticKind::motif, SyntheticKind::homology, SyntheticKind::contact, SyntheticKind::mutation,
                   SyntheticKind::ss_rule}) {
        if (synthetic_name(k) == name) return k;
    }
    throw ConfigError("unknown synthetic corpus '" + std::string(name) +
                      "' (expected motif, homology, contact, mutation or ss_rule)");
}

std::vector<std::string> default_motifs() {
    return {"MKVLA", "WCHPY", "QRSTD", "FGNEI", "YWMCH", "PDKRE", "HIVGS", "NTLQF"};
}

std::vector<ProteinRecord> gen_synthetic(SyntheticKind kind, const SyntheticParams& params, std::uint64_t seed) {
    switch (kind) {
        case SyntheticKind::motif: return gen_motif(params, seed, false);
        case SyntheticKind::homology: return gen_motif(params, seed, true);
        case SyntheticKind::contact: return gen_contact(params, seed);
        case SyntheticKind::mutation: return gen_mutation(params, seed);
        case SyntheticKind::ss_rule: return gen_ss_rule(params, seed);
    }
    throw ContractError("gen_synthetic: unknown kind");
}

std::string mutation_parent(const SyntheticParams& params, std::uint64_t seed) {
    check_mutation(params);
    Rng rng = make_rng(seed, {hash_name("synthetic/mutation/parent")});
    return random_sequence(draw_length(params, rng), rng);
}

double mutation_value(std::string_view parent, std::string_view mutant) {
    if (parent.size() != mutant.size()) {
        throw ContractError("mutation_value: parent and mutant lengths differ");
    }
    const double length = static_cast<double>(parent.size());
    double value = 0.0;
    for (std::size_t p = 0; p < parent.size(); ++p) {
        if (parent[p] != mutant[p]) value += std::sin(std::numbers::pi * (static_cast<double>(p) + 0.5) / length);
    }
    return value;
}

ContactMap mirror_contact_map(std::string_view sequence) {
    const std::size_t length = sequence.size();
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < length / 2; ++i) {
        if (sequence[i] == sequence[length - 1 - i]) pairs.emplace_back(i, length - 1 - i);
    }
    return ContactMap::from_pairs(length, pairs);
}

char ss_rule_label(char residue, TaskKind task) {
    const auto alphabet = ss_alphabet(task);
    return alphabet[static_cast<std::size_t>(vocab::residue_id(residue)) % alphabet.size()];
}

}  // namespace plm
