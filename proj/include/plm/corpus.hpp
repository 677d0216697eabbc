#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace plm {

enum class TaskKind { ss3, ss8, remote_homology, contact, fluorescence, stability };

std::string_view task_name(TaskKind task) noexcept;
/// Accepts the names printed by task_name ("ss3", "ss8", "homology", "contact",
/// "fluorescence", "stability"). Throws ConfigError otherwise.
TaskKind parse_task_kind(std::string_view name);

/// Label alphabet of the secondary-structure tasks: "HEC" for Q3 and
/// "GHIEBTSC" for Q8.
std::string_view ss_alphabet(TaskKind task);

/// Boolean L x L contact matrix plus validity of each pair. valid(i,i) holds
/// whether residue i itself was resolved; contact(i,i) is always false.
struct ContactMap {
    std::size_t size = 0;
    std::vector<std::uint8_t> contact;
    std::vector<std::uint8_t> valid;

    bool is_contact(std::size_t i, std::size_t j) const { return contact[i * size + j] != 0; }
    bool is_valid(std::size_t i, std::size_t j) const { return valid[i * size + j] != 0; }

    /// Symmetric map from i<j or j<i pairs and a per-residue resolved mask
    /// (empty = all resolved). Throws ContractError on out-of-range indices,
    /// self-contacts or contacts touching unresolved residues.
    static ContactMap from_pairs(std::size_t length, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                 std::span<const std::uint8_t> residue_valid = {});

    std::vector<std::uint8_t> residue_mask() const;
    /// Contacts as (i,j) with i<j, row-major order.
    std::vector<std::pair<std::size_t, std::size_t>> pairs() const;

    bool operator==(const ContactMap&) const = default;
};

struct NoLabel {
    bool operator==(const NoLabel&) const = default;
};
/// One label character per residue (secondary structure).
struct TokenLabels {
    std::string tags;
    bool operator==(const TokenLabels&) const = default;
};
struct ClassLabel {
    int index = 0;
    bool operator==(const ClassLabel&) const = default;
};
struct RealValue {
    double value = 0.0;
    bool operator==(const RealValue&) const = default;
};

using Label = std::variant<NoLabel, TokenLabels, ClassLabel, ContactMap, RealValue>;

struct ProteinRecord {
    std::string id;
    std::optional<std::string> family;
    std::string sequence;
    Label label;

    bool operator==(const ProteinRecord&) const = default;
};

struct DatasetSplit {
    std::vector<ProteinRecord> train;
    std::vector<ProteinRecord> valid;
    std::vector<ProteinRecord> test;
    std::vector<ProteinRecord> holdout;
};

// ---- FASTA -----------------------------------------------------------------

/// '>' headers start records; the first header token is the id and an optional
/// `family=NAME` token sets the family. Sequence lines are concatenated with
/// whitespace removed. Throws FormatError with the offending line.
std::vector<ProteinRecord> parse_fasta(std::string_view text);

std::string write_fasta(std::span<const ProteinRecord> records, std::size_t line_width = 60);

// ---- task records ------------------------------------------------------------

struct TaskParseOptions {
    /// Number of fold classes for remote homology; labels must be in [0, n).
    int num_classes = 1195;
    /// Truncate longer sequences (labels and contacts in lockstep); 0 disables.
    std::size_t max_residues = 0;
};

/// One record per line: whitespace-separated `key=value` fields `id`,
/// `sequence`, optional `family`, and the task's label field (`ss3`, `ss8`,
/// `fold`, `contacts` + optional `valid_mask`, or `value`). Blank lines and
/// lines starting with '#' are skipped.
std::vector<ProteinRecord> parse_task_records(std::string_view text, TaskKind task,
                                              const TaskParseOptions& options = {});

std::string serialize_task_records(std::span<const ProteinRecord> records, TaskKind task);

/// Label field name used by the task ("ss3", "ss8", "fold", "contacts", "value").
std::string_view label_field(TaskKind task) noexcept;

// ---- splits ------------------------------------------------------------------

struct SplitOptions {
    double holdout_frac = 0.01;
    double valid_frac = 0.05;
    /// Per-record share of the non-holdout data sent to `test`.
    double test_frac = 0.0;
};

/// Whole families (in seeded shuffled order) go to holdout until holdout_frac
/// of all records is reached; the rest is split per record at random.
/// Deterministic given seed. Throws ContractError if a record has no family.
DatasetSplit family_split(std::span<const ProteinRecord> records, const SplitOptions& options,
                          std::uint64_t seed);

std::size_t hamming_distance(std::string_view a, std::string_view b);

// ---- synthetic corpora ---------------------------------------------------------

enum class SyntheticKind {
    /// Random sequences with one planted k-mer each (family = motif index bucket).
    motif,
    /// Motif corpus labelled with the planted motif's index (sequence class).
    homology,
    /// Pairs (i, L-1-i) are contacts wherever the residues there are equal.
    contact,
    /// Point mutants of one parent; value is a smooth function of mutated positions.
    mutation,
    /// Per-residue labels given by a fixed function of residue identity.
    ss_rule,
};

std::string_view synthetic_name(SyntheticKind kind) noexcept;
SyntheticKind parse_synthetic_kind(std::string_view name);

/// Eight fixed 5-mers used as the default homology motifs.
std::vector<std::string> default_motifs();

struct SyntheticParams {
    std::size_t count = 64;
    std::size_t min_length = 24;
    std::size_t max_length = 48;
    /// Motifs planted by the motif/homology generators.
    std::vector<std::string> motifs = {"MKVLA"};
    /// Records per family in the motif corpus.
    std::size_t family_size = 10;
    /// Probability that residue L-1-i is copied from residue i (contact corpus).
    double contact_pair_rate = 0.7;
    /// Mutation landscape: `count` records at distance 1..max_near and
    /// `count_far` records at distance min_far..max_far from the parent.
    std::size_t max_near = 3;
    std::size_t min_far = 4;
    std::size_t max_far = 6;
    std::size_t count_far = 0;
    /// Label set of the ss_rule generator (ss3 or ss8).
    TaskKind ss_task = TaskKind::ss3;
};

/// Pure function of (kind, params, seed). Throws ContractError for impossible
/// params (e.g. a motif longer than min_length).
std::vector<ProteinRecord> gen_synthetic(SyntheticKind kind, const SyntheticParams& params, std::uint64_t seed);

/// Parent sequence of the mutation landscape generated with the same params/seed.
std::string mutation_parent(const SyntheticParams& params, std::uint64_t seed);

/// Fitness assigned to a mutant: sum over mutated positions p of sin(pi (p+0.5)/L).
double mutation_value(std::string_view parent, std::string_view mutant);

/// Contact map the contact corpus assigns to a sequence.
ContactMap mirror_contact_map(std::string_view sequence);

/// Label the ss_rule generator assigns to a residue letter.
char ss_rule_label(char residue, TaskKind task);

}  // namespace plm
