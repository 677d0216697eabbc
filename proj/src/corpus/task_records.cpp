#include <algorithm>
#include <charconv>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "plm/corpus.hpp"
#include "plm/error.hpp"
#include "text_util.hpp"

namespace plm {

std::string_view task_name(TaskKind task) noexcept {
    switch (task) {
        case TaskKind::ss3: return "ss3";
        case TaskKind::ss8: return "ss8";
        case TaskKind::remote_homology: return "homology";
        case TaskKind::contact: return "contact";
        case TaskKind::fluorescence: return "fluorescence";
        case TaskKind::stability: return "stability";
    }
    return "?";
}

TaskKind parse_task_kind(std::string_view name) {
    for (auto t : {TaskKind::ss3, TaskKind::ss8, TaskKind::remote_homology, TaskKind::contact,
                   TaskKind::fluorescence, TaskKind::stability}) {
        if (task_name(t) == name) return t;
    }
    throw ConfigError("unknown task '" + std::string(name) +
                      "' (expected ss3, ss8, homology, contact, fluorescence or stability)");
}

std::string_view ss_alphabet(TaskKind task) {
    switch (task) {
        case TaskKind::ss3: return "HEC";
        case TaskKind::ss8: return "GHIEBTSC";
        default: throw ContractError("ss_alphabet: " + std::string(task_name(task)) + " is not a secondary-structure task");
    }
}

std::string_view label_field(TaskKind task) noexcept {
    switch (task) {
        case TaskKind::ss3: return "ss3";
        case TaskKind::ss8: return "ss8";
        case TaskKind::remote_homology: return "fold";
        case TaskKind::contact: return "contacts";
        case TaskKind::fluorescence:
        case TaskKind::stability: return "value";
    }
    return "?";
}

ContactMap ContactMap::from_pairs(std::size_t length, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                                  std::span<const std::uint8_t> residue_valid) {
    if (!residue_valid.empty() && residue_valid.size() != length) {
        throw ContractError("contact map: validity mask has " + std::to_string(residue_valid.size()) +
                            " entries for length " + std::to_string(length));
    }
    ContactMap map;
    map.size = length;
    map.contact.assign(length * length, 0);
    map.valid.assign(length * length, 0);
    const auto resolved = [&](std::size_t i) { return residue_valid.empty() || residue_valid[i] != 0; };
    for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t j = 0; j < length; ++j) map.valid[i * length + j] = resolved(i) && resolved(j);
    }
    for (auto [i, j] : pairs) {
        if (i >= length || j >= length) {
            throw ContractError("contact (" + std::to_string(i) + "," + std::to_string(j) +
                                ") outside sequence length " + std::to_string(length));
        }
        if (i == j) throw ContractError("contact (" + std::to_string(i) + "," + std::to_string(j) + ") is on the diagonal");
        if (!resolved(i) || !resolved(j)) {
            throw ContractError("contact (" + std::to_string(i) + "," + std::to_string(j) +
                                ") touches an unresolved residue");
        }
        map.contact[i * length + j] = 1;
        map.contact[j * length + i] = 1;
    }
    return map;
}

std::vector<std::uint8_t> ContactMap::residue_mask() const {
    std::vector<std::uint8_t> mask(size);
    for (std::size_t i = 0; i < size; ++i) mask[i] = valid[i * size + i];
    return mask;
}

std::vector<std::pair<std::size_t, std::size_t>> ContactMap::pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = i + 1; j < size; ++j) {
            if (is_contact(i, j)) out.emplace_back(i, j);
        }
    }
    return out;
}

namespace {

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_real(std::string_view s, double& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::pair<std::size_t, std::size_t>> parse_contacts(std::string_view text, std::size_t lineno) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view item = text.substr(start, end - start);
        const std::size_t colon = item.find(':');
        std::size_t i = 0;
        std::size_t j = 0;
        if (colon == std::string_view::npos || !parse_int(item.substr(0, colon), i) ||
            !parse_int(item.substr(colon + 1), j)) {
            throw FormatError(lineno, "malformed contact pair '" + std::string(item) + "' (expected i:j)");
        }
        pairs.emplace_back(i, j);
        start = end + 1;
    }
    return pairs;
}

bool is_ss_task(TaskKind task) {
    return task == TaskKind::ss3 || task == TaskKind::ss8;
}

template <typename L>
const L& label_as(const ProteinRecord& rec, TaskKind task) {
    if (const auto* label = std::get_if<L>(&rec.label)) return *label;
    throw ContractError("record '" + rec.id + "' has no " + std::string(task_name(task)) + " label");
}

}  // namespace

std::vector<ProteinRecord> parse_task_records(std::string_view text, TaskKind task, const TaskParseOptions& options) {
    std::vector<ProteinRecord> records;
    const std::string_view label_key = label_field(task);
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::size_t lineno = n + 1;
        const std::string_view line = detail::trim(lines[n]);
        if (line.empty() || line.front() == '#') continue;

        std::map<std::string_view, std::string_view> fields;
        for (auto tok : detail::split_whitespace(line)) {
            const std::size_t eq = tok.find('=');
            if (eq == std::string_view::npos || eq == 0) {
                throw FormatError(lineno, "field '" + std::string(tok) + "' is not key=value");
            }
            const auto key = tok.substr(0, eq);
            const bool known = key == "id" || key == "sequence" || key == "family" || key == label_key ||
                               (task == TaskKind::contact && key == "valid_mask");
            if (!known) {
                throw FormatError(lineno, "unknown field '" + std::string(key) + "' for task " +
                                              std::string(task_name(task)));
            }
            if (!fields.emplace(key, tok.substr(eq + 1)).second) {
                throw FormatError(lineno, "duplicate field '" + std::string(key) + "'");
            }
        }
        const auto require = [&](std::string_view key) {
            auto it = fields.find(key);
            if (it == fields.end()) throw FormatError(lineno, "missing field '" + std::string(key) + "'");
            return it->second;
        };

        ProteinRecord rec;
        rec.id = std::string(require("id"));
        if (rec.id.empty()) throw FormatError(lineno, "empty id");
        rec.sequence = std::string(require("sequence"));
        if (rec.sequence.empty()) throw FormatError(lineno, "empty sequence");
        if (auto it = fields.find("family"); it != fields.end()) rec.family = std::string(it->second);
        const std::size_t length = rec.sequence.size();
        const std::string_view raw = require(label_key);

        if (is_ss_task(task)) {
            const auto alphabet = ss_alphabet(task);
            if (raw.size() != length) {
                throw FormatError(lineno, std::string(label_key) + " label length " + std::to_string(raw.size()) +
                                              " does not match sequence length " + std::to_string(length));
            }
            for (char c : raw) {
                if (alphabet.find(c) == std::string_view::npos) {
                    throw FormatError(lineno, std::string("label '") + c + "' not in " + std::string(alphabet));
                }
            }
            rec.label = TokenLabels{std::string(raw)};
        } else if (task == TaskKind::remote_homology) {
            int cls = -1;
            if (!parse_int(raw, cls)) throw FormatError(lineno, "fold '" + std::string(raw) + "' is not an integer");
            if (cls < 0 || cls >= options.num_classes) {
                throw FormatError(lineno, "fold " + std::to_string(cls) + " outside [0," +
                                              std::to_string(options.num_classes) + ")");
            }
            rec.label = ClassLabel{cls};
        } else if (task == TaskKind::contact) {
            auto pairs = parse_contacts(raw, lineno);
            std::vector<std::uint8_t> mask;
            if (auto it = fields.find("valid_mask"); it != fields.end()) {
                if (it->second.size() != length) {
                    throw FormatError(lineno, "valid_mask length " + std::to_string(it->second.size()) +
                                                  " does not match sequence length " + std::to_string(length));
                }
                for (char c : it->second) {
                    if (c != '0' && c != '1') throw FormatError(lineno, "valid_mask must contain only 0 and 1");
                    mask.push_back(c == '1');
                }
            }
            try {
                rec.label = ContactMap::from_pairs(length, pairs, mask);
            } catch (const ContractError& e) {
                throw FormatError(lineno, e.what());
            }
        } else {
            double v = 0.0;
            if (!parse_real(raw, v)) throw FormatError(lineno, "value '" + std::string(raw) + "' is not a number");
            rec.label = RealValue{v};
        }

        if (options.max_residues > 0 && length > options.max_residues) {
            const std::size_t keep = options.max_residues;
            spdlog::warn("record '{}' truncated from {} to {} residues", rec.id, length, keep);
            rec.sequence.resize(keep);
            if (auto* tags = std::get_if<TokenLabels>(&rec.label)) tags->tags.resize(keep);
            if (auto* map = std::get_if<ContactMap>(&rec.label)) {
                std::vector<std::pair<std::size_t, std::size_t>> kept;
                for (auto [i, j] : map->pairs()) {
                    if (i < keep && j < keep) kept.emplace_back(i, j);
                }
                auto mask = map->residue_mask();
                mask.resize(keep);
                *map = ContactMap::from_pairs(keep, kept, mask);
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::string serialize_task_records(std::span<const ProteinRecord> records, TaskKind task) {
    std::string out;
    for (const auto& rec : records) {
        out += "id=" + rec.id;
        if (rec.family) out += " family=" + *rec.family;
        out += " sequence=" + rec.sequence;
        out += ' ';
        out += label_field(task);
        out += '=';
        if (is_ss_task(task)) {
            out += label_as<TokenLabels>(rec, task).tags;
        } else if (task == TaskKind::remote_homology) {
            out += std::to_string(label_as<ClassLabel>(rec, task).index);
        } else if (task == TaskKind::contact) {
            const auto& map = label_as<ContactMap>(rec, task);
            bool first = true;
            for (auto [i, j] : map.pairs()) {
                if (!first) out += ',';
                out += fmt::format("{}:{}", i, j);
                first = false;
            }
            const auto mask = map.residue_mask();
            if (std::ranges::any_of(mask, [](std::uint8_t m) { return m == 0; })) {
                out += " valid_mask=";
                for (auto m : mask) out += m ? '1' : '0';
            }
        } else {
            out += fmt::format("{}", label_as<RealValue>(rec, task).value);
        }
        out += '\n';
    }
    return out;
}

}  // namespace plm
