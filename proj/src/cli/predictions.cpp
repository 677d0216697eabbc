#include <charconv>
#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "../corpus/text_util.hpp"
#include "cli_impl.hpp"
#include "plm/error.hpp"

namespace plm::cli {
namespace {

double to_real(std::string_view s, std::size_t lineno) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError(lineno, "not a number: '" + std::string(s) + "'");
    }
    return v;
}

std::vector<std::string_view> split_commas(std::string_view s) {
    std::vector<std::string_view> out;
    if (s.empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto end = s.find(',', start);
        out.push_back(s.substr(start, end == std::string_view::npos ? s.size() - start : end - start));
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

std::vector<double> contact_scores(std::string_view field, std::string_view value, std::size_t length,
                                   std::size_t lineno) {
    std::vector<double> scores(length * length, 0.0);
    if (field == "scores") {
        const auto items = split_commas(value);
        if (items.size() != scores.size()) {
            throw FormatError(lineno, fmt::format("expected {} scores for length {}, got {}", scores.size(), length,
                                                  items.size()));
        }
        for (std::size_t k = 0; k < items.size(); ++k) scores[k] = to_real(items[k], lineno);
        return scores;
    }
    for (auto item : split_commas(value)) {
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) throw FormatError(lineno, "malformed contact pair '" + std::string(item) + "'");
        const auto i = static_cast<std::size_t>(to_real(item.substr(0, colon), lineno));
        const auto j = static_cast<std::size_t>(to_real(item.substr(colon + 1), lineno));
        if (i >= length || j >= length) throw FormatError(lineno, "contact index beyond sequence length");
        scores[i * length + j] = 1.0;
        scores[j * length + i] = 1.0;
    }
    return scores;
}

}  // namespace

TaskPredictions parse_predictions(std::string_view text, TaskKind task, std::span<const ProteinRecord> records) {
    std::map<std::string, std::pair<std::string, std::size_t>, std::less<>> by_id;  // id -> (line text, line no)
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const auto line = detail::trim(lines[n]);
        if (line.empty() || line.front() == '#') continue;
        std::string id;
        for (auto tok : detail::split_whitespace(line)) {
            if (tok.starts_with("id=")) id = std::string(tok.substr(3));
        }
        if (id.empty()) throw FormatError(n + 1, "prediction line has no id");
        if (!by_id.emplace(id, std::pair{std::string(line), n + 1}).second) {
            throw FormatError(n + 1, "duplicate prediction for '" + id + "'");
        }
    }

    TaskPredictions pred;
    pred.task = task;
    const std::string_view want = label_field(task);
    for (const auto& rec : records) {
        auto it = by_id.find(rec.id);
        if (it == by_id.end()) throw ContractError("no prediction for record '" + rec.id + "'");
        const auto& [line, lineno] = it->second;
        std::string_view field;
        std::string_view value;
        for (auto tok : detail::split_whitespace(line)) {
            const auto eq = tok.find('=');
            if (eq == std::string_view::npos) throw FormatError(lineno, "expected key=value, got '" + std::string(tok) + "'");
            const auto key = tok.substr(0, eq);
            if (key == want || (task == TaskKind::contact && key == "scores")) {
                field = key;
                value = tok.substr(eq + 1);
            }
        }
        if (field.empty()) throw FormatError(lineno, "prediction has no '" + std::string(want) + "' field");
        switch (task) {
            case TaskKind::ss3:
            case TaskKind::ss8: pred.tags.emplace_back(value); break;
            case TaskKind::remote_homology: pred.classes.push_back(static_cast<int>(to_real(value, lineno))); break;
            case TaskKind::contact:
                pred.contact_scores.push_back(contact_scores(field, value, rec.sequence.size(), lineno));
                break;
            case TaskKind::fluorescence:
            case TaskKind::stability: pred.values.push_back(to_real(value, lineno)); break;
        }
    }
    return pred;
}

std::string write_predictions(const TaskPredictions& pred, std::span<const ProteinRecord> records) {
    std::string out;
    for (std::size_t r = 0; r < records.size(); ++r) {
        out += "id=" + records[r].id + " ";
        switch (pred.task) {
            case TaskKind::ss3:
            case TaskKind::ss8: out += fmt::format("{}={}", label_field(pred.task), pred.tags.at(r)); break;
            case TaskKind::remote_homology: out += fmt::format("fold={}", pred.classes.at(r)); break;
            case TaskKind::contact: out += fmt::format("scores={}", fmt::join(pred.contact_scores.at(r), ",")); break;
            case TaskKind::fluorescence:
            case TaskKind::stability: out += fmt::format("value={}", pred.values.at(r)); break;
        }
        out += '\n';
    }
    return out;
}

std::pair<std::vector<double>, std::size_t> parse_score_matrix(std::string_view text) {
    std::vector<double> values;
    std::size_t width = 0;
    std::size_t rows = 0;
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const auto line = detail::trim(lines[n]);
        if (line.empty() || line.front() == '#') continue;
        const auto cells = detail::split_whitespace(line);
        if (rows == 0) width = cells.size();
        if (cells.size() != width) {
            throw FormatError(n + 1, fmt::format("row has {} values, expected {}", cells.size(), width));
        }
        for (auto c : cells) values.push_back(to_real(c, n + 1));
        ++rows;
    }
    if (rows == 0) throw FormatError(1, "score matrix is empty");
    if (rows != width) throw FormatError(1, fmt::format("score matrix is {}x{}, not square", rows, width));
    return {std::move(values), rows};
}

}  // namespace plm::cli
