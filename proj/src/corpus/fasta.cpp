#include <algorithm>

#include "plm/corpus.hpp"
#include "plm/error.hpp"
#include "text_util.hpp"

namespace plm {

std::vector<ProteinRecord> parse_fasta(std::string_view text) {
    std::vector<ProteinRecord> records;
    std::size_t header_line = 0;
    const auto finish = [&] {
        if (!records.empty() && records.back().sequence.empty()) {
            throw FormatError(header_line, "record '" + records.back().id + "' has an empty sequence");
        }
    };
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::string_view line = lines[n];
        const std::size_t lineno = n + 1;
        if (!line.empty() && line.front() == '>') {
            finish();
            const auto tokens = detail::split_whitespace(line.substr(1));
            if (tokens.empty()) throw FormatError(lineno, "header without an id");
            ProteinRecord rec;
            rec.id = std::string(tokens.front());
            for (std::size_t t = 1; t < tokens.size(); ++t) {
                constexpr std::string_view key = "family=";
                if (tokens[t].starts_with(key)) rec.family = std::string(tokens[t].substr(key.size()));
            }
            records.push_back(std::move(rec));
            header_line = lineno;
            continue;
        }
        if (detail::trim(line).empty()) continue;
        if (records.empty()) throw FormatError(lineno, "sequence data before the first '>' header");
        for (char c : line) {
            if (!detail::is_space(c)) records.back().sequence.push_back(c);
        }
    }
    finish();
    return records;
}

std::string write_fasta(std::span<const ProteinRecord> records, std::size_t line_width) {
    std::string out;
    for (const auto& rec : records) {
        out += '>';
        out += rec.id;
        if (rec.family) {
            out += " family=";
            out += *rec.family;
        }
        out += '\n';
        const std::size_t width = line_width ? line_width : rec.sequence.size();
        for (std::size_t i = 0; i < rec.sequence.size(); i += width) {
            out += rec.sequence.substr(i, width);
            out += '\n';
        }
    }
    return out;
}

}  // namespace plm
