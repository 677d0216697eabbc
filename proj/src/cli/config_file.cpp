#include <algorithm>

#include "../corpus/text_util.hpp"
#include "cli_impl.hpp"
#include "plm/checkpoint.hpp"
#include "plm/error.hpp"

namespace plm::cli {

std::vector<std::pair<std::string, std::string>> parse_config_file(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> out;
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        std::string_view line = lines[n];
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(n + 1) + ": expected 'key = value'");
        }
        std::string key(detail::trim(line.substr(0, eq)));
        const std::string value(detail::trim(line.substr(eq + 1)));
        if (key.empty()) throw ConfigError("config line " + std::to_string(n + 1) + ": empty key");
        std::ranges::replace(key, '_', '-');
        out.emplace_back(std::move(key), value);
    }
    return out;
}

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    if (args.empty()) return args;
    std::vector<std::string> rest;
    std::vector<std::string> from_file;
    bool seen = false;
    for (std::size_t i = 1; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ConfigError("--config needs a file argument");
            path = args[++i];
        } else if (args[i].starts_with("--config=")) {
            path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
            continue;
        }
        if (seen) throw ConfigError("--config given more than once");
        seen = true;
        for (auto& [key, value] : parse_config_file(read_file(path))) from_file.push_back("--" + key + "=" + value);
    }
    std::vector<std::string> out{args.front()};
    out.insert(out.end(), from_file.begin(), from_file.end());
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

}  // namespace plm::cli
