#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "plm/corpus.hpp"
#include "plm/tasks.hpp"

namespace plm::cli {

/// `key = value` lines; '#' starts a comment; blank lines are skipped.
/// Throws ConfigError naming the line for anything else.
std::vector<std::pair<std::string, std::string>> parse_config_file(std::string_view text);

/// Replaces `--config FILE` (or `--config=FILE`) in a subcommand's arguments by
/// `--key=value` tokens placed ahead of the remaining flags, so explicit flags
/// win under a take-last policy. Keys may use '_' or '-'.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

/// Prediction files: one line per record, `id=<id>` plus the task's field
/// (`ss3`/`ss8` tag string, `fold` class, `value` real, or for contact either
/// `scores` = L*L comma-separated row-major values or `contacts` pairs, which
/// score 1 for listed pairs and 0 elsewhere). Order follows `records`.
TaskPredictions parse_predictions(std::string_view text, TaskKind task, std::span<const ProteinRecord> records);
std::string write_predictions(const TaskPredictions& pred, std::span<const ProteinRecord> records);

/// Whitespace-separated square matrix, one row per line. Returns (values, L);
/// throws FormatError when rows differ in length or the matrix is not square.
std::pair<std::vector<double>, std::size_t> parse_score_matrix(std::string_view text);

}  // namespace plm::cli
