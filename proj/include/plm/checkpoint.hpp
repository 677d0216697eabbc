#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "plm/model.hpp"
#include "plm/trainer.hpp"

namespace plm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "PLM1" | u32 version | u32 n + n bytes config_text
//   u32 count | count x tensor
//   u8 has_optimizer [ | u64 step | u32 count | count x tensor ]
// tensor = u16 name length | name | u8 rank | rank x u32 extent | numel x f32
// Optimizer tensors are named "adam.m.<param>" and "adam.v.<param>".

struct Checkpoint {
    Model model;
    std::optional<OptimizerState> optimizer;
};

std::string encode_checkpoint(const Model& model, const OptimizerState* optimizer = nullptr);

/// Throws BadMagicError, UnsupportedVersionError, TruncatedCheckpointError or
/// CheckpointError (other malformed content).
Checkpoint decode_checkpoint(std::string_view bytes);

/// Decode into an existing architecture: every stored tensor must exist in
/// `target` with the same shape (ShapeMismatchError names the first that does
/// not) and every target tensor must be stored.
Checkpoint decode_checkpoint_into(std::string_view bytes, const ModelConfig& target);

/// File wrappers; IoError when the file cannot be written or read.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint_into(const std::filesystem::path& path, const ModelConfig& target);

/// Whole-file helpers shared with the CLI.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace plm
