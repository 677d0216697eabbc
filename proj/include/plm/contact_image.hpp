#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "plm/corpus.hpp"
#include "plm/metrics.hpp"

namespace plm {

/// Binary PGM (P5, maxval 255), L x L, row i = residue i.
/// Pixel = round(255 * clamp(value, 0, 1)). With a band set, pixels whose
/// separation falls outside the band are zero.
std::string render_pgm(std::span<const double> values, std::size_t length,
                       std::optional<RangeBand> band = std::nullopt);

/// Truth image: 255 on contacts, 0 elsewhere.
std::string render_truth_pgm(const ContactMap& truth, std::optional<RangeBand> band = std::nullopt);

}  // namespace plm
