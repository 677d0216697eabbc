#include "plm/contact_image.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "plm/error.hpp"

namespace plm {

std::string render_pgm(std::span<const double> values, std::size_t length, std::optional<RangeBand> band) {
    if (length == 0) throw ContractError("render_pgm: empty image");
    if (values.size() != length * length) {
        throw ContractError(fmt::format("render_pgm: {} values for a {}x{} image", values.size(), length, length));
    }
    std::string out = fmt::format("P5\n{} {}\n255\n", length, length);
    out.reserve(out.size() + values.size());
    for (std::size_t i = 0; i < length; ++i) {
        for (std::size_t j = 0; j < length; ++j) {
            const double v = values[i * length + j];
            if (std::isnan(v)) throw ContractError(fmt::format("render_pgm: value ({},{}) is NaN", i, j));
            const bool shown = !band || (i != j && range_band(i, j) == *band);
            const long pixel = shown ? std::lround(255.0 * std::clamp(v, 0.0, 1.0)) : 0;
            out.push_back(static_cast<char>(static_cast<unsigned char>(pixel)));
        }
    }
    return out;
}

std::string render_truth_pgm(const ContactMap& truth, std::optional<RangeBand> band) {
    std::vector<double> values(truth.size * truth.size);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = truth.contact[i] ? 1.0 : 0.0;
    return render_pgm(values, truth.size, band);
}

}  // namespace plm
