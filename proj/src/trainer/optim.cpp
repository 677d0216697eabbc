#include <cmath>

#include <fmt/format.h>

#include "plm/error.hpp"
#include "plm/trainer.hpp"

namespace plm {
namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

bool decays(std::string_view name) noexcept {
    return !(ends_with(name, ".bias") || ends_with(name, ".gamma") || ends_with(name, ".beta"));
}

void adam_step(ParameterSet& params, OptimizerState& state, double lr, const AdamConfig& config) {
    for (const auto& e : params) {
        if (e.tensor.requires_grad() && !e.tensor.has_grad()) {
            throw ContractError("adam_step: parameter '" + e.name + "' has no gradient");
        }
    }
    const std::size_t t = state.step + 1;
    const double c1 = 1.0 - std::pow(config.beta1, double(t));
    const double c2 = 1.0 - std::pow(config.beta2, double(t));
    for (auto& e : params) {
        if (!e.tensor.requires_grad()) continue;
        if (!state.m.contains(e.name)) {
            state.m.add(e.name, Tensor(e.tensor.dims()));
            state.v.add(e.name, Tensor(e.tensor.dims()));
        }
        Tensor m = state.m.get(e.name);
        Tensor v = state.v.get(e.name);
        if (m.dims() != e.tensor.dims() || v.dims() != e.tensor.dims()) {
            throw ContractError("adam_step: moment shape of '" + e.name + "' does not match the parameter");
        }
        const double decay = decays(e.name) ? config.weight_decay : 0.0;
        auto w = e.tensor.data();
        auto g = e.tensor.grad();
        auto mv = m.data();
        auto vv = v.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = config.beta1 * mv[i] + (1.0 - config.beta1) * gi;
            const double vi = config.beta2 * vv[i] + (1.0 - config.beta2) * gi * gi;
            mv[i] = static_cast<float>(mi);
            vv[i] = static_cast<float>(vi);
            const double update = (mi / c1) / (std::sqrt(vi / c2) + config.eps) + decay * w[i];
            w[i] = static_cast<float>(w[i] - lr * update);
        }
    }
    state.step = t;
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
    double sum_sq = 0.0;
    for (const auto& e : params) {
        if (!e.tensor.has_grad()) continue;
        for (float g : e.tensor.grad()) sum_sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sum_sq);
    if (std::isfinite(norm) && norm > max_norm) {
        const double factor = max_norm / norm;
        for (auto& e : params) {
            if (!e.tensor.has_grad()) continue;
            for (float& g : e.tensor.grad_buffer()) g = static_cast<float>(g * factor);
        }
    }
    return norm;
}

double lr_at(std::size_t step, const Schedule& s) {
    if (s.warmup_steps == 0) throw ContractError("lr_at: warmup_steps must be at least 1");
    if (step > s.total_steps) {
        throw ContractError(fmt::format("lr_at: step {} beyond total_steps {}", step, s.total_steps));
    }
    if (step <= s.warmup_steps) return s.peak * double(step) / double(s.warmup_steps);
    return s.peak * double(s.total_steps - step) / double(s.total_steps - s.warmup_steps);
}

double ppl(double loss) {
    return std::exp(loss);
}

std::string TrainReport::to_csv() const {
    std::string out = "step,lr,loss,ppl,seconds\n";
    for (const auto& r : records) out += fmt::format("{},{},{},{},{}\n", r.step, r.lr, r.loss, r.ppl, r.seconds);
    return out;
}

}  // namespace plm
