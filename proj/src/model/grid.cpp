#include "plm/grid.hpp"

#include <cmath>

#include "plm/error.hpp"
#include "plm/ops.hpp"

namespace plm {
namespace {

MaskedBatch random_batch(const ModelConfig& config, const GridStepOptions& options) {
    if (options.length < 3 || options.length > config.max_positions) {
        throw ContractError("grid_step: length must lie in [3, max_positions]");
    }
    Rng rng = make_rng(options.seed, {hash_name("grid/batch")});
    std::uniform_int_distribution<TokenId> residue(vocab::kFirstResidue, vocab::kFirstResidue + 19);
    std::vector<CorruptedSequence> rows;
    for (std::size_t b = 0; b < options.batch; ++b) {
        TokenSequence seq;
        seq.ids.push_back(vocab::kCls);
        for (std::size_t t = 0; t + 2 < options.length; ++t) seq.ids.push_back(residue(rng));
        seq.ids.push_back(vocab::kSep);
        rows.push_back(corrupt(seq, rng));
    }
    return collate(std::span<const CorruptedSequence>(rows), options.length);
}

struct GradStats {
    double sum_sq = 0.0;
    bool finite = true;

    void add(const ParameterSet& params) {
        for (const auto& e : params) {
            if (!e.tensor.has_grad()) continue;
            for (float g : e.tensor.grad()) {
                if (!std::isfinite(g)) finite = false;
                sum_sq += double(g) * double(g);
            }
        }
    }
};

ParameterSet materialize(const std::vector<std::pair<std::string, Shape>>& shapes, std::uint64_t seed) {
    ParameterSet params;
    for (const auto& [name, dims] : shapes) params.add(name, init_tensor<float>(name, dims, seed)).set_requires_grad();
    return params;
}

ForwardOptions step_options(std::uint64_t seed) {
    return {Mode::train, derive_seed(seed, {hash_name("grid/dropout")})};
}

GridStepResult in_memory(const ModelConfig& config, const GridStepOptions& options) {
    const Model model = init_model<float>(config, options.seed);
    const MaskedBatch batch = random_batch(config, options);
    Tape tape;
    auto loss = mlm_loss(tape, model, batch, step_options(options.seed));
    tape.backward(loss);
    GradStats stats;
    stats.add(model.params);
    return {model.params.parameter_count(), double(loss.item()), std::sqrt(stats.sum_sq),
            stats.finite && std::isfinite(loss.item()), false};
}

GridStepResult streamed(const ModelConfig& config, const GridStepOptions& options) {
    const MaskedBatch batch = random_batch(config, options);
    const ForwardOptions fwd = step_options(options.seed);
    const std::span<const std::uint8_t> attention(batch.input.attention);

    std::vector<std::pair<std::string, Shape>> outer;
    for (auto& entry : parameter_shapes(config)) {
        if (!entry.first.starts_with("layer.")) outer.push_back(std::move(entry));
    }
    ParameterSet top = materialize(outer, options.seed);
    std::size_t count = top.parameter_count();

    Tape embed_tape;
    const Tensor x0 = embed(embed_tape, top, config, batch.input, fwd);
    std::vector<Tensor> inputs;
    Tensor x = x0.clone();
    for (std::size_t layer = 0; layer < config.num_layers; ++layer) {
        const ParameterSet lp = materialize(layer_parameter_shapes(config, layer), options.seed);
        count += lp.parameter_count();
        Tape inference = Tape::inference();
        inputs.push_back(x);
        x = encoder_layer(inference, lp, config, layer, x, attention, fwd);
    }

    Tensor last = x.clone();
    last.set_requires_grad();
    Tape head_tape;
    auto out = finish(head_tape, top, config, last);
    auto logits = reshape(head_tape, mlm_logits(head_tape, top, out),
                          Shape{batch.input.batch * batch.input.max_len, config.vocab_size});
    auto loss = cross_entropy_masked(head_tape, logits, std::span<const TokenId>(batch.target_ids),
                                     std::span<const std::uint8_t>(batch.target_mask));
    head_tape.backward(loss);
    head_tape.clear();

    GradStats stats;
    Tensor upstream(last.dims(), std::vector<float>(last.grad().begin(), last.grad().end()));
    for (std::size_t layer = config.num_layers; layer-- > 0;) {
        const ParameterSet lp = materialize(layer_parameter_shapes(config, layer), options.seed);
        Tensor input = inputs[layer];
        input.set_requires_grad();
        Tape tape;
        auto y = encoder_layer(tape, lp, config, layer, input, attention, fwd);
        // d/dy of sum(y * g) is g, so backward carries the upstream gradient through the layer.
        tape.backward(sum(tape, mul(tape, y, upstream)));
        stats.add(lp);
        upstream = Tensor(input.dims(), std::vector<float>(input.grad().begin(), input.grad().end()));
        inputs[layer] = Tensor();
    }
    embed_tape.backward(sum(embed_tape, mul(embed_tape, x0, upstream)));
    stats.add(top);
    return {count, double(loss.item()), std::sqrt(stats.sum_sq), stats.finite && std::isfinite(loss.item()), true};
}

}  // namespace

GridStepResult grid_step(const ModelConfig& config, const GridStepOptions& options) {
    config.validate();
    if (options.batch == 0) throw ContractError("grid_step: batch must be positive");
    const std::size_t bytes = 2 * sizeof(float) * closed_form_parameter_count(config);
    if (options.force_streamed || bytes > options.memory_budget) return streamed(config, options);
    return in_memory(config, options);
}

}  // namespace plm
