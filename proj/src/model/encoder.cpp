#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "plm/error.hpp"
#include "plm/model.hpp"
#include "plm/ops.hpp"

namespace plm {
namespace {

// Dropout sites within a layer; the embedding uses its own layer slot.
enum Site : std::uint64_t { kSiteEmbed = 0, kSiteAttnProbs = 1, kSiteAttnOut = 2, kSiteFfnOut = 3 };

template <typename T>
BasicTensor<T> drop(BasicTape<T>& tape, const BasicTensor<T>& x, const ModelConfig& config,
                    const ForwardOptions& options, std::uint64_t layer, Site site) {
    if (options.mode != Mode::train || config.dropout == 0.0) return x;
    Rng rng = make_rng(options.dropout_seed, {layer, site});
    return dropout(tape, x, config.dropout, &rng);
}

template <typename T>
BasicTensor<T> affine(BasicTape<T>& tape, const BasicParameterSet<T>& params, const std::string& prefix,
                      const BasicTensor<T>& x) {
    return add(tape, matmul(tape, x, params.get(prefix + ".weight")), params.get(prefix + ".bias"));
}

// [B, L, H] -> [B*nh, L, dh]
template <typename T>
BasicTensor<T> split_heads(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t b, std::size_t l,
                           std::size_t nh, std::size_t dh) {
    static constexpr std::array<std::size_t, 4> kPerm = {0, 2, 1, 3};
    auto r = reshape(tape, x, Shape{b, l, nh, dh});
    return reshape(tape, permute(tape, r, std::span<const std::size_t>(kPerm)), Shape{b * nh, l, dh});
}

// [B*nh, L, dh] -> [B, L, H]
template <typename T>
BasicTensor<T> merge_heads(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t b, std::size_t l,
                           std::size_t nh, std::size_t dh) {
    static constexpr std::array<std::size_t, 4> kPerm = {0, 2, 1, 3};
    auto r = reshape(tape, x, Shape{b, nh, l, dh});
    return reshape(tape, permute(tape, r, std::span<const std::size_t>(kPerm)), Shape{b, l, nh * dh});
}

template <typename T>
BasicTensor<T> attention(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                         std::size_t layer, const BasicTensor<T>& x, std::span<const std::uint8_t> keep_keys,
                         const ForwardOptions& options) {
    const std::size_t b = x.dim(0);
    const std::size_t l = x.dim(1);
    const std::size_t nh = config.num_heads;
    const std::size_t dh = config.head_dim();
    const std::string p = fmt::format("layer.{}.attn.", layer);

    auto q = split_heads(tape, affine(tape, params, p + "q", x), b, l, nh, dh);
    auto k = split_heads(tape, affine(tape, params, p + "k", x), b, l, nh, dh);
    auto v = split_heads(tape, affine(tape, params, p + "v", x), b, l, nh, dh);

    auto scores = scale(tape, matmul(tape, q, transpose(tape, k)), static_cast<T>(1.0 / std::sqrt(double(dh))));
    // Pad keys get -inf so they receive exactly zero probability.
    std::vector<std::uint8_t> keep(b * nh * l * l);
    for (std::size_t g = 0; g < b * nh; ++g) {
        const std::uint8_t* row_keep = keep_keys.data() + (g / nh) * l;
        for (std::size_t i = 0; i < l; ++i) std::copy(row_keep, row_keep + l, keep.begin() + (g * l + i) * l);
    }
    scores = masked_fill(tape, scores, keep, -std::numeric_limits<T>::infinity());
    auto probs = drop(tape, softmax_last(tape, scores), config, options, layer + 1, kSiteAttnProbs);
    auto ctx = merge_heads(tape, matmul(tape, probs, v), b, l, nh, dh);
    return affine(tape, params, p + "out", ctx);
}

template <typename T>
BasicTensor<T> feed_forward(BasicTape<T>& tape, const BasicParameterSet<T>& params, std::size_t layer,
                            const BasicTensor<T>& x) {
    const std::string p = fmt::format("layer.{}.ffn.", layer);
    return affine(tape, params, p + "out", gelu(tape, affine(tape, params, p + "in", x)));
}

template <typename T>
BasicTensor<T> norm(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                    const std::string& prefix, const BasicTensor<T>& x) {
    return layer_norm(tape, x, params.get(prefix + ".gamma"), params.get(prefix + ".beta"), config.ln_eps);
}

}  // namespace

template <typename T>
BasicTensor<T> embed(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                     const TokenBatch& batch, const ForwardOptions& options) {
    if (batch.max_len > config.max_positions) {
        throw ContractError(fmt::format("batch length {} exceeds max_positions {}", batch.max_len,
                                        config.max_positions));
    }
    if (batch.ids.size() != batch.batch * batch.max_len || batch.attention.size() != batch.ids.size()) {
        throw ContractError("embed: batch buffers do not match batch x max_len");
    }
    const std::size_t h = config.hidden_size;
    auto tokens = embedding_lookup(tape, params.get("embed.token"), std::span<const TokenId>(batch.ids));
    tokens = reshape(tape, tokens, Shape{batch.batch, batch.max_len, h});
    auto positions = slice_rows(tape, params.get("embed.position"), 0, batch.max_len);
    return drop(tape, add(tape, tokens, positions), config, options, 0, kSiteEmbed);
}

template <typename T>
BasicTensor<T> encoder_layer(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                             std::size_t layer, const BasicTensor<T>& x, std::span<const std::uint8_t> attention_mask,
                             const ForwardOptions& options) {
    const std::string p = fmt::format("layer.{}.", layer);
    const std::uint64_t slot = layer + 1;
    if (config.pre_ln) {
        auto a = attention(tape, params, config, layer, norm(tape, params, config, p + "ln1", x), attention_mask,
                           options);
        auto y = add(tape, x, drop(tape, a, config, options, slot, kSiteAttnOut));
        auto f = feed_forward(tape, params, layer, norm(tape, params, config, p + "ln2", y));
        return add(tape, y, drop(tape, f, config, options, slot, kSiteFfnOut));
    }
    auto a = attention(tape, params, config, layer, x, attention_mask, options);
    auto y = norm(tape, params, config, p + "ln1", add(tape, x, drop(tape, a, config, options, slot, kSiteAttnOut)));
    auto f = feed_forward(tape, params, layer, y);
    return norm(tape, params, config, p + "ln2", add(tape, y, drop(tape, f, config, options, slot, kSiteFfnOut)));
}

template <typename T>
BasicEncoderOutput<T> finish(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                             const BasicTensor<T>& x) {
    const std::size_t b = x.dim(0);
    const std::size_t l = x.dim(1);
    const std::size_t h = x.dim(2);
    BasicEncoderOutput<T> out;
    out.hidden = config.pre_ln ? norm(tape, params, config, "final_ln", x) : x;
    std::vector<std::size_t> rows(b);
    for (std::size_t i = 0; i < b; ++i) rows[i] = i * l;
    out.cls = gather_rows(tape, reshape(tape, out.hidden, Shape{b * l, h}), std::span<const std::size_t>(rows));
    return out;
}

template <typename T>
BasicEncoderOutput<T> encode(BasicTape<T>& tape, const BasicModel<T>& model, const TokenBatch& batch,
                             const ForwardOptions& options) {
    auto x = embed(tape, model.params, model.config, batch, options);
    for (std::size_t layer = 0; layer < model.config.num_layers; ++layer) {
        x = encoder_layer(tape, model.params, model.config, layer, x, std::span<const std::uint8_t>(batch.attention),
                          options);
    }
    return finish(tape, model.params, model.config, x);
}

template <typename T>
BasicTensor<T> mlm_logits(BasicTape<T>& tape, const BasicParameterSet<T>& params, const BasicEncoderOutput<T>& out) {
    auto weights = transpose(tape, params.get("embed.token"));
    return add(tape, matmul(tape, out.hidden, weights), params.get("mlm.bias"));
}

template <typename T>
BasicTensor<T> mlm_loss(BasicTape<T>& tape, const BasicModel<T>& model, const MaskedBatch& batch,
                        const ForwardOptions& options) {
    auto out = encode(tape, model, batch.input, options);
    auto logits = mlm_logits(tape, model.params, out);
    const std::size_t v = model.config.vocab_size;
    logits = reshape(tape, logits, Shape{batch.input.batch * batch.input.max_len, v});
    return cross_entropy_masked(tape, logits, std::span<const TokenId>(batch.target_ids),
                                std::span<const std::uint8_t>(batch.target_mask));
}

#define PLM_INSTANTIATE_ENCODER(T)                                                                                 \
    template BasicTensor<T> embed(BasicTape<T>&, const BasicParameterSet<T>&, const ModelConfig&,                  \
                                  const TokenBatch&, const ForwardOptions&);                                       \
    template BasicTensor<T> encoder_layer(BasicTape<T>&, const BasicParameterSet<T>&, const ModelConfig&,          \
                                          std::size_t, const BasicTensor<T>&, std::span<const std::uint8_t>,       \
                                          const ForwardOptions&);                                                  \
    template BasicEncoderOutput<T> finish(BasicTape<T>&, const BasicParameterSet<T>&, const ModelConfig&,          \
                                          const BasicTensor<T>&);                                                  \
    template BasicEncoderOutput<T> encode(BasicTape<T>&, const BasicModel<T>&, const TokenBatch&,                  \
                                          const ForwardOptions&);                                                  \
    template BasicTensor<T> mlm_logits(BasicTape<T>&, const BasicParameterSet<T>&, const BasicEncoderOutput<T>&);  \
    template BasicTensor<T> mlm_loss(BasicTape<T>&, const BasicModel<T>&, const MaskedBatch&, const ForwardOptions&);

PLM_INSTANTIATE_ENCODER(float)
PLM_INSTANTIATE_ENCODER(double)

#undef PLM_INSTANTIATE_ENCODER

}  // namespace plm
