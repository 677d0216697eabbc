#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "plm/corpus.hpp"
#include "plm/masking.hpp"
#include "plm/tensor.hpp"

namespace plm {

/// Downstream heads. Each is a 2-layer MLP with GELU between the layers.
enum class HeadKind {
    ss3,      ///< per-token, 3 classes
    ss8,      ///< per-token, 8 classes
    fold,     ///< on [CLS], fold_classes classes
    contact,  ///< on [h_i ; h_j], one logit
    regress,  ///< on [CLS], one real value
};

std::string_view head_name(HeadKind kind) noexcept;
HeadKind parse_head_kind(std::string_view name);
HeadKind head_for_task(TaskKind task) noexcept;

struct ModelConfig {
    std::size_t hidden_size = 64;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    /// 0 means 4 * hidden_size.
    std::size_t ffn_size = 0;
    std::size_t max_positions = 512;
    std::size_t vocab_size = 30;
    double dropout = 0.1;
    /// Layer norm ahead of each sublayer plus a final norm; false gives the
    /// post-LN reference order without a final norm.
    bool pre_ln = true;
    double ln_eps = 1e-5;
    /// Hidden width of the head MLPs; 0 means hidden_size.
    std::size_t head_hidden = 0;
    int fold_classes = 1195;
    std::vector<HeadKind> heads;

    std::size_t ffn() const noexcept { return ffn_size ? ffn_size : 4 * hidden_size; }
    std::size_t head_width() const noexcept { return head_hidden ? head_hidden : hidden_size; }
    std::size_t head_dim() const noexcept { return hidden_size / num_heads; }
    bool has_head(HeadKind kind) const noexcept;
    std::size_t head_classes(HeadKind kind) const noexcept;

    /// Throws ConfigError (e.g. hidden_size not divisible by num_heads).
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// `key=value` lines in a fixed key order; parse_config_text inverts it exactly.
std::string config_text(const ModelConfig& config);
ModelConfig parse_config_text(std::string_view text);

/// Names of the ten grid presets, e.g. "hidden-2048-layer-24-head-16".
std::vector<std::string> preset_names();
/// Throws ConfigError for unknown names.
ModelConfig preset(std::string_view name);

/// Parameter count from the tensor shapes alone:
/// V*H + P*H + layers*(4H^2 + 4H + 2HF + F + H + 4H) + [pre_ln] 2H + V, plus heads.
std::size_t closed_form_parameter_count(const ModelConfig& config);

/// Shapes of every tensor the config owns, in canonical order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& config);
std::vector<std::pair<std::string, Shape>> layer_parameter_shapes(const ModelConfig& config, std::size_t layer);

/// Named tensors in insertion order.
template <typename T>
class BasicParameterSet {
public:
    struct Entry {
        std::string name;
        BasicTensor<T> tensor;
    };

    /// Throws ContractError on a duplicate name.
    BasicTensor<T>& add(std::string name, BasicTensor<T> tensor);
    /// Throws ContractError naming the missing tensor.
    const BasicTensor<T>& get(std::string_view name) const;
    const BasicTensor<T>* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t parameter_count() const noexcept;
    void zero_grad();
    void set_requires_grad(bool on);

    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }
    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

template <typename T>
struct BasicModel {
    ModelConfig config;
    BasicParameterSet<T> params;
};

using ParameterSet = BasicParameterSet<float>;
using Model = BasicModel<float>;

/// Value a freshly initialised tensor takes: Normal(0, 0.02^2) for weights and
/// embeddings, 0 for biases and betas, 1 for gammas. Seeded from (seed, name),
/// so any tensor can be regenerated on its own.
template <typename T>
BasicTensor<T> init_tensor(std::string_view name, const Shape& dims, std::uint64_t seed);

template <typename T>
BasicModel<T> init_model(const ModelConfig& config, std::uint64_t seed);

/// Add (and initialise) a head's parameters unless present.
template <typename T>
void add_head(BasicModel<T>& model, HeadKind kind, std::uint64_t seed);

/// Same model in another scalar type.
template <typename To, typename From>
BasicModel<To> cast_model(const BasicModel<From>& model);

enum class Mode { eval, train };

struct ForwardOptions {
    Mode mode = Mode::eval;
    /// Dropout stream; each (layer, site) pair draws from its own derived rng.
    std::uint64_t dropout_seed = 0;
};

template <typename T>
struct BasicEncoderOutput {
    /// [B, L, H], after the final norm in pre-LN mode.
    BasicTensor<T> hidden;
    /// [B, H], hidden at position 0.
    BasicTensor<T> cls;
};

using EncoderOutput = BasicEncoderOutput<float>;

/// Token + position embeddings (with dropout): [B, L, H].
template <typename T>
BasicTensor<T> embed(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                     const TokenBatch& batch, const ForwardOptions& options);

/// One encoder layer on [B, L, H]. `params` needs only this layer's tensors.
template <typename T>
BasicTensor<T> encoder_layer(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                             std::size_t layer, const BasicTensor<T>& x, std::span<const std::uint8_t> attention,
                             const ForwardOptions& options);

/// Final norm (pre-LN only) and the [CLS] slice.
template <typename T>
BasicEncoderOutput<T> finish(BasicTape<T>& tape, const BasicParameterSet<T>& params, const ModelConfig& config,
                             const BasicTensor<T>& x);

/// Full encoder. Throws ContractError if batch.max_len exceeds max_positions.
template <typename T>
BasicEncoderOutput<T> encode(BasicTape<T>& tape, const BasicModel<T>& model, const TokenBatch& batch,
                             const ForwardOptions& options = {});

/// hidden . token_embedding^T + mlm.bias: [B, L, V].
template <typename T>
BasicTensor<T> mlm_logits(BasicTape<T>& tape, const BasicParameterSet<T>& params, const BasicEncoderOutput<T>& out);

/// Per-token head: [B, L, C] with C = 3 (ss3) or 8 (ss8).
template <typename T>
BasicTensor<T> token_class_logits(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out,
                                  HeadKind kind);

/// Fold head on [CLS]: [B, fold_classes].
template <typename T>
BasicTensor<T> seq_class_logits(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out);

/// Residue pair (i, j) of batch row `row`; indices count residues, not tokens.
struct ResiduePair {
    std::size_t row = 0;
    std::size_t i = 0;
    std::size_t j = 0;
};

/// Symmetrised contact logits, one per pair: 0.5 * (MLP([h_i;h_j]) + MLP([h_j;h_i])).
/// Throws ContractError if an index falls outside the row's residues.
template <typename T>
BasicTensor<T> pair_contact_logits(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out,
                                   const TokenBatch& batch, std::span<const ResiduePair> pairs);

/// Regression head on [CLS]: [B].
template <typename T>
BasicTensor<T> regress_scalar(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out);

/// Mean masked cross-entropy of one MLM batch.
template <typename T>
BasicTensor<T> mlm_loss(BasicTape<T>& tape, const BasicModel<T>& model, const MaskedBatch& batch,
                        const ForwardOptions& options = {});

}  // namespace plm
