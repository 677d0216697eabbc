#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "plm/corpus.hpp"
#include "plm/model.hpp"

namespace plm {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Decoupled (AdamW) decay; never applied to biases or layer-norm parameters.
    double weight_decay = 0.01;
};

/// First and second moments under the parameter names, plus the update count.
struct OptimizerState {
    std::size_t step = 0;
    ParameterSet m;
    ParameterSet v;
};

/// Whether weight decay applies to a parameter ("*.bias", "*.gamma", "*.beta" are exempt).
bool decays(std::string_view name) noexcept;

/// One bias-corrected Adam update of every parameter that requires grad.
/// Throws ContractError naming the first trainable tensor without a gradient.
void adam_step(ParameterSet& params, OptimizerState& state, double lr, const AdamConfig& config = {});

/// Scale all gradients so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

struct Schedule {
    double peak = 1e-3;
    std::size_t warmup_steps = 100;
    std::size_t total_steps = 1000;
};

/// Linear ramp 0 -> peak over warmup_steps, then linear decay to 0 at
/// total_steps. Throws ContractError outside [0, total_steps] or for warmup 0.
double lr_at(std::size_t step, const Schedule& schedule);

/// Perplexity of a mean cross-entropy: exp(loss).
double ppl(double loss);

struct TrainRecord {
    std::size_t step = 0;
    double lr = 0.0;
    /// Validation loss at this step.
    double loss = 0.0;
    double ppl = 0.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<TrainRecord> records;

    /// Header `step,lr,loss,ppl,seconds` and one line per record; reals use the
    /// shortest text that reads back to the same double.
    std::string to_csv() const;
};

struct TrainOptions {
    Schedule schedule;
    AdamConfig adam;
    std::size_t batch_size = 16;
    /// Tokens per row including [CLS]/[SEP]; capped at the model's max_positions.
    std::size_t max_len = 128;
    double clip_norm = 1.0;
    std::size_t report_every = 100;
    std::uint64_t seed = 0;
    std::function<void(const TrainRecord&)> on_report;
};

struct TrainResult {
    Model model;
    OptimizerState optimizer;
    TrainReport report;
};

struct PretrainOptions {
    ModelConfig model;
    TrainOptions train;
    double mask_rate = 0.15;
};

/// MLM pretraining: corrupt -> collate -> encode -> mlm_logits ->
/// cross_entropy_masked -> backward -> clip -> adam_step. The report holds the
/// validation loss at step 0, every report_every steps and at the end; an
/// empty `valid` evaluates on `train`. Throws DivergenceError on a non-finite loss.
TrainResult pretrain(std::span<const ProteinRecord> train, std::span<const ProteinRecord> valid,
                     const PretrainOptions& options);

/// Mean masked cross-entropy over `records` in eval mode, with masks drawn from `seed`.
double mlm_eval_loss(const Model& model, std::span<const ProteinRecord> records, std::size_t max_len,
                     std::size_t batch_size, std::uint64_t seed);

struct FinetuneOptions {
    TaskKind task = TaskKind::ss3;
    TrainOptions train;
    /// Architecture of a fresh model (ignored when a base model is given).
    ModelConfig model;
    std::optional<double> dropout;
};

/// Trains the encoder and the task's head (added if missing) end to end on the
/// head's loss. The MLM bias and other heads stay frozen. `base` null means a
/// fresh model. Throws ContractError if a record's label does not fit the task.
TrainResult finetune(const Model* base, std::span<const ProteinRecord> train, std::span<const ProteinRecord> valid,
                     const FinetuneOptions& options);

}  // namespace plm
