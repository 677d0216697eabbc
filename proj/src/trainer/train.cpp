#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <variant>

#include "plm/error.hpp"
#include "plm/masking.hpp"
#include "plm/random.hpp"
#include "plm/tasks.hpp"
#include "plm/trainer.hpp"

namespace plm {
namespace {

// Epoch-wise shuffled record order; a batch may straddle two epochs.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(make_rng(seed, {hash_name("sampler")})) {
        std::iota(order_.begin(), order_.end(), 0);
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    std::vector<std::size_t> next(std::size_t k) {
        std::vector<std::size_t> out;
        out.reserve(k);
        while (out.size() < k) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

std::size_t run_len(const TrainOptions& o, const ModelConfig& config) {
    const std::size_t len = std::min(o.max_len, config.max_positions);
    if (len < 3) throw ContractError("max_len must leave room for at least one residue");
    return len;
}

void check_options(const TrainOptions& o) {
    if (o.batch_size == 0) throw ContractError("batch_size must be positive");
    if (o.report_every == 0) throw ContractError("report_every must be positive");
    if (o.schedule.warmup_steps == 0) throw ContractError("warmup_steps must be at least 1");
}

// Log-odds of a contact among the valid training pairs a batch would hold.
// Starting a new contact head there keeps the first updates from pushing every
// pair logit toward the rare-positive prior through the shared encoder.
std::optional<double> contact_prior_logit(std::span<const ProteinRecord> records, std::size_t len) {
    std::size_t pairs = 0;
    std::size_t contacts = 0;
    for (const auto& rec : records) {
        const auto& map = std::get<ContactMap>(rec.label);
        const std::size_t kept = std::min({rec.sequence.size(), len - 2, map.size});
        for (std::size_t i = 0; i < kept; ++i) {
            for (std::size_t j = i + 1; j < kept; ++j) {
                if (!map.is_valid(i, j)) continue;
                ++pairs;
                contacts += map.is_contact(i, j) ? 1 : 0;
            }
        }
    }
    if (contacts == 0 || contacts == pairs) return std::nullopt;
    const double p = double(contacts) / double(pairs);
    return std::log(p / (1.0 - p));
}

// Non-finite activations surface inside the forward pass before the loss exists.
template <typename F>
auto guarded(std::size_t step, double lr, F&& f) {
    try {
        return f();
    } catch (const DivergenceError&) {
        throw;
    } catch (const NumericError& e) {
        throw DivergenceError(step, lr, e.what());
    }
}

template <typename BatchLoss, typename ValidLoss>
void run_loop(Model& model, OptimizerState& opt, TrainReport& report, const TrainOptions& o, BatchLoss batch_loss,
              ValidLoss valid_loss) {
    const auto start = std::chrono::steady_clock::now();
    const auto record = [&](std::size_t step) {
        const double lr = lr_at(step, o.schedule);
        const double loss = guarded(step, lr, valid_loss);
        if (!std::isfinite(loss)) throw DivergenceError(step, lr, "validation loss is not finite");
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        report.records.push_back({step, lr, loss, ppl(loss), seconds});
        if (o.on_report) o.on_report(report.records.back());
    };

    record(0);
    for (std::size_t step = 1; step <= o.schedule.total_steps; ++step) {
        const double lr = lr_at(step, o.schedule);
        for (auto& e : model.params) {
            if (e.tensor.requires_grad()) e.tensor.zero_grad();
        }
        Tape tape;
        const Tensor loss = guarded(step, lr, [&] { return batch_loss(tape, step); });
        if (!std::isfinite(loss.item())) throw DivergenceError(step, lr, "training loss is not finite");
        tape.backward(loss);
        tape.clear();
        const double norm = clip_grad_norm(model.params, o.clip_norm);
        if (!std::isfinite(norm)) throw DivergenceError(step, lr, "gradient norm is not finite");
        adam_step(model.params, opt, lr, o.adam);
        if (step % o.report_every == 0 || step == o.schedule.total_steps) record(step);
    }
}

std::vector<CorruptedSequence> corrupt_records(std::span<const ProteinRecord> records,
                                               std::span<const std::size_t> index, std::size_t max_len, double rate,
                                               Rng& rng) {
    std::vector<CorruptedSequence> out;
    out.reserve(index.size());
    for (std::size_t i : index) {
        out.push_back(corrupt(truncate(encode(records[i].sequence), max_len), rate, MaskProportions{}, rng));
    }
    return out;
}

std::size_t label_slot(TaskKind task) {
    switch (task) {
        case TaskKind::ss3:
        case TaskKind::ss8: return 1;
        case TaskKind::remote_homology: return 2;
        case TaskKind::contact: return 3;
        case TaskKind::fluorescence:
        case TaskKind::stability: return 4;
    }
    return 0;
}

bool trainable_for(std::string_view name, HeadKind head) {
    if (name.starts_with("embed.") || name.starts_with("layer.") || name.starts_with("final_ln.")) return true;
    return name.starts_with("head." + std::string(head_name(head)) + ".");
}

}  // namespace

double mlm_eval_loss(const Model& model, std::span<const ProteinRecord> records, std::size_t max_len,
                     std::size_t batch_size, std::uint64_t seed) {
    if (records.empty()) throw ContractError("mlm_eval_loss: no records");
    if (batch_size == 0) throw ContractError("mlm_eval_loss: batch_size must be positive");
    const std::size_t len = std::min(max_len, model.config.max_positions);
    double total = 0.0;
    std::size_t targets = 0;
    for (std::size_t start = 0, chunk = 0; start < records.size(); start += batch_size, ++chunk) {
        const std::size_t n = std::min(batch_size, records.size() - start);
        std::vector<std::size_t> index(n);
        std::iota(index.begin(), index.end(), start);
        Rng rng = make_rng(seed, {hash_name("eval-mask"), chunk});
        const auto rows = corrupt_records(records, index, len, kDefaultMaskRate, rng);
        const MaskedBatch batch = collate(std::span<const CorruptedSequence>(rows), len);
        Tape tape = Tape::inference();
        const double loss = mlm_loss(tape, model, batch).item();
        const auto selected = static_cast<std::size_t>(std::ranges::count(batch.target_mask, 1));
        total += loss * double(selected);
        targets += selected;
    }
    return total / double(targets);
}

TrainResult pretrain(std::span<const ProteinRecord> train, std::span<const ProteinRecord> valid,
                     const PretrainOptions& options) {
    if (train.empty()) throw ContractError("pretrain: empty training split");
    const TrainOptions& o = options.train;
    check_options(o);
    TrainResult result{init_model<float>(options.model, o.seed), {}, {}};
    const std::size_t len = run_len(o, result.model.config);
    const auto eval_set = valid.empty() ? train : valid;
    const std::uint64_t eval_seed = derive_seed(o.seed, {hash_name("valid")});
    BatchSampler sampler(train.size(), o.seed);

    const auto batch_loss = [&](Tape& tape, std::size_t step) {
        const auto index = sampler.next(o.batch_size);
        Rng rng = make_rng(o.seed, {hash_name("mask"), step});
        const auto rows = corrupt_records(train, index, len, options.mask_rate, rng);
        const MaskedBatch batch = collate(std::span<const CorruptedSequence>(rows), len);
        const ForwardOptions fwd{Mode::train, derive_seed(o.seed, {hash_name("dropout"), step})};
        return mlm_loss(tape, result.model, batch, fwd);
    };
    const auto valid_loss = [&] { return mlm_eval_loss(result.model, eval_set, len, o.batch_size, eval_seed); };
    run_loop(result.model, result.optimizer, result.report, o, batch_loss, valid_loss);
    return result;
}

TrainResult finetune(const Model* base, std::span<const ProteinRecord> train, std::span<const ProteinRecord> valid,
                     const FinetuneOptions& options) {
    if (train.empty()) throw ContractError("finetune: empty training split");
    const TrainOptions& o = options.train;
    check_options(o);
    const std::size_t slot = label_slot(options.task);
    for (const auto& set : {train, valid}) {
        for (const auto& rec : set) {
            if (rec.label.index() != slot) {
                throw ContractError("finetune: record '" + rec.id + "' does not carry a " +
                                    std::string(task_name(options.task)) + " label");
            }
        }
    }

    TrainResult result{base ? cast_model<float>(*base) : init_model<float>(options.model, o.seed), {}, {}};
    Model& model = result.model;
    if (options.dropout) {
        model.config.dropout = *options.dropout;
        model.config.validate();
    }
    const HeadKind head = head_for_task(options.task);
    const bool fresh_head = !model.config.has_head(head);
    add_head(model, head, derive_seed(o.seed, {hash_name("head")}));
    for (auto& e : model.params) e.tensor.set_requires_grad(trainable_for(e.name, head));

    const std::size_t len = run_len(o, model.config);
    if (fresh_head && head == HeadKind::contact) {
        if (const auto prior = contact_prior_logit(train, len)) {
            auto bias = model.params.get("head.contact.out.bias");
            bias.data()[0] = static_cast<float>(*prior);
        }
    }
    const auto eval_set = valid.empty() ? train : valid;
    BatchSampler sampler(train.size(), o.seed);

    const auto batch_loss = [&](Tape& tape, std::size_t step) {
        std::vector<ProteinRecord> rows;
        for (std::size_t i : sampler.next(o.batch_size)) rows.push_back(train[i]);
        const TaskBatch batch = make_task_batch(rows, options.task, len);
        const ForwardOptions fwd{Mode::train, derive_seed(o.seed, {hash_name("dropout"), step})};
        return task_loss(tape, model, batch, fwd);
    };
    const auto valid_loss = [&] {
        double total = 0.0;
        for (std::size_t start = 0; start < eval_set.size(); start += o.batch_size) {
            const auto chunk = eval_set.subspan(start, std::min(o.batch_size, eval_set.size() - start));
            const TaskBatch batch = make_task_batch(chunk, options.task, len);
            Tape tape = Tape::inference();
            total += double(task_loss(tape, model, batch).item()) * double(chunk.size());
        }
        return total / double(eval_set.size());
    };
    run_loop(model, result.optimizer, result.report, o, batch_loss, valid_loss);
    model.params.set_requires_grad(true);
    return result;
}

}  // namespace plm
