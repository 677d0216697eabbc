#include "plm/tasks.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "plm/error.hpp"
#include "plm/metrics.hpp"
#include "plm/ops.hpp"

namespace plm {
namespace {

bool is_ss(TaskKind task) {
    return task == TaskKind::ss3 || task == TaskKind::ss8;
}

template <typename L>
const L& label_of(const ProteinRecord& rec, TaskKind task) {
    if (const auto* label = std::get_if<L>(&rec.label)) return *label;
    throw ContractError("record '" + rec.id + "' has no " + std::string(task_name(task)) + " label");
}

std::vector<TokenSequence> encode_all(std::span<const ProteinRecord> records) {
    std::vector<TokenSequence> seqs;
    seqs.reserve(records.size());
    for (const auto& rec : records) seqs.push_back(encode(rec.sequence));
    return seqs;
}

ContactMap leading_block(const ContactMap& map, std::size_t keep) {
    if (keep >= map.size) return map;
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    for (auto [i, j] : map.pairs()) {
        if (j < keep) kept.emplace_back(i, j);
    }
    auto mask = map.residue_mask();
    mask.resize(keep);
    return ContactMap::from_pairs(keep, kept, mask);
}

std::size_t batch_len(std::span<const ProteinRecord> records, std::size_t cap) {
    std::size_t longest = 0;
    for (const auto& rec : records) longest = std::max(longest, rec.sequence.size() + 2);
    return std::min(longest, cap);
}

}  // namespace

TaskBatch make_task_batch(std::span<const ProteinRecord> records, TaskKind task, std::size_t max_len) {
    if (records.empty()) throw ContractError("make_task_batch: no records");
    TaskBatch batch;
    batch.task = task;
    const auto seqs = encode_all(records);
    batch.tokens = collate(std::span<const TokenSequence>(seqs), max_len);
    const std::size_t l = batch.tokens.max_len;

    if (is_ss(task)) {
        const auto alphabet = ss_alphabet(task);
        batch.token_targets.assign(records.size() * l, 0);
        batch.token_select.assign(records.size() * l, 0);
        for (std::size_t b = 0; b < records.size(); ++b) {
            const auto& tags = label_of<TokenLabels>(records[b], task).tags;
            const std::size_t kept = batch.tokens.lengths[b] - 2;
            if (tags.size() < kept) throw ContractError("record '" + records[b].id + "': label shorter than sequence");
            for (std::size_t t = 0; t < kept; ++t) {
                const auto cls = alphabet.find(tags[t]);
                if (cls == std::string_view::npos) {
                    throw ContractError(fmt::format("record '{}': label '{}' not in {}", records[b].id, tags[t],
                                                    alphabet));
                }
                batch.token_targets[b * l + t + 1] = static_cast<TokenId>(cls);
                batch.token_select[b * l + t + 1] = 1;
            }
        }
    } else if (task == TaskKind::remote_homology) {
        for (const auto& rec : records) batch.classes.push_back(label_of<ClassLabel>(rec, task).index);
    } else if (task == TaskKind::contact) {
        for (std::size_t b = 0; b < records.size(); ++b) {
            const auto& map = label_of<ContactMap>(records[b], task);
            const std::size_t kept = std::min(batch.tokens.lengths[b] - 2, map.size);
            for (std::size_t i = 0; i < kept; ++i) {
                for (std::size_t j = i + 1; j < kept; ++j) {
                    if (!map.is_valid(i, j)) continue;
                    batch.pairs.push_back({b, i, j});
                    batch.pair_targets.push_back(map.is_contact(i, j));
                }
            }
        }
    } else {
        for (const auto& rec : records) batch.values.push_back(static_cast<float>(label_of<RealValue>(rec, task).value));
    }
    return batch;
}

template <typename T>
BasicTensor<T> task_loss(BasicTape<T>& tape, const BasicModel<T>& model, const TaskBatch& batch,
                         const ForwardOptions& options) {
    const auto out = encode(tape, model, batch.tokens, options);
    const std::size_t rows = batch.tokens.batch;
    if (is_ss(batch.task)) {
        const HeadKind kind = head_for_task(batch.task);
        auto logits = token_class_logits(tape, model, out, kind);
        logits = reshape(tape, logits, Shape{rows * batch.tokens.max_len, model.config.head_classes(kind)});
        return cross_entropy_masked(tape, logits, std::span<const TokenId>(batch.token_targets),
                                    std::span<const std::uint8_t>(batch.token_select));
    }
    if (batch.task == TaskKind::remote_homology) {
        const std::vector<std::uint8_t> all(rows, 1);
        return cross_entropy_masked(tape, seq_class_logits(tape, model, out),
                                    std::span<const TokenId>(batch.classes), std::span<const std::uint8_t>(all));
    }
    if (batch.task == TaskKind::contact) {
        auto logits = pair_contact_logits(tape, model, out, batch.tokens, std::span<const ResiduePair>(batch.pairs));
        const std::vector<std::uint8_t> all(batch.pairs.size(), 1);
        return bce_with_logits_masked(tape, logits, std::span<const std::uint8_t>(batch.pair_targets),
                                      std::span<const std::uint8_t>(all));
    }
    const std::vector<T> targets(batch.values.begin(), batch.values.end());
    return mse_loss(tape, regress_scalar(tape, model, out), std::span<const T>(targets));
}

template BasicTensor<float> task_loss(BasicTape<float>&, const BasicModel<float>&, const TaskBatch&,
                                      const ForwardOptions&);
template BasicTensor<double> task_loss(BasicTape<double>&, const BasicModel<double>&, const TaskBatch&,
                                       const ForwardOptions&);

TaskPredictions predict_task(const Model& model, std::span<const ProteinRecord> records, TaskKind task,
                             std::size_t batch_size, std::size_t max_len) {
    if (batch_size == 0) throw ContractError("predict_task: batch_size must be positive");
    TaskPredictions pred;
    pred.task = task;
    const std::size_t cap = std::min(max_len, model.config.max_positions);
    for (std::size_t start = 0; start < records.size(); start += batch_size) {
        const auto chunk = records.subspan(start, std::min(batch_size, records.size() - start));
        const auto seqs = encode_all(chunk);
        const TokenBatch tokens = collate(std::span<const TokenSequence>(seqs), batch_len(chunk, cap));
        const std::size_t l = tokens.max_len;
        Tape tape = Tape::inference();
        const auto out = encode(tape, model, tokens);

        if (is_ss(task)) {
            const HeadKind kind = head_for_task(task);
            const auto logits = token_class_logits(tape, model, out, kind);
            const std::size_t c = model.config.head_classes(kind);
            const auto alphabet = ss_alphabet(task);
            for (std::size_t b = 0; b < chunk.size(); ++b) {
                std::string tags;
                for (std::size_t t = 1; t + 1 < tokens.lengths[b]; ++t) {
                    const float* row = logits.data().data() + (b * l + t) * c;
                    tags.push_back(alphabet[static_cast<std::size_t>(std::max_element(row, row + c) - row)]);
                }
                pred.tags.push_back(std::move(tags));
            }
        } else if (task == TaskKind::remote_homology) {
            const auto logits = seq_class_logits(tape, model, out);
            const std::size_t c = logits.dim(1);
            for (std::size_t b = 0; b < chunk.size(); ++b) {
                const float* row = logits.data().data() + b * c;
                pred.classes.push_back(static_cast<int>(std::max_element(row, row + c) - row));
            }
        } else if (task == TaskKind::contact) {
            std::vector<ResiduePair> pairs;
            for (std::size_t b = 0; b < chunk.size(); ++b) {
                const std::size_t n = tokens.lengths[b] - 2;
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = i + 1; j < n; ++j) pairs.push_back({b, i, j});
                }
            }
            std::vector<std::vector<double>> maps(chunk.size());
            for (std::size_t b = 0; b < chunk.size(); ++b) {
                const std::size_t n = tokens.lengths[b] - 2;
                maps[b].assign(n * n, 0.0);
            }
            if (!pairs.empty()) {
                const auto logits = pair_contact_logits(tape, model, out, tokens, std::span<const ResiduePair>(pairs));
                for (std::size_t k = 0; k < pairs.size(); ++k) {
                    const auto& p = pairs[k];
                    const std::size_t n = tokens.lengths[p.row] - 2;
                    const double s = 1.0 / (1.0 + std::exp(-double(logits[k])));
                    maps[p.row][p.i * n + p.j] = s;
                    maps[p.row][p.j * n + p.i] = s;
                }
            }
            for (auto& m : maps) pred.contact_scores.push_back(std::move(m));
        } else {
            const auto y = regress_scalar(tape, model, out);
            for (std::size_t b = 0; b < chunk.size(); ++b) pred.values.push_back(y[b]);
        }
    }
    return pred;
}

std::vector<std::pair<std::string, double>> evaluate_task(const TaskPredictions& pred,
                                                          std::span<const ProteinRecord> records,
                                                          const ContactRange& range) {
    const TaskKind task = pred.task;
    if (records.empty()) throw ContractError("evaluate_task: no records");
    const auto count_check = [&](std::size_t n) {
        if (n != records.size()) {
            throw ContractError(fmt::format("evaluate_task: {} predictions for {} records", n, records.size()));
        }
    };
    if (is_ss(task)) {
        count_check(pred.tags.size());
        std::vector<int> p;
        std::vector<int> g;
        for (std::size_t r = 0; r < records.size(); ++r) {
            const auto& gold = label_of<TokenLabels>(records[r], task).tags;
            const auto& guess = pred.tags[r];
            if (guess.size() > gold.size()) {
                throw ContractError("evaluate_task: prediction longer than label for '" + records[r].id + "'");
            }
            for (std::size_t t = 0; t < guess.size(); ++t) {
                p.push_back(guess[t]);
                g.push_back(gold[t]);
            }
        }
        const std::vector<std::uint8_t> mask(p.size(), 1);
        return {{task == TaskKind::ss3 ? "Q3" : "Q8", token_accuracy(p, g, mask)}};
    }
    if (task == TaskKind::remote_homology) {
        count_check(pred.classes.size());
        std::vector<int> gold;
        for (const auto& rec : records) gold.push_back(label_of<ClassLabel>(rec, task).index);
        return {{"top1", top1_accuracy(pred.classes, gold)}};
    }
    if (task == TaskKind::contact) {
        count_check(pred.contact_scores.size());
        double sums[3] = {0.0, 0.0, 0.0};
        constexpr std::size_t kDivisors[3] = {5, 2, 1};
        std::size_t used = 0;
        for (std::size_t r = 0; r < records.size(); ++r) {
            const auto& scores = pred.contact_scores[r];
            const auto n = static_cast<std::size_t>(std::llround(std::sqrt(double(scores.size()))));
            const ContactMap truth = leading_block(label_of<ContactMap>(records[r], task), n);
            if (rank_pairs(scores, truth, range).empty()) continue;
            for (int d = 0; d < 3; ++d) sums[d] += contact_precision(scores, truth, kDivisors[d], range);
            ++used;
        }
        if (used == 0) throw ContractError("evaluate_task: no protein has candidate contact pairs");
        return {{"P@L/5", sums[0] / double(used)}, {"P@L/2", sums[1] / double(used)}, {"P@L", sums[2] / double(used)}};
    }
    count_check(pred.values.size());
    std::vector<double> gold;
    for (const auto& rec : records) gold.push_back(label_of<RealValue>(rec, task).value);
    return {{"spearman", spearman_rho(pred.values, gold)}};
}

}  // namespace plm
