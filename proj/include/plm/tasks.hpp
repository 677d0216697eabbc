#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plm/corpus.hpp"
#include "plm/metrics.hpp"
#include "plm/model.hpp"

namespace plm {

/// Model inputs and targets for one batch of task records.
struct TaskBatch {
    TaskKind task = TaskKind::ss3;
    TokenBatch tokens;
    /// ss3/ss8: class index per token position, selected on residues.
    std::vector<TokenId> token_targets;
    std::vector<std::uint8_t> token_select;
    /// homology: class per row.
    std::vector<TokenId> classes;
    /// contact: every valid i<j pair of each row and its truth.
    std::vector<ResiduePair> pairs;
    std::vector<std::uint8_t> pair_targets;
    /// fluorescence/stability: target per row.
    std::vector<float> values;
};

/// Throws ContractError when a record's label does not match the task.
TaskBatch make_task_batch(std::span<const ProteinRecord> records, TaskKind task, std::size_t max_len);

/// The loss each head trains on: token or sequence cross-entropy, mean BCE over
/// valid pairs, or mean squared error.
template <typename T>
BasicTensor<T> task_loss(BasicTape<T>& tape, const BasicModel<T>& model, const TaskBatch& batch,
                         const ForwardOptions& options = {});

struct TaskPredictions {
    TaskKind task = TaskKind::ss3;
    /// ss3/ss8: predicted label string per record.
    std::vector<std::string> tags;
    /// homology: argmax class per record.
    std::vector<int> classes;
    /// contact: symmetric L x L sigmoid scores per record, zero diagonal.
    std::vector<std::vector<double>> contact_scores;
    /// fluorescence/stability: prediction per record.
    std::vector<double> values;
};

/// Eval-mode predictions. Records longer than max_len - 2 residues are cut.
TaskPredictions predict_task(const Model& model, std::span<const ProteinRecord> records, TaskKind task,
                             std::size_t batch_size = 16, std::size_t max_len = 512);

/// Metric lines for a task, in print order: Q3 or Q8; top1; P@L/5, P@L/2, P@L;
/// spearman. Contact precision is the mean over proteins with candidates in
/// `range`.
std::vector<std::pair<std::string, double>> evaluate_task(const TaskPredictions& predictions,
                                                          std::span<const ProteinRecord> records,
                                                          const ContactRange& range = {});

}  // namespace plm
