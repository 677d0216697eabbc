#pragma once

// Differentiable primitives. Every op takes the tape first; when the tape is
// recording and any input requires grad, the op appends its backward rule and
// the output requires grad too. All ops are pure functions of their inputs.

#include <cstddef>
#include <cstdint>
#include <span>

#include "plm/random.hpp"
#include "plm/tensor.hpp"

namespace plm {

inline constexpr double kDefaultLayerNormEps = 1e-5;

/// [m,k] x [k,n] -> [m,n]. Also accepts [g,m,k] x [g,k,n] (batched) and
/// [...,m,k] x [k,n] (leading axes folded into rows).
template <typename T>
BasicTensor<T> matmul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a + b where b's shape equals a's shape or a trailing suffix of it
/// (bias rows, position tables).
template <typename T>
BasicTensor<T> add(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Elementwise product of equal shapes.
template <typename T>
BasicTensor<T> mul(BasicTape<T>& tape, const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(BasicTape<T>& tape, const BasicTensor<T>& x, T factor);

/// Sum of all elements, as a rank-0 tensor.
template <typename T>
BasicTensor<T> sum(BasicTape<T>& tape, const BasicTensor<T>& x);

/// Swap the last two axes (rank 2 or 3).
template <typename T>
BasicTensor<T> transpose(BasicTape<T>& tape, const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> reshape(BasicTape<T>& tape, const BasicTensor<T>& x, Shape dims);

/// General axis permutation; output axis i is input axis perm[i].
template <typename T>
BasicTensor<T> permute(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const std::size_t> perm);

/// Rows [begin, end) of a rank-2 tensor.
template <typename T>
BasicTensor<T> slice_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::size_t begin, std::size_t end);

/// Row gather over the leading axes of x (x viewed as [N, last]).
template <typename T>
BasicTensor<T> gather_rows(BasicTape<T>& tape, const BasicTensor<T>& x, std::span<const std::size_t> rows);

/// Row gather from a [V,H] table by token id; backward scatter-adds.
template <typename T>
BasicTensor<T> embedding_lookup(BasicTape<T>& tape, const BasicTensor<T>& table,
                                std::span<const TokenId> ids);

/// Normalise over the last axis with the biased variance, then gamma*y + beta.
template <typename T>
BasicTensor<T> layer_norm(BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps = kDefaultLayerNormEps);

/// Softmax over the last axis, max-subtracted. -inf entries (masked) get
/// probability zero; NaN, +inf or an all -inf slice are errors.
template <typename T>
BasicTensor<T> softmax_last(BasicTape<T>& tape, const BasicTensor<T>& x);

/// Gaussian-error linear unit, tanh approximation.
template <typename T>
BasicTensor<T> gelu(BasicTape<T>& tape, const BasicTensor<T>& x);

/// keep[i] ? x[i] : value. Used for additive -inf attention masking.
template <typename T>
BasicTensor<T> masked_fill(BasicTape<T>& tape, const BasicTensor<T>& x,
                           std::span<const std::uint8_t> keep, T value);

/// Inverted dropout. Identity when rng is null or rate is zero.
template <typename T>
BasicTensor<T> dropout(BasicTape<T>& tape, const BasicTensor<T>& x, double rate, Rng* rng);

/// Mean of -log softmax(logits[n])[targets[n]] over rows with select[n] set.
/// Targets of unselected rows are never read.
template <typename T>
BasicTensor<T> cross_entropy_masked(BasicTape<T>& tape, const BasicTensor<T>& logits,
                                    std::span<const TokenId> targets,
                                    std::span<const std::uint8_t> select);

/// Mean binary cross-entropy with logits over selected elements.
template <typename T>
BasicTensor<T> bce_with_logits_masked(BasicTape<T>& tape, const BasicTensor<T>& logits,
                                      std::span<const std::uint8_t> targets,
                                      std::span<const std::uint8_t> select);

/// Mean squared error between pred (any shape, n elements) and n targets.
template <typename T>
BasicTensor<T> mse_loss(BasicTape<T>& tape, const BasicTensor<T>& pred, std::span<const T> targets);

}  // namespace plm
