#include <fmt/format.h>

#include "plm/error.hpp"
#include "plm/model.hpp"
#include "plm/ops.hpp"

namespace plm {
namespace {

template <typename T>
const BasicParameterSet<T>& require_head(const BasicModel<T>& model, HeadKind kind) {
    if (!model.config.has_head(kind)) {
        throw ContractError("model has no '" + std::string(head_name(kind)) + "' head");
    }
    return model.params;
}

// 2-layer MLP: x . W1 + b1 -> GELU -> . W2 + b2.
template <typename T>
BasicTensor<T> head_mlp(BasicTape<T>& tape, const BasicParameterSet<T>& params, HeadKind kind,
                        const BasicTensor<T>& x) {
    const std::string p = "head." + std::string(head_name(kind)) + ".";
    auto h = add(tape, matmul(tape, x, params.get(p + "hidden.weight")), params.get(p + "hidden.bias"));
    h = gelu(tape, h);
    return add(tape, matmul(tape, h, params.get(p + "out.weight")), params.get(p + "out.bias"));
}

}  // namespace

template <typename T>
BasicTensor<T> token_class_logits(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out,
                                  HeadKind kind) {
    if (kind != HeadKind::ss3 && kind != HeadKind::ss8) {
        throw ConfigError("token_class_logits needs the ss3 or ss8 head, got " + std::string(head_name(kind)));
    }
    return head_mlp(tape, require_head(model, kind), kind, out.hidden);
}

template <typename T>
BasicTensor<T> seq_class_logits(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out) {
    return head_mlp(tape, require_head(model, HeadKind::fold), HeadKind::fold, out.cls);
}

template <typename T>
BasicTensor<T> regress_scalar(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out) {
    auto y = head_mlp(tape, require_head(model, HeadKind::regress), HeadKind::regress, out.cls);
    return reshape(tape, y, Shape{out.cls.dim(0)});
}

template <typename T>
BasicTensor<T> pair_contact_logits(BasicTape<T>& tape, const BasicModel<T>& model, const BasicEncoderOutput<T>& out,
                                   const TokenBatch& batch, std::span<const ResiduePair> pairs) {
    const auto& params = require_head(model, HeadKind::contact);
    if (pairs.empty()) throw ContractError("pair_contact_logits: no pairs requested");
    const std::size_t b = out.hidden.dim(0);
    const std::size_t l = out.hidden.dim(1);
    const std::size_t h = out.hidden.dim(2);
    const std::size_t n = pairs.size();

    // Row k of [U | V] applied to [h_i ; h_j] splits as h_i . W1[:H] + h_j . W1[H:],
    // so project every position once and gather per pair.
    std::vector<std::size_t> left(2 * n);
    std::vector<std::size_t> right(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& pr = pairs[k];
        if (pr.row >= b) throw ContractError(fmt::format("contact pair {}: row {} outside batch {}", k, pr.row, b));
        const std::size_t residues = batch.lengths[pr.row] - 2;
        if (pr.i >= residues || pr.j >= residues) {
            throw ContractError(fmt::format("contact pair ({},{}) outside the {} residues of row {}", pr.i, pr.j,
                                            residues, pr.row));
        }
        const std::size_t ti = pr.row * l + pr.i + 1;
        const std::size_t tj = pr.row * l + pr.j + 1;
        left[k] = ti;
        right[k] = tj;
        left[n + k] = tj;
        right[n + k] = ti;
    }
    const std::string p = "head.contact.";
    const auto& w1 = params.get(p + "hidden.weight");
    auto flat = reshape(tape, out.hidden, Shape{b * l, h});
    auto u = matmul(tape, flat, slice_rows(tape, w1, 0, h));
    auto v = matmul(tape, flat, slice_rows(tape, w1, h, 2 * h));
    auto z = add(tape, gather_rows(tape, u, std::span<const std::size_t>(left)),
                 gather_rows(tape, v, std::span<const std::size_t>(right)));
    z = gelu(tape, add(tape, z, params.get(p + "hidden.bias")));
    auto logits = add(tape, matmul(tape, z, params.get(p + "out.weight")), params.get(p + "out.bias"));
    auto sym = scale(tape, add(tape, slice_rows(tape, logits, 0, n), slice_rows(tape, logits, n, 2 * n)), T(0.5));
    return reshape(tape, sym, Shape{n});
}

#define PLM_INSTANTIATE_HEADS(T)                                                                                  \
    template BasicTensor<T> token_class_logits(BasicTape<T>&, const BasicModel<T>&, const BasicEncoderOutput<T>&, \
                                               HeadKind);                                                        \
    template BasicTensor<T> seq_class_logits(BasicTape<T>&, const BasicModel<T>&, const BasicEncoderOutput<T>&);  \
    template BasicTensor<T> regress_scalar(BasicTape<T>&, const BasicModel<T>&, const BasicEncoderOutput<T>&);    \
    template BasicTensor<T> pair_contact_logits(BasicTape<T>&, const BasicModel<T>&, const BasicEncoderOutput<T>&, \
                                                const TokenBatch&, std::span<const ResiduePair>);

PLM_INSTANTIATE_HEADS(float)
PLM_INSTANTIATE_HEADS(double)

#undef PLM_INSTANTIATE_HEADS

}  // namespace plm
