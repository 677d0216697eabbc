#include "plm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ranges>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "plm/error.hpp"

namespace plm {
namespace {

#if defined(__GLIBC__)
// Activation buffers are freed and reallocated every step. Keeping them on the
// heap instead of fresh mmap pages avoids a page-fault storm per step.
const int kAllocatorTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return 0;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& dims) noexcept {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& dims) {
    std::string out = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(dims[i]);
    }
    return out + "]";
}

template <typename T>
BasicTensor<T>::BasicTensor() : BasicTensor(Shape{}) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape dims) : s_(std::make_shared<Storage>()) {
    s_->values.assign(shape_numel(dims), T{0});
    s_->dims = std::move(dims);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape dims, std::vector<T> values) : s_(std::make_shared<Storage>()) {
    if (shape_numel(dims) != values.size()) {
        throw DimensionError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_to_string(dims));
    }
    s_->dims = std::move(dims);
    s_->values = std::move(values);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
    return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::filled(Shape dims, T value) {
    BasicTensor t(std::move(dims));
    std::ranges::fill(t.s_->values, value);
    return t;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(dims()));
    }
    return s_->dims[axis];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_to_string(dims()));
    }
    return s_->values[0];
}

template <typename T>
std::span<T> BasicTensor<T>::grad_buffer() const {
    if (!s_->grad_set) {
        s_->grad.assign(s_->values.size(), T{0});
        s_->grad_set = true;
    }
    return s_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    std::ranges::fill(grad_buffer(), T{0});
}

template <typename T>
void BasicTensor<T>::drop_grad() noexcept {
    s_->grad.clear();
    s_->grad.shrink_to_fit();
    s_->grad_set = false;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor(s_->dims, s_->values);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
    return std::ranges::all_of(s_->values, [](T v) { return std::isfinite(v); });
}

template <typename T>
void BasicTape<T>::record(std::vector<BasicTensor<T>> inputs, BasicTensor<T> output, Rule rule) {
    if (!recording_) return;
    entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(rule)});
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            shape_to_string(loss.dims()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not depend on any tensor that requires grad");
    }
    auto seed = loss.grad_buffer();
    seed[0] += T{1};
    for (auto& entry : std::views::reverse(entries_)) {
        if (!entry.output.has_grad()) continue;
        entry.rule(entry.output.grad());
    }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class BasicTape<float>;
template class BasicTape<double>;

}  // namespace plm
