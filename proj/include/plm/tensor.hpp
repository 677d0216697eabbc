#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace plm {

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

std::size_t shape_numel(const Shape& dims) noexcept;
std::string shape_to_string(const Shape& dims);

/// Dense row-major array with an optional gradient buffer.
///
/// A tensor is a handle: copies share the same storage, so a parameter held by
/// a ParameterSet and the same parameter captured by a tape entry see each
/// other's values and gradients. Use clone() for an independent copy.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    /// Rank-0 scalar holding zero.
    BasicTensor();
    explicit BasicTensor(Shape dims);
    BasicTensor(Shape dims, std::vector<T> values);

    static BasicTensor scalar(T value);
    static BasicTensor filled(Shape dims, T value);

    const Shape& dims() const noexcept { return s_->dims; }
    std::size_t rank() const noexcept { return s_->dims.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return s_->values.size(); }

    std::span<T> data() noexcept { return s_->values; }
    std::span<const T> data() const noexcept { return s_->values; }
    T& operator[](std::size_t i) noexcept { return s_->values[i]; }
    const T& operator[](std::size_t i) const noexcept { return s_->values[i]; }

    /// Value of a one-element tensor.
    T item() const;

    bool requires_grad() const noexcept { return s_->requires_grad; }
    BasicTensor& set_requires_grad(bool on = true) noexcept {
        s_->requires_grad = on;
        return *this;
    }

    bool has_grad() const noexcept { return s_->grad_set; }
    std::span<const T> grad() const noexcept { return s_->grad; }
    /// Gradient buffer, allocated (zero-filled) on first use. Callable on a
    /// const handle: accumulating into a gradient does not change the values.
    std::span<T> grad_buffer() const;
    void zero_grad();
    void drop_grad() noexcept;

    bool is_same(const BasicTensor& other) const noexcept { return s_ == other.s_; }
    BasicTensor clone() const;
    bool all_finite() const noexcept;

private:
    struct Storage {
        Shape dims;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
        bool grad_set = false;
    };
    std::shared_ptr<Storage> s_;
};

/// Ordered record of primitive applications. Entries are appended in execution
/// order, which is a topological order of the graph; backward() replays them in
/// reverse, visiting each exactly once.
template <typename T>
class BasicTape {
public:
    /// Receives the gradient of the entry's output and accumulates into inputs.
    using Rule = std::function<void(std::span<const T> grad_output)>;

    explicit BasicTape(bool recording = true) : recording_(recording) {}

    /// A tape that never records; ops run forward only.
    static BasicTape inference() { return BasicTape(false); }

    bool recording() const noexcept { return recording_; }
    std::size_t size() const noexcept { return entries_.size(); }
    void clear() noexcept { entries_.clear(); }

    void record(std::vector<BasicTensor<T>> inputs, BasicTensor<T> output, Rule rule);

    /// Seeds d(loss)/d(loss) = 1 and propagates to every tensor that requires
    /// grad. Gradients accumulate into existing buffers.
    void backward(const BasicTensor<T>& loss);

private:
    struct Entry {
        std::vector<BasicTensor<T>> inputs;
        BasicTensor<T> output;
        Rule rule;
    };
    std::vector<Entry> entries_;
    bool recording_;
};

template <typename T>
void backward(const BasicTensor<T>& loss, BasicTape<T>& tape) {
    tape.backward(loss);
}

using Tensor = BasicTensor<float>;
using Tape = BasicTape<float>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace plm
