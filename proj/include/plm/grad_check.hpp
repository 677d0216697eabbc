#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "plm/tensor.hpp"

namespace plm {

template <typename T>
using ScalarFn = std::function<BasicTensor<T>(BasicTape<T>&, const BasicTensor<T>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Compares the tape gradient of f at x against central finite differences,
/// coordinate by coordinate. The error per coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// x is perturbed in place and restored; its gradient buffer is left empty.
template <typename T>
GradCheckResult grad_check_detailed(const ScalarFn<T>& f, BasicTensor<T> x, double eps = 1e-3) {
    const bool had_flag = x.requires_grad();
    x.set_requires_grad(true);
    x.drop_grad();
    std::vector<double> analytic(x.numel(), 0.0);
    {
        BasicTape<T> tape;
        auto y = f(tape, x);
        tape.backward(y);
        auto g = x.grad();
        std::copy(g.begin(), g.end(), analytic.begin());
    }
    x.drop_grad();
    x.set_requires_grad(had_flag);

    GradCheckResult result;
    auto values = x.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T original = values[i];
        const T plus = static_cast<T>(original + eps);
        const T minus = static_cast<T>(original - eps);
        auto tape = BasicTape<T>::inference();
        values[i] = plus;
        const double fp = f(tape, x).item();
        values[i] = minus;
        const double fm = f(tape, x).item();
        values[i] = original;
        // Use the representable step, not 2*eps.
        const double numeric = (fp - fm) / (static_cast<double>(plus) - static_cast<double>(minus));
        const double err =
            std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        if (err > result.max_rel_error || i == 0) {
            result = GradCheckResult{err, i, analytic[i], numeric};
        }
    }
    return result;
}

template <typename T>
double grad_check(const ScalarFn<T>& f, BasicTensor<T> x, double eps = 1e-3) {
    return grad_check_detailed(f, std::move(x), eps).max_rel_error;
}

}  // namespace plm
