#pragma once

#include <hiflow/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>

namespace hiflow {

/// Compares the analytic gradient of `loss` with respect to `leaf` against central
/// differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate.
///
/// The error of coordinate i is |a_i - n_i| / max(|a_i|, |n_i|, max_j |a_j|): relative to
/// the coordinate itself, but never to a scale below the largest gradient entry, so
/// round-off on near-zero entries does not dominate.
template <class T>
double grad_check_leaf(const std::function<Tensor<T>()>& loss, Tensor<T>& leaf, double h = 1e-6) {
    if constexpr (precision_of<T>() != Precision::F64) {
        throw ContractError("grad_check requires F64 tensors");
    } else {
        if (!(h >= 1e-7 && h <= 1e-4)) throw ContractError("grad_check: step h must lie in [1e-7, 1e-4]");
        const bool was = leaf.requires_grad();
        leaf.set_requires_grad(true);
        leaf.zero_grad();
        std::vector<double> analytic(leaf.numel(), 0.0);
        {
            const Tensor<T> y = loss();
            if (y.numel() != 1)
                throw ContractError("grad_check: function output must be scalar, got " + to_string(y.shape()));
            y.backward();
            if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
        }
        double scale = 0;
        for (double a : analytic) scale = std::max(scale, std::abs(a));
        double worst = 0;
        NoGradGuard guard;
        for (std::size_t i = 0; i < leaf.numel(); ++i) {
            const T v = leaf[i];
            leaf[i] = v + T(h);
            const double fp = loss().item();
            leaf[i] = v - T(h);
            const double fm = loss().item();
            leaf[i] = v;
            const double numeric = (fp - fm) / (2 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), scale, 1e-300});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
        leaf.zero_grad();
        leaf.set_requires_grad(was);
        return worst;
    }
}

/// grad_check for a function of a single tensor argument.
template <class T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x, double h = 1e-6) {
    return grad_check_leaf<T>([&] { return f(x); }, x, h);
}

}  // namespace hiflow
