#pragma once

#include <hiflow/ops.hpp>
#include <hiflow/random.hpp>

#include <string>

namespace hiflow {

enum class ParamRole { Weight, Bias, NormScale, NormShift, BranchScale };

/// Metadata handed to parameter visitors alongside each tensor.
struct ParamInfo {
    std::string name;
    ParamRole role = ParamRole::Weight;
    std::size_t fan_in = 0;   // c_in * k^2 for weights
    std::size_t fan_out = 0;  // c_out * k^2 for weights
    bool residual = false;    // lives inside a residual branch
    bool trainable = true;
};

inline constexpr double kDefaultWeightStd = 0.02;

template <class T>
Tensor<T> trunc_normal_tensor(Shape shape, Rng& rng, double std) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.trunc_normal(0.0, std, -2.0 * std, 2.0 * std));
    return t;
}

/// Dense map along the last axis: weight (Cin, Cout), bias (Cout).
template <class T>
struct Projection {
    Tensor<T> weight;
    Tensor<T> bias;

    static Projection make(std::size_t cin, std::size_t cout, Rng& rng) {
        return {trunc_normal_tensor<T>({cin, cout}, rng, kDefaultWeightStd), Tensor<T>::zeros({cout})};
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, std::optional<Tensor<T>>(bias)); }

    template <class F>
    void visit(const std::string& prefix, bool residual, F&& f) {
        f(ParamInfo{prefix + ".weight", ParamRole::Weight, in_features(), out_features(), residual}, weight);
        f(ParamInfo{prefix + ".bias", ParamRole::Bias, 0, 0, residual}, bias);
    }
};

/// Same-padded conv on (B,H,W,C): weight (k, k, Cin/groups, Cout), bias (Cout).
template <class T>
struct Conv {
    Tensor<T> weight;
    Tensor<T> bias;
    std::size_t groups = 1;

    static Conv make(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng, std::size_t groups = 1) {
        if (groups == 0 || cin % groups != 0 || cout % groups != 0)
            throw ConfigError("conv: groups must divide both channel counts");
        return {trunc_normal_tensor<T>({k, k, cin / groups, cout}, rng, kDefaultWeightStd), Tensor<T>::zeros({cout}),
                groups};
    }

    std::size_t kernel() const { return weight.dim(0); }
    std::size_t in_channels() const { return weight.dim(2) * groups; }
    std::size_t out_channels() const { return weight.dim(3); }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return conv2d(x, weight, std::optional<Tensor<T>>(bias), groups);
    }

    template <class F>
    void visit(const std::string& prefix, bool residual, F&& f) {
        const std::size_t k2 = kernel() * kernel();
        f(ParamInfo{prefix + ".weight", ParamRole::Weight, weight.dim(2) * k2, out_channels() * k2, residual}, weight);
        f(ParamInfo{prefix + ".bias", ParamRole::Bias, 0, 0, residual}, bias);
    }
};

template <class T>
struct Norm {
    Tensor<T> gamma;
    Tensor<T> beta;

    static Norm make(std::size_t c) { return {Tensor<T>::full({c}, T(1)), Tensor<T>::zeros({c})}; }

    Tensor<T> operator()(const Tensor<T>& x, T eps) const { return layer_norm(x, gamma, beta, eps); }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        f(ParamInfo{prefix + ".weight", ParamRole::NormScale}, gamma);
        f(ParamInfo{prefix + ".bias", ParamRole::NormShift}, beta);
    }
};

/// Non-trainable multiplier on a residual branch (1 unless a rescaling scheme sets it).
template <class T>
struct BranchScale {
    Tensor<T> value = Tensor<T>::full({1}, T(1));

    Tensor<T> apply(const Tensor<T>& branch) const {
        const T s = value[0];
        return s == T(1) ? branch : scale(branch, s);
    }

    template <class F>
    void visit(const std::string& name, F&& f) {
        f(ParamInfo{name, ParamRole::BranchScale, 0, 0, true, false}, value);
    }
};

}  // namespace hiflow
