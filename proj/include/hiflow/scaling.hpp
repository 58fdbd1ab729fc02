#pragma once

#include <hiflow/layer.hpp>

#include <cmath>
#include <fstream>
#include <utility>

namespace hiflow {

// ---------------------------------------------------------------------------
// Fan computation and initialization schemes

struct Fan {
    std::size_t in = 0;
    std::size_t out = 0;
};

/// fan_in = c_in * k^2, fan_out = c_out * k^2.
constexpr Fan fan(std::size_t c_in, std::size_t c_out, std::size_t k) { return {c_in * k * k, c_out * k * k}; }

inline double kaiming_std(std::size_t fan_in) { return std::sqrt(2.0 / double(fan_in)); }
inline double xavier_std(std::size_t fan_in, std::size_t fan_out) { return std::sqrt(2.0 / double(fan_in + fan_out)); }

struct InitScheme {
    enum class Kind { Default, KaimingFan, XavierFan, ZeroLayerNorm, ResidualRescale, WeightRescale, TruncNormal };

    Kind kind = Kind::Default;
    double factor = 1.0;  // ResidualRescale / WeightRescale multiplier
    double std = kDefaultWeightStd;
    double a = -2.0, b = 2.0;  // TruncNormal bounds (absolute)
    std::uint64_t seed = 0;

    static InitScheme kaiming(std::uint64_t seed = 0) { return {Kind::KaimingFan, 1.0, 0, 0, 0, seed}; }
    static InitScheme xavier(std::uint64_t seed = 0) { return {Kind::XavierFan, 1.0, 0, 0, 0, seed}; }
    static InitScheme zero_layer_norm(std::uint64_t seed = 0) {
        return {Kind::ZeroLayerNorm, 1.0, kDefaultWeightStd, -2, 2, seed};
    }
    static InitScheme residual_rescale(double f = 0.01, std::uint64_t seed = 0) {
        return {Kind::ResidualRescale, f, kDefaultWeightStd, -2, 2, seed};
    }
    static InitScheme weight_rescale(double f = 0.1, std::uint64_t seed = 0) {
        return {Kind::WeightRescale, f, 0, 0, 0, seed};
    }
    static InitScheme trunc_normal(double std, double a, double b, std::uint64_t seed = 0) {
        return {Kind::TruncNormal, 1.0, std, a, b, seed};
    }
    static InitScheme default_scheme(std::uint64_t seed = 0) {
        return {Kind::Default, 1.0, kDefaultWeightStd, -2 * kDefaultWeightStd, 2 * kDefaultWeightStd, seed};
    }

    void validate() const {
        if (!(factor > 0)) throw ConfigError("init scheme: rescale factor must be positive");
        if ((kind == Kind::TruncNormal || kind == Kind::Default) && !(a < b))
            throw ConfigError("init scheme: truncation bounds need a < b");
        if ((kind == Kind::TruncNormal || kind == Kind::Default || kind == Kind::ZeroLayerNorm ||
             kind == Kind::ResidualRescale) &&
            !(std > 0))
            throw ConfigError("init scheme: std must be positive");
    }
};

inline std::string to_string(InitScheme::Kind k) {
    switch (k) {
        case InitScheme::Kind::Default: return "default";
        case InitScheme::Kind::KaimingFan: return "kaiming";
        case InitScheme::Kind::XavierFan: return "xavier";
        case InitScheme::Kind::ZeroLayerNorm: return "zero_ln";
        case InitScheme::Kind::ResidualRescale: return "residual_rescale";
        case InitScheme::Kind::WeightRescale: return "weight_rescale";
        case InitScheme::Kind::TruncNormal: return "trunc_normal";
    }
    return "?";
}

inline InitScheme parse_init_scheme(const std::string& name, std::uint64_t seed = 0) {
    if (name == "default") return InitScheme::default_scheme(seed);
    if (name == "kaiming") return InitScheme::kaiming(seed);
    if (name == "xavier") return InitScheme::xavier(seed);
    if (name == "zero_ln") return InitScheme::zero_layer_norm(seed);
    if (name == "residual_rescale") return InitScheme::residual_rescale(0.01, seed);
    if (name == "weight_rescale") return InitScheme::weight_rescale(0.1, seed);
    if (name == "trunc_normal") return InitScheme::trunc_normal(kDefaultWeightStd, -2.0, 2.0, seed);
    throw ConfigError("unknown init scheme '" + name + "'");
}

/// Standard deviation the scheme draws a weight from (before any rescaling).
inline double target_std(const ParamInfo& info, const InitScheme& s) {
    switch (s.kind) {
        case InitScheme::Kind::KaimingFan:
        case InitScheme::Kind::WeightRescale: return kaiming_std(info.fan_in);
        case InitScheme::Kind::XavierFan: return xavier_std(info.fan_in, info.fan_out);
        default: return s.std;
    }
}

/// Re-initializes every parameter of `module` according to `scheme`; deterministic in scheme.seed.
template <class Module>
void apply_init(Module& module, const InitScheme& scheme) {
    scheme.validate();
    Rng rng(scheme.seed);
    module.visit("", [&](const ParamInfo& info, auto& t) {
        using T = typename std::decay_t<decltype(t)>::value_type;
        auto fill = [&](T v) { std::fill(t.data().begin(), t.data().end(), v); };
        switch (info.role) {
            case ParamRole::Bias: fill(T(0)); break;
            case ParamRole::NormScale:
                fill(scheme.kind == InitScheme::Kind::ZeroLayerNorm ? T(0) : T(1));
                break;
            case ParamRole::NormShift: fill(T(0)); break;
            case ParamRole::BranchScale:
                fill(scheme.kind == InitScheme::Kind::ResidualRescale ? static_cast<T>(scheme.factor) : T(1));
                break;
            case ParamRole::Weight: {
                const double sd = target_std(info, scheme);
                const bool truncated = scheme.kind == InitScheme::Kind::TruncNormal ||
                                       scheme.kind == InitScheme::Kind::Default ||
                                       scheme.kind == InitScheme::Kind::ZeroLayerNorm ||
                                       scheme.kind == InitScheme::Kind::ResidualRescale;
                const double lo = scheme.kind == InitScheme::Kind::TruncNormal ? scheme.a : -2.0 * sd;
                const double hi = scheme.kind == InitScheme::Kind::TruncNormal ? scheme.b : 2.0 * sd;
                const double mult =
                    scheme.kind == InitScheme::Kind::WeightRescale && info.residual ? scheme.factor : 1.0;
                for (auto& v : t.data())
                    v = static_cast<T>(mult * (truncated ? rng.trunc_normal(0.0, sd, lo, hi) : rng.normal(0.0, sd)));
                break;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Learning-rate schedule

/// Linear warmup to base_lr, then piecewise-constant multipliers from each milestone onward.
struct WarmupSchedule {
    double base_lr = 2e-4;
    long warmup_iters = 0;
    std::vector<std::pair<long, double>> milestones;  // (iteration, absolute multiplier)

    void validate() const {
        if (!(base_lr > 0)) throw ConfigError("schedule: base_lr must be positive");
        if (warmup_iters < 0) throw ConfigError("schedule: warmup_iters must be >= 0");
        double prev = 1.0;
        long prev_it = -1;
        for (const auto& [it, m] : milestones) {
            if (it <= prev_it) throw ConfigError("schedule: milestones must be strictly increasing");
            if (m > prev || !(m > 0)) throw ConfigError("schedule: milestone multipliers must be nonincreasing");
            prev = m;
            prev_it = it;
        }
    }
};

/// lr(0) = base/warmup, lr(i) = base * i/warmup up to warmup, base afterwards until the first milestone.
inline double lr_at(const WarmupSchedule& s, long iter) {
    if (iter < 0) throw ContractError("lr_at: iteration must be >= 0");
    if (iter < s.warmup_iters) {
        const long step = std::max(iter, 1L);
        return s.base_lr * double(step) / double(s.warmup_iters);
    }
    double mult = 1.0;
    for (const auto& [it, m] : s.milestones)
        if (iter >= it) mult = m;
    return s.base_lr * mult;
}

/// Warmup of `warmup` iterations, then halving at 50%, 75% and 90% of `total`.
inline WarmupSchedule standard_schedule(double base_lr, long total, long warmup) {
    WarmupSchedule s{base_lr, warmup, {}};
    const long ms[3] = {total / 2, total * 3 / 4, total * 9 / 10};
    double m = 1.0;
    long prev = -1;
    for (long it : ms) {
        m *= 0.5;
        if (it > prev && it > warmup) s.milestones.emplace_back(it, m);
        prev = it;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Gradient-magnitude instrumentation

struct GradStat {
    std::string layer;
    std::string param;
    double grad_max = 0;
    double grad_mean = 0;
    double grad_l2 = 0;
};

struct GradReport {
    std::vector<GradStat> rows;

    double max_abs() const {
        double m = 0;
        for (const auto& r : rows) m = std::max(m, r.grad_max);
        return m;
    }
    /// Largest |grad| over rows whose parameter name contains `needle`.
    double max_abs_matching(const std::string& needle) const {
        double m = 0;
        for (const auto& r : rows)
            if (r.param.find(needle) != std::string::npos) m = std::max(m, r.grad_max);
        return m;
    }
    double mean_abs() const {
        double s = 0;
        for (const auto& r : rows) s += r.grad_mean;
        return rows.empty() ? 0 : s / double(rows.size());
    }

    void write_csv(std::ostream& os) const {
        os << "layer_name,param_name,grad_max,grad_mean,grad_l2\n";
        os.precision(10);
        for (const auto& r : rows)
            os << r.layer << ',' << r.param << ',' << r.grad_max << ',' << r.grad_mean << ',' << r.grad_l2 << '\n';
    }
};

/// Backpropagates `loss` once and tabulates gradient magnitudes of every trainable parameter of
/// `module`. Names split at the first dot into layer and parameter.
template <class Module, class LossFn>
GradReport grad_magnitude_probe(Module& module, LossFn&& loss) {
    module.visit("", [](const ParamInfo& info, auto& t) {
        t.zero_grad();
        t.set_requires_grad(info.trainable);
    });
    const auto l = loss();
    l.backward();
    GradReport rep;
    module.visit("", [&](const ParamInfo& info, auto& t) {
        if (!info.trainable) return;
        GradStat st;
        const auto dot = info.name.find('.');
        st.layer = info.name.substr(0, dot);
        st.param = dot == std::string::npos ? "" : info.name.substr(dot + 1);
        double sum = 0, sq = 0;
        if (t.has_grad())
            for (const auto g : t.grad()) {
                const double a = std::abs(double(g));
                st.grad_max = std::max(st.grad_max, a);
                sum += a;
                sq += a * a;
            }
        st.grad_mean = sum / double(t.numel());
        st.grad_l2 = std::sqrt(sq);
        rep.rows.push_back(st);
        t.zero_grad();
    });
    return rep;
}

/// A plain stack of hierarchical layers, the subject of the attention-gradient study.
template <class T>
struct LayerStack {
    std::vector<TIFMLayer<T>> layers;
    WindowGeom geom;

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (const auto& l : layers) h = hiir_layer(h, l, geom);
        return h;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        const std::string p = prefix.empty() ? "" : prefix + ".";
        for (std::size_t j = 0; j < layers.size(); ++j) layers[j].visit(p + "layer" + std::to_string(j), f);
    }
};

struct StackProbeOptions {
    std::size_t depth = 8;
    ScoreKind score = ScoreKind::DotProduct;
    double query_scale = 1.0;  // multiplies every query projection
    std::size_t channels = 16;
    std::size_t heads = 2;
    std::size_t p = 2, s = 2;
    std::size_t extent = 8;  // H = W
    std::uint64_t seed = 0;
};

/// Builds a `depth`-layer v3 stack in F64 (weights depend only on seed, not on the score kind),
/// runs a fixed random linear readout of its output and reports parameter-gradient magnitudes.
inline GradReport attention_stack_probe(const StackProbeOptions& o) {
    Rng rng(o.seed);
    LayerOptions lo;
    lo.channels = o.channels;
    lo.heads = o.heads;
    lo.score = o.score;
    LayerStack<double> stack;
    stack.geom = {o.extent, o.extent, o.p, o.s, 0};
    stack.layers = make_layers<double>(Design::V3, o.depth, lo, rng);
    if (o.query_scale != 1.0)
        for (auto& l : stack.layers)
            for (auto& lv : l.att.levels) {
                for (auto& v : lv.wq.weight.data()) v *= o.query_scale;
                for (auto& v : lv.wq.bias.data()) v *= o.query_scale;
            }
    Rng data_rng(o.seed ^ 0x9e3779b97f4a7c15ULL);
    const auto x = randn<double>({1, o.extent, o.extent, o.channels}, data_rng);
    const auto readout = randn<double>({1, o.extent, o.extent, o.channels}, data_rng);
    return grad_magnitude_probe(stack, [&] { return sum(mul(stack(x), readout)); });
}

/// Mean ratio |dscore/dq|(scaled q) / |dscore/dq|(q) over random pairs of dimension d.
struct ScoreGradientScaling {
    double mean_ratio = 0;
    double min_ratio = 0;
    double max_ratio = 0;
};

inline ScoreGradientScaling score_gradient_scaling(ScoreKind kind, double query_scale, std::size_t d,
                                                   std::size_t trials, std::uint64_t seed) {
    Rng rng(seed);
    ScoreGradientScaling r{0, 1e300, 0};
    auto norm = [](const Tensor<double>& t) {
        double s = 0;
        for (double v : t.data()) s += v * v;
        return std::sqrt(s);
    };
    for (std::size_t i = 0; i < trials; ++i) {
        const auto q = randn<double>({d}, rng);
        const auto k = randn<double>({d}, rng);
        const auto base = norm(score_gradients(q, k, kind));
        const auto scaled = norm(score_gradients(scale(q, query_scale), k, kind));
        const double ratio = scaled / base;
        r.mean_ratio += ratio / double(trials);
        r.min_ratio = std::min(r.min_ratio, ratio);
        r.max_ratio = std::max(r.max_ratio, ratio);
    }
    return r;
}

}  // namespace hiflow
