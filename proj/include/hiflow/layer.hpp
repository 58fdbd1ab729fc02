#pragma once

#include <hiflow/attention.hpp>

#include <functional>

namespace hiflow {

inline constexpr double kLayerNormEps = 1e-6;

/// Convolutional FFN: 1x1 expand (C -> gamma*C), 3x3 depthwise, 1x1 project back to C.
template <class T>
struct ConvFfn {
    Conv<T> expand;
    Conv<T> depthwise;
    Conv<T> project;
    bool activation = true;     // GELU after expand and after the depthwise conv
    bool use_depthwise = true;  // false: "linear-FFN" mode, the depthwise conv becomes the identity

    static ConvFfn make(std::size_t c, std::size_t gamma, Rng& rng) {
        if (gamma == 0) throw ConfigError("conv_ffn: expansion ratio must be >= 1");
        const std::size_t hidden = gamma * c;
        return {Conv<T>::make(c, hidden, 1, rng), Conv<T>::make(hidden, hidden, 3, rng, hidden),
                Conv<T>::make(hidden, c, 1, rng)};
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        expand.visit(prefix + ".expand", true, f);
        depthwise.visit(prefix + ".dw", true, f);
        project.visit(prefix + ".project", true, f);
    }
};

template <class T>
Tensor<T> conv_ffn(const Tensor<T>& x, const ConvFfn<T>& ffn) {
    auto act = [&](const Tensor<T>& t) { return ffn.activation ? gelu(t) : t; };
    Tensor<T> h = act(ffn.expand(x));
    if (ffn.use_depthwise) h = act(ffn.depthwise(h));
    return ffn.project(h);
}

/// One hierarchical layer: x' = att(LN(x)) + x; out = ffn(LN(x')) + x'.
template <class T>
struct TIFMLayer {
    Norm<T> norm1, norm2;
    TifmAttention<T> att;
    ConvFfn<T> ffn;
    BranchScale<T> att_scale, ffn_scale;
    bool shift = false;

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        norm1.visit(prefix + ".norm1", f);
        att.visit(prefix + ".att", f);
        att_scale.visit(prefix + ".att_scale", f);
        norm2.visit(prefix + ".norm2", f);
        ffn.visit(prefix + ".ffn", f);
        ffn_scale.visit(prefix + ".ffn_scale", f);
    }
};

template <class T>
Tensor<T> hiir_layer(const Tensor<T>& x, const TIFMLayer<T>& layer, const WindowGeom& geom) {
    WindowGeom g = geom;
    g.shift = layer.shift ? geom.p / 2 : 0;
    const T eps = static_cast<T>(kLayerNormEps);
    const auto mid = add(layer.att_scale.apply(tifm_att(layer.norm1(x, eps), g, layer.att)), x);
    return add(layer.ffn_scale.apply(conv_ffn(layer.norm2(mid, eps), layer.ffn)), mid);
}

// ---------------------------------------------------------------------------
// Layer designs

enum class Design { V1, V2, V3, V4 };

inline std::string to_string(Design d) {
    switch (d) {
        case Design::V1: return "v1";
        case Design::V2: return "v2";
        case Design::V3: return "v3";
        case Design::V4: return "v4";
    }
    return "?";
}

/// Hyperparameters shared by every layer of a stack.
struct LayerOptions {
    std::size_t channels = 16;
    std::size_t heads = 2;
    std::size_t gamma = 2;
    ScoreKind score = ScoreKind::DotProduct;
    double tau = 0.1;
    std::size_t tree_grid = 2;
    bool shift = false;  // roll every other layer (every other L1/L2 pair in v1)
};

/// Per-layer recipe produced by build_variant.
struct LayerSpec {
    AttnVariant attention;
    bool shift = false;

    template <class T>
    TIFMLayer<T> instantiate(const LayerOptions& o, Rng& rng) const {
        TIFMLayer<T> l;
        l.norm1 = Norm<T>::make(o.channels);
        l.norm2 = Norm<T>::make(o.channels);
        l.att = TifmAttention<T>::make(attention, o.channels, o.heads, rng, o.score, static_cast<T>(o.tau),
                                       o.tree_grid);
        l.ffn = ConvFfn<T>::make(o.channels, o.gamma, rng);
        l.shift = shift;
        return l;
    }
};

/// Layer recipes for a stack of `depth` layers. v1 alternates L1/L2 layers, so two v1 layers
/// cover the attention scope of one v2/v3 layer.
inline std::vector<LayerSpec> build_variant(Design design, std::size_t depth, bool shift = false) {
    std::vector<LayerSpec> specs;
    for (std::size_t j = 0; j < depth; ++j) {
        switch (design) {
            case Design::V1:
                specs.push_back({j % 2 == 0 ? AttnVariant::V1_L1 : AttnVariant::V1_L2, shift && (j / 2) % 2 == 1});
                break;
            case Design::V2: specs.push_back({AttnVariant::V2, shift && j % 2 == 1}); break;
            case Design::V3: specs.push_back({AttnVariant::V3, shift && j % 2 == 1}); break;
            case Design::V4: specs.push_back({AttnVariant::V4, shift && j % 2 == 1}); break;
        }
    }
    return specs;
}

inline Design parse_design(const std::string& s) {
    if (s == "v1") return Design::V1;
    if (s == "v2") return Design::V2;
    if (s == "v3") return Design::V3;
    if (s == "v4") return Design::V4;
    throw ConfigError("unknown variant '" + s + "' (expected v1, v2, v3 or v4)");
}

template <class T>
std::vector<TIFMLayer<T>> make_layers(Design design, std::size_t depth, const LayerOptions& o, Rng& rng) {
    std::vector<TIFMLayer<T>> layers;
    for (const auto& spec : build_variant(design, depth, o.shift)) layers.push_back(spec.instantiate<T>(o, rng));
    return layers;
}

/// Number of trainable scalars reachable through a visitor-capable object.
template <class Module>
std::size_t count_trainable(Module& m) {
    std::size_t n = 0;
    m.visit("", [&](const ParamInfo& info, auto& t) {
        if (info.trainable) n += t.numel();
    });
    return n;
}

}  // namespace hiflow
