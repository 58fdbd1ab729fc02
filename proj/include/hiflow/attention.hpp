#pragma once

#include <hiflow/params.hpp>

#include <cmath>
#include <string>

namespace hiflow {

enum class ScoreKind { DotProduct, CosineSim };

/// Attention scope of one layer: L1 only, L2 only (alternating design), L1 -> projection -> L2,
/// L1 -> L2 with a shared input projection and halved Q/K, or the shared design plus a third level.
enum class AttnVariant { V1_L1, V1_L2, V2, V3, V4 };

inline std::string to_string(ScoreKind k) { return k == ScoreKind::DotProduct ? "dot" : "cosine"; }

inline std::string to_string(AttnVariant v) {
    switch (v) {
        case AttnVariant::V1_L1: return "v1_L1";
        case AttnVariant::V1_L2: return "v1_L2";
        case AttnVariant::V2: return "v2";
        case AttnVariant::V3: return "v3";
        case AttnVariant::V4: return "v4";
    }
    return "?";
}

/// Spatial tiling of one layer. An L1 window is p x p pixels; an s x s grid of windows forms a
/// P x P block (P = s*p) inside which L2 attention runs.
struct WindowGeom {
    std::size_t H = 0, W = 0;
    std::size_t p = 1;
    std::size_t s = 1;
    std::size_t shift = 0;  // cyclic roll in pixels, 0 or p/2

    std::size_t P() const { return s * p; }

    void validate(std::size_t extra_grid = 1) const {
        if (p == 0 || s == 0) throw GeometryError("window geometry: p and s must be positive");
        const std::size_t block = P() * extra_grid;
        if (H == 0 || W == 0 || H % block != 0 || W % block != 0)
            throw GeometryError("window geometry: " + std::to_string(H) + "x" + std::to_string(W) +
                                " is not divisible by block side " + std::to_string(block));
        if (shift != 0 && shift != p / 2) throw GeometryError("window geometry: shift must be 0 or p/2");
    }

    WindowGeom with_extent(std::size_t h, std::size_t w) const {
        WindowGeom g = *this;
        g.H = h;
        g.W = w;
        return g;
    }
};

// ---------------------------------------------------------------------------
// Token regrouping

/// Gather index that regroups (B,H,W,C) into (B*(H/Q)*(W/Q)*patch^2, grid^2, C) with Q = patch*grid:
/// each group collects the grid x grid pixels of one Q x Q block that share the same offset inside
/// their patch x patch cell. patch == 1 gives plain window partitioning with window side `grid`.
inline std::vector<std::size_t> block_group_index(std::size_t B, std::size_t H, std::size_t W, std::size_t C,
                                                  std::size_t patch, std::size_t grid) {
    const std::size_t Q = patch * grid;
    if (Q == 0 || H % Q != 0 || W % Q != 0)
        throw GeometryError("token grouping: " + std::to_string(H) + "x" + std::to_string(W) +
                            " is not divisible by " + std::to_string(Q));
    const std::size_t nbh = H / Q, nbw = W / Q;
    std::vector<std::size_t> idx(B * H * W * C);
    std::size_t t = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t by = 0; by < nbh; ++by)
            for (std::size_t bx = 0; bx < nbw; ++bx)
                for (std::size_t iy = 0; iy < patch; ++iy)
                    for (std::size_t ix = 0; ix < patch; ++ix)
                        for (std::size_t gy = 0; gy < grid; ++gy)
                            for (std::size_t gx = 0; gx < grid; ++gx) {
                                const std::size_t y = by * Q + gy * patch + iy;
                                const std::size_t x = bx * Q + gx * patch + ix;
                                const std::size_t base = ((b * H + y) * W + x) * C;
                                for (std::size_t c = 0; c < C; ++c) idx[t++] = base + c;
                            }
    return idx;
}

inline std::vector<std::size_t> invert_index(const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> inv(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) inv[idx[i]] = i;
    return inv;
}

template <class T>
Tensor<T> group_tokens(const Tensor<T>& x, std::size_t patch, std::size_t grid) {
    if (x.rank() != 4) throw DimensionError("group_tokens: expected (B,H,W,C), got " + to_string(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    auto idx = block_group_index(B, H, W, C, patch, grid);
    const std::size_t Q = patch * grid;
    return gather(x, Shape{B * (H / Q) * (W / Q) * patch * patch, grid * grid, C}, std::move(idx));
}

template <class T>
Tensor<T> ungroup_tokens(const Tensor<T>& tokens, std::size_t B, std::size_t H, std::size_t W, std::size_t patch,
                         std::size_t grid) {
    if (tokens.rank() != 3) throw DimensionError("ungroup_tokens: expected (G,T,C)");
    const std::size_t C = tokens.dim(2);
    if (tokens.numel() != B * H * W * C) throw DimensionError("ungroup_tokens: token count mismatch");
    return gather(tokens, Shape{B, H, W, C}, invert_index(block_group_index(B, H, W, C, patch, grid)));
}

/// (B,H,W,C) -> (B*HW/p^2, p^2, C); window index runs row-major over the window grid,
/// slot index row-major inside the window.
template <class T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowGeom& geom) {
    return group_tokens(x, 1, geom.p);
}

template <class T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowGeom& geom, std::size_t B) {
    return ungroup_tokens(windows, B, geom.H, geom.W, 1, geom.p);
}

/// (B,H,W,C) -> (B*(H/P)*(W/P)*p^2, s^2, C): each group is the stride-p lattice of one P x P block.
template <class T>
Tensor<T> l2_permute(const Tensor<T>& x, const WindowGeom& geom) {
    return group_tokens(x, geom.p, geom.s);
}

template <class T>
Tensor<T> l2_unpermute(const Tensor<T>& groups, const WindowGeom& geom, std::size_t B) {
    return ungroup_tokens(groups, B, geom.H, geom.W, geom.p, geom.s);
}

// ---------------------------------------------------------------------------
// Multi-head attention

/// Projections of one attention level. Query/key width may be half the value width (v3/v4);
/// levels that consume another level's output carry no value/output projection.
template <class T>
struct AttentionParams {
    std::size_t heads = 1;
    Projection<T> wq, wk;
    std::optional<Projection<T>> wv, wo;
    ScoreKind score = ScoreKind::DotProduct;
    T tau = T(0.1);

    static AttentionParams make(std::size_t c, std::size_t heads, Rng& rng, ScoreKind score = ScoreKind::DotProduct,
                                bool half_qk = false, bool with_value = true, T tau = T(0.1)) {
        const std::size_t cqk = half_qk ? c / 2 : c;
        if (heads == 0 || c % heads != 0 || cqk % heads != 0 || cqk == 0)
            throw ConfigError("attention: " + std::to_string(c) + " channels (" + std::to_string(cqk) +
                              " for Q/K) do not split into " + std::to_string(heads) + " heads");
        if (!(tau > 0)) throw ConfigError("attention: tau must be positive");
        AttentionParams a;
        a.heads = heads;
        a.score = score;
        a.tau = tau;
        a.wq = Projection<T>::make(c, cqk, rng);
        a.wk = Projection<T>::make(c, cqk, rng);
        if (with_value) {
            a.wv = Projection<T>::make(c, c, rng);
            a.wo = Projection<T>::make(c, c, rng);
        }
        return a;
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        wq.visit(prefix + ".q", true, f);
        wk.visit(prefix + ".k", true, f);
        if (wv) wv->visit(prefix + ".v", true, f);
        if (wo) wo->visit(prefix + ".o", true, f);
    }
};

namespace detail {
/// (G,T,h*d) -> (G,h,T,d)
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    const std::size_t G = x.dim(0), Tn = x.dim(1), C = x.dim(2);
    if (C % heads != 0) throw ConfigError("attention: channels not divisible by heads");
    Shape os;
    auto idx = permute_index(Shape{G, Tn, heads, C / heads}, {0, 2, 1, 3}, &os);
    return gather(x, std::move(os), std::move(idx));
}

/// (G,h,T,d) -> (G,T,h*d)
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    const std::size_t G = x.dim(0), h = x.dim(1), Tn = x.dim(2), d = x.dim(3);
    Shape os;
    auto idx = permute_index(x.shape(), {0, 2, 1, 3}, &os);
    return gather(x, Shape{G, Tn, h * d}, std::move(idx));
}
}  // namespace detail

/// Softmax attention weights (G,h,T,T) for queries/keys (G,T,h*d).
/// Dot product scales by 1/sqrt(d); cosine similarity normalizes q and k and divides by tau.
template <class T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads, ScoreKind kind, T tau) {
    if (q.rank() != 3 || q.shape() != k.shape())
        throw DimensionError("attention: query/key shapes " + to_string(q.shape()) + " and " + to_string(k.shape()));
    auto qh = detail::split_heads(q, heads);
    auto kh = detail::split_heads(k, heads);
    const std::size_t d = qh.shape().back();
    T factor;
    if (kind == ScoreKind::CosineSim) {
        qh = l2_normalize_lastdim(qh);
        kh = l2_normalize_lastdim(kh);
        factor = T(1) / tau;
    } else {
        factor = T(1) / std::sqrt(static_cast<T>(d));
    }
    return softmax_lastdim(scale(matmul(qh, transpose_last2(kh)), factor));
}

/// Per-group multi-head attention core: q,k (G,T,h*dq), v (G,T,h*dv) -> (G,T,h*dv).
template <class T>
Tensor<T> attend(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads, ScoreKind kind,
                 T tau) {
    if (v.rank() != 3 || v.dim(0) != q.dim(0) || v.dim(1) != q.dim(1))
        throw DimensionError("attention: value shape " + to_string(v.shape()) + " does not match queries " +
                             to_string(q.shape()));
    const auto weights = attention_weights(q, k, heads, kind, tau);
    return detail::merge_heads(matmul(weights, detail::split_heads(v, heads)));
}

/// Full multi-head self-attention over token groups (G,T,C).
template <class T>
Tensor<T> mha(const Tensor<T>& tokens, const AttentionParams<T>& params) {
    if (tokens.rank() != 3) throw DimensionError("mha: expected (G,T,C), got " + to_string(tokens.shape()));
    if (!params.wv || !params.wo) throw ConfigError("mha: level has no value/output projection");
    const std::size_t C = tokens.dim(2);
    if (params.heads == 0 || C % params.heads != 0)
        throw ConfigError("mha: " + std::to_string(C) + " channels not divisible by " +
                          std::to_string(params.heads) + " heads");
    const auto y = attend(params.wq(tokens), params.wk(tokens), (*params.wv)(tokens), params.heads, params.score,
                          params.tau);
    return (*params.wo)(y);
}

// ---------------------------------------------------------------------------
// Hierarchical attention

/// Attention parameters of one layer. `levels` holds one entry for v1_*, two for v2/v3 and three
/// for v4. In v3/v4 only levels[0] owns value and output projections; the Q/K projections of all
/// levels read the same layer input (one shared projection, stored per level).
template <class T>
struct TifmAttention {
    AttnVariant variant = AttnVariant::V3;
    std::vector<AttentionParams<T>> levels;
    std::size_t tree_grid = 2;  // grid side of the v4 third level

    std::size_t level_count() const { return levels.size(); }

    static TifmAttention make(AttnVariant variant, std::size_t c, std::size_t heads, Rng& rng,
                              ScoreKind score = ScoreKind::DotProduct, T tau = T(0.1), std::size_t tree_grid = 2) {
        TifmAttention a;
        a.variant = variant;
        a.tree_grid = tree_grid;
        switch (variant) {
            case AttnVariant::V1_L1:
            case AttnVariant::V1_L2:
                a.levels.push_back(AttentionParams<T>::make(c, heads, rng, score, false, true, tau));
                break;
            case AttnVariant::V2:
                a.levels.push_back(AttentionParams<T>::make(c, heads, rng, score, false, true, tau));
                a.levels.push_back(AttentionParams<T>::make(c, heads, rng, score, false, true, tau));
                break;
            case AttnVariant::V3:
            case AttnVariant::V4: {
                const std::size_t n = variant == AttnVariant::V3 ? 2 : 3;
                for (std::size_t i = 0; i < n; ++i)
                    a.levels.push_back(AttentionParams<T>::make(c, heads, rng, score, true, i == 0, tau));
                break;
            }
        }
        return a;
    }

    /// Block side that input extents must divide.
    std::size_t block_side(const WindowGeom& g) const {
        return variant == AttnVariant::V4 ? g.P() * tree_grid : g.P();
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        for (std::size_t i = 0; i < levels.size(); ++i) levels[i].visit(prefix + ".l" + std::to_string(i + 1), f);
    }
};

/// L1 (window) and L2 (permuted cross-window) attention on (B,H,W,C) per the layer's variant.
/// Output has the input's shape; the caller adds the residual.
template <class T>
Tensor<T> tifm_att(const Tensor<T>& input, const WindowGeom& geom_in, const TifmAttention<T>& att) {
    if (input.rank() != 4) throw DimensionError("tifm_att: expected (B,H,W,C), got " + to_string(input.shape()));
    const std::size_t B = input.dim(0);
    const WindowGeom geom = geom_in.with_extent(input.dim(1), input.dim(2));
    geom.validate(att.variant == AttnVariant::V4 ? att.tree_grid : 1);
    const long sh = long(geom.shift);
    const Tensor<T> x = sh ? roll_hw(input, sh, sh) : input;
    const std::size_t H = geom.H, W = geom.W;

    auto run_level = [&](const Tensor<T>& img, const AttentionParams<T>& lv, std::size_t patch, std::size_t grid) {
        return ungroup_tokens(mha(group_tokens(img, patch, grid), lv), B, H, W, patch, grid);
    };

    Tensor<T> y;
    switch (att.variant) {
        case AttnVariant::V1_L1: y = run_level(x, att.levels.at(0), 1, geom.p); break;
        case AttnVariant::V1_L2: y = run_level(x, att.levels.at(0), geom.p, geom.s); break;
        case AttnVariant::V2:
            y = run_level(run_level(x, att.levels.at(0), 1, geom.p), att.levels.at(1), geom.p, geom.s);
            break;
        case AttnVariant::V3:
        case AttnVariant::V4: {
            const auto& l0 = att.levels.at(0);
            if (!l0.wv || !l0.wo) throw ConfigError("tifm_att: first level needs value/output projections");
            // (patch, grid) per level: L1 windows, L2 lattice of the P-block, then the next tree level.
            const std::size_t patches[3] = {1, geom.p, geom.P()};
            const std::size_t grids[3] = {geom.p, geom.s, att.tree_grid};
            Tensor<T> value = (*l0.wv)(x);
            for (std::size_t i = 0; i < att.levels.size(); ++i) {
                const auto& lv = att.levels[i];
                const auto q = group_tokens(lv.wq(x), patches[i], grids[i]);
                const auto k = group_tokens(lv.wk(x), patches[i], grids[i]);
                const auto v = group_tokens(value, patches[i], grids[i]);
                value = ungroup_tokens(attend(q, k, v, lv.heads, lv.score, lv.tau), B, H, W, patches[i], grids[i]);
            }
            y = (*l0.wo)(value);
            break;
        }
    }
    return sh ? roll_hw(y, -sh, -sh) : y;
}

/// d score / d q for a single query/key pair.
/// Dot product: k. Cosine similarity: (k_hat - cos(q,k) q_hat) / |q|.
template <class T>
Tensor<T> score_gradients(const Tensor<T>& q, const Tensor<T>& k, ScoreKind kind) {
    if (q.rank() != 1 || q.shape() != k.shape() || q.numel() == 0)
        throw DimensionError("score_gradients: q and k must be equal-length vectors");
    if (kind == ScoreKind::DotProduct) return k.detach();
    T qn = 0, kn = 0, dot = 0;
    for (std::size_t i = 0; i < q.numel(); ++i) {
        qn += q[i] * q[i];
        kn += k[i] * k[i];
        dot += q[i] * k[i];
    }
    qn = std::sqrt(qn);
    kn = std::sqrt(kn);
    if (!(qn > 0) || !(kn > 0)) throw DomainError("score_gradients: cosine similarity undefined for zero vectors");
    const T cos = dot / (qn * kn);
    Tensor<T> g(q.shape());
    for (std::size_t i = 0; i < q.numel(); ++i) g[i] = (k[i] / kn - cos * q[i] / qn) / qn;
    return g;
}

/// Score of a single pair: q.k, or cos(q,k).
template <class T>
T pair_score(const Tensor<T>& q, const Tensor<T>& k, ScoreKind kind) {
    T qn = 0, kn = 0, dot = 0;
    for (std::size_t i = 0; i < q.numel(); ++i) {
        qn += q[i] * q[i];
        kn += k[i] * k[i];
        dot += q[i] * k[i];
    }
    if (kind == ScoreKind::DotProduct) return dot;
    return dot / (std::sqrt(qn) * std::sqrt(kn));
}

}  // namespace hiflow
