#pragma once

#include <hiflow/layer.hpp>
#include <hiflow/train.hpp>

#include <functional>
#include <ostream>

namespace hiflow {

// ---------------------------------------------------------------------------
// Analytic complexity

enum class AttnKind { GlobalAttn, WindowAttn, WindowAttnLarge, Proposed };

inline std::string to_string(AttnKind k) {
    switch (k) {
        case AttnKind::GlobalAttn: return "global";
        case AttnKind::WindowAttn: return "window";
        case AttnKind::WindowAttnLarge: return "window-large";
        case AttnKind::Proposed: return "proposed";
    }
    return "?";
}

inline AttnKind parse_attn_kind(const std::string& s) {
    if (s == "global") return AttnKind::GlobalAttn;
    if (s == "window") return AttnKind::WindowAttn;
    if (s == "window-large") return AttnKind::WindowAttnLarge;
    if (s == "proposed") return AttnKind::Proposed;
    throw ConfigError("unknown attention kind '" + s + "' (expected global, window, window-large or proposed)");
}

struct ComplexityArgs {
    double B = 1, H = 64, W = 64, C = 16;
    double p = 8, s = 2, gamma = 2, heads = 2;
};

/// Time terms in MACs, space terms in stored scalars, for one transformer layer.
struct ComplexityReport {
    AttnKind kind = AttnKind::Proposed;
    std::vector<std::pair<std::string, double>> time_terms;
    std::vector<std::pair<std::string, double>> space_terms;
    std::vector<std::pair<std::string, double>> minor_time_terms;  // dropped from the headline total
    double max_rf_two_layers = 0;                                   // side of the square footprint, pixels

    double time() const {
        double t = 0;
        for (const auto& [n, v] : time_terms) t += v;
        return t;
    }
    double space() const {
        double t = 0;
        for (const auto& [n, v] : space_terms) t += v;
        return t;
    }
    /// Sum of the attention-score terms (everything but the C^2 projection/FFN term).
    double attention_time() const {
        double t = 0;
        for (std::size_t i = 1; i < time_terms.size(); ++i) t += time_terms[i].second;
        return t;
    }
};

inline ComplexityReport analytic_complexity(AttnKind kind, const ComplexityArgs& a) {
    const double bhw = a.B * a.H * a.W, C = a.C, P = a.p * a.s;
    ComplexityReport r;
    r.kind = kind;
    switch (kind) {
        case AttnKind::GlobalAttn: {
            const double hw = a.H * a.W;
            r.time_terms = {{"(4+2g)BHWC^2", (4 + 2 * a.gamma) * bhw * C * C}, {"2B(HW)^2C", 2 * a.B * hw * hw * C}};
            r.space_terms = {{"4BHWC", 4 * bhw * C}, {"B(HW)^2h", a.B * hw * hw * a.heads}};
            r.max_rf_two_layers = std::max(a.H, a.W);
            break;
        }
        case AttnKind::WindowAttn:
            r.time_terms = {{"(4+2g)BHWC^2", (4 + 2 * a.gamma) * bhw * C * C}, {"2BHWp^2C", 2 * bhw * a.p * a.p * C}};
            r.space_terms = {{"4BHWC", 4 * bhw * C}, {"BHWhp^2", bhw * a.heads * a.p * a.p}};
            r.max_rf_two_layers = 2 * a.p;
            break;
        case AttnKind::WindowAttnLarge:
            r.time_terms = {{"(4+2g)BHWC^2", (4 + 2 * a.gamma) * bhw * C * C},
                            {"128BHWp^2s^2C", 128 * bhw * a.p * a.p * a.s * a.s * C}};
            r.space_terms = {{"4BHWC", 4 * bhw * C}, {"64BHWhp^2s^2", 64 * bhw * a.heads * a.p * a.p * a.s * a.s}};
            r.max_rf_two_layers = 16 * P;
            break;
        case AttnKind::Proposed:
            r.time_terms = {{"(5+2g)BHWC^2", (5 + 2 * a.gamma) * bhw * C * C},
                            {"3/2BHWp^2C", 1.5 * bhw * a.p * a.p * C},
                            {"3/2BHWs^2C", 1.5 * bhw * a.s * a.s * C}};
            r.minor_time_terms = {{"9gBHWC", 9 * a.gamma * bhw * C}};
            r.space_terms = {{"3BHWC", 3 * bhw * C}, {"BHWh max(p^2,s^2)", bhw * a.heads * std::max(a.p * a.p, a.s * a.s)}};
            r.max_rf_two_layers = 16 * P;
            break;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Empirical MAC counting

/// MACs issued by matmul / linear / conv kernels while running fn once (no graph recorded).
template <class Fn>
std::uint64_t empirical_flops(Fn&& fn) {
    const NoGradGuard guard;
    const MacScope scope;
    fn();
    return scope.count();
}

/// MACs of one hierarchical layer forward on a zero input of shape (B,H,W,C).
template <class T>
std::uint64_t layer_flops(const TIFMLayer<T>& layer, const WindowGeom& geom, std::size_t B, std::size_t C) {
    const Tensor<T> x(Shape{B, geom.H, geom.W, C});
    return empirical_flops([&] { hiir_layer(x, layer, geom); });
}

// ---------------------------------------------------------------------------
// Receptive-field probing

struct Footprint {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> mask;  // row-major, 1 where |d out / d in| > threshold
    std::size_t y_min = 0, y_max = 0, x_min = 0, x_max = 0;
    std::size_t count = 0;

    bool at(std::size_t y, std::size_t x) const { return mask[y * width + x] != 0; }
    std::size_t box_height() const { return count ? y_max - y_min + 1 : 0; }
    std::size_t box_width() const { return count ? x_max - x_min + 1 : 0; }

    /// True when the footprint is exactly the given axis-aligned rectangle.
    bool is_rect(std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) const {
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                const bool inside = y >= y0 && y < y0 + h && x >= x0 && x < x0 + w;
                if (at(y, x) != inside) return false;
            }
        return true;
    }

    /// Mask as an 8-bit grayscale image (255 inside the footprint).
    Image to_image() const {
        Image img(height, width, 1);
        for (std::size_t i = 0; i < mask.size(); ++i) img.values[i] = mask[i] ? 1.f : 0.f;
        return img;
    }
};

inline constexpr double kFootprintEps = 1e-12;

/// Input pixels whose gradient w.r.t. a random channel mix of output pixel (y, x) exceeds eps.
/// `fn` maps (1,H,W,C) to (1,H',W',C'); evaluated in F64.
inline Footprint receptive_field_probe(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                                       const Shape& input_shape, std::size_t y, std::size_t x,
                                       std::uint64_t seed = 0, double eps = kFootprintEps) {
    if (input_shape.size() != 4 || input_shape[0] != 1)
        throw DimensionError("receptive_field_probe: input shape must be (1,H,W,C)");
    Rng rng(seed);
    auto in = randn<double>(input_shape, rng);
    in.set_requires_grad(true);
    const auto out = fn(in);
    if (out.rank() != 4 || y >= out.dim(1) || x >= out.dim(2))
        throw DimensionError("receptive_field_probe: output pixel (" + std::to_string(y) + "," + std::to_string(x) +
                             ") out of range for output " + to_string(out.shape()));
    Tensor<double> selector(out.shape());
    const std::size_t C = out.dim(3);
    for (std::size_t c = 0; c < C; ++c) selector[(y * out.dim(2) + x) * C + c] = rng.uniform(0.5, 1.5);
    sum(mul(out, selector)).backward();
    Footprint fp;
    fp.height = input_shape[1];
    fp.width = input_shape[2];
    fp.mask.assign(fp.height * fp.width, 0);
    fp.y_min = fp.height;
    fp.x_min = fp.width;
    const std::size_t Cin = input_shape[3];
    const auto g = in.grad();
    for (std::size_t yy = 0; yy < fp.height; ++yy)
        for (std::size_t xx = 0; xx < fp.width; ++xx) {
            double m = 0;
            for (std::size_t c = 0; c < Cin; ++c) m = std::max(m, std::abs(g[(yy * fp.width + xx) * Cin + c]));
            if (m > eps) {
                fp.mask[yy * fp.width + xx] = 1;
                ++fp.count;
                fp.y_min = std::min(fp.y_min, yy);
                fp.y_max = std::max(fp.y_max, yy);
                fp.x_min = std::min(fp.x_min, xx);
                fp.x_max = std::max(fp.x_max, xx);
            }
        }
    if (fp.count == 0) fp.y_min = fp.x_min = 0;
    return fp;
}

// ---------------------------------------------------------------------------
// Motivation harnesses

struct PlateauRow {
    std::size_t p = 0;
    double attention_macs = 0;  // 2BHWp^2C
    double total_macs = 0;
    double peak_scalars = 0;    // 4BHWC + BHWhp^2
};

/// Window-attention cost as the window grows (analytic).
inline std::vector<PlateauRow> window_plateau_harness(ComplexityArgs base, const std::vector<std::size_t>& sizes) {
    std::vector<PlateauRow> rows;
    for (const auto p : sizes) {
        if (p == 0 || std::fmod(base.H, double(p)) != 0 || std::fmod(base.W, double(p)) != 0)
            throw GeometryError("plateau: window " + std::to_string(p) + " does not divide the image");
        base.p = double(p);
        const auto r = analytic_complexity(AttnKind::WindowAttn, base);
        rows.push_back({p, r.attention_time(), r.time(), r.space()});
    }
    return rows;
}

inline void write_plateau_csv(std::ostream& os, const std::vector<PlateauRow>& rows) {
    os << "p,attention_macs,total_macs,peak_scalars,attention_ratio\n";
    os.precision(12);
    for (const auto& r : rows)
        os << r.p << ',' << r.attention_macs << ',' << r.total_macs << ',' << r.peak_scalars << ','
           << r.attention_macs / rows.front().attention_macs << '\n';
}

struct ShiftAblationRow {
    bool shift = false;
    double psnr = 0;
    double final_loss = 0;
};

/// Trains two toy SR models that differ only in the shift flag and reports mean PSNR over the
/// dataset for each.
inline std::vector<ShiftAblationRow> shift_ablation_harness(HiIRConfig cfg, const Dataset& data,
                                                            const TrainOptions& opt) {
    std::vector<ShiftAblationRow> rows;
    for (const bool shift : {false, true}) {
        cfg.shift = shift;
        auto trained = train_toy<float>(cfg, data, opt);
        double total = 0;
        for (const auto& pair : data) total += psnr(infer(trained.model, pair.input), pair.target);
        rows.push_back({shift, total / double(data.size()),
                        trained.result.losses.empty() ? 0.0 : trained.result.losses.back()});
    }
    return rows;
}

inline void write_shift_csv(std::ostream& os, const std::vector<ShiftAblationRow>& rows) {
    os << "shift,psnr,final_loss\n";
    os.precision(10);
    for (const auto& r : rows) os << (r.shift ? 1 : 0) << ',' << r.psnr << ',' << r.final_loss << '\n';
}

}  // namespace hiflow
