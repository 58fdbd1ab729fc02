#pragma once

#include <hiflow/layer.hpp>

#include <map>

namespace hiflow {

enum class Task { SR, Denoise };
enum class ConvKind { Conv1, Linear, Conv3 };

inline std::string to_string(Task t) { return t == Task::SR ? "sr" : "denoise"; }

inline std::string to_string(ConvKind k) {
    switch (k) {
        case ConvKind::Conv1: return "conv1";
        case ConvKind::Linear: return "linear";
        case ConvKind::Conv3: return "conv3";
    }
    return "?";
}

inline ConvKind parse_conv_kind(const std::string& s) {
    if (s == "conv1") return ConvKind::Conv1;
    if (s == "linear") return ConvKind::Linear;
    if (s == "conv3") return ConvKind::Conv3;
    throw ConfigError("unknown conv_kind '" + s + "' (expected conv1, linear or conv3)");
}

inline ScoreKind parse_score_kind(const std::string& s) {
    if (s == "dot" || s == "dot_product") return ScoreKind::DotProduct;
    if (s == "cosine" || s == "cosine_sim") return ScoreKind::CosineSim;
    throw ConfigError("unknown score_kind '" + s + "' (expected dot or cosine)");
}

inline Task parse_task(const std::string& s) {
    if (s == "sr") return Task::SR;
    if (s == "denoise") return Task::Denoise;
    throw ConfigError("unknown task '" + s + "' (expected sr or denoise)");
}

/// Full hyperparameter record of a model.
struct HiIRConfig {
    Task task = Task::SR;
    std::size_t scale = 2;         // SR upscaling factor r; 1 for denoising
    std::size_t in_channels = 3;   // image channels (1 or 3)
    std::size_t channels = 16;     // embedding width C
    std::size_t heads = 2;
    std::size_t gamma = 2;         // FFN expansion
    std::size_t p = 4;
    std::size_t s = 2;
    bool shift = false;
    Design variant = Design::V3;
    std::size_t stages = 1;            // columnar: stage count; U-shape: stages per level
    std::size_t layers_per_stage = 2;
    ConvKind conv_kind = ConvKind::Conv3;
    ScoreKind score = ScoreKind::DotProduct;
    double tau = 0.1;
    std::size_t tree_grid = 2;
    bool pad = true;  // reflection-pad inputs to the required multiple, crop afterwards

    void validate() const {
        if (task == Task::Denoise && scale != 1) throw ConfigError("denoising models require scale = 1");
        if (task == Task::SR && (scale < 1 || scale > 4)) throw ConfigError("scale must be in 1..4");
        if (in_channels != 1 && in_channels != 3) throw ConfigError("in_channels must be 1 or 3");
        if (channels == 0 || heads == 0 || gamma == 0 || p == 0 || s == 0)
            throw ConfigError("channels, heads, gamma, p and s must be positive");
        if (stages == 0 || layers_per_stage == 0) throw ConfigError("stages and layers_per_stage must be positive");
        if (conv_kind == ConvKind::Conv3 && channels % 4 != 0)
            throw ConfigError("conv3 blocks need channels divisible by 4");
        if (!(tau > 0)) throw ConfigError("tau must be positive");
        if (shift && p % 2 != 0) throw ConfigError("shift requires an even p");
    }

    LayerOptions layer_options(std::size_t c) const {
        return {c, heads, gamma, score, tau, tree_grid, shift};
    }

    WindowGeom geometry() const { return {0, 0, p, s, 0}; }

    /// Side that stage inputs must divide.
    std::size_t block_side() const { return p * s * (variant == Design::V4 ? tree_grid : 1); }

    /// Side that model inputs must divide (U-shape halves the extent three times).
    std::size_t input_multiple() const { return block_side() * (task == Task::Denoise ? 8 : 1); }
};

// ---------------------------------------------------------------------------

/// Per-stage spatial block selected by ConvKind.
template <class T>
struct ConvBlock {
    ConvKind kind = ConvKind::Conv3;
    std::vector<Conv<T>> convs;

    static ConvBlock make(ConvKind kind, std::size_t c, Rng& rng) {
        ConvBlock b;
        b.kind = kind;
        switch (kind) {
            case ConvKind::Conv1: b.convs.push_back(Conv<T>::make(c, c, 3, rng)); break;
            case ConvKind::Linear: b.convs.push_back(Conv<T>::make(c, c, 1, rng)); break;
            case ConvKind::Conv3: {
                if (c % 4 != 0) throw ConfigError("conv3 block: channels must be divisible by 4");
                const std::size_t m = c / 4;
                b.convs.push_back(Conv<T>::make(c, m, 1, rng));
                b.convs.push_back(Conv<T>::make(m, m, 3, rng));
                b.convs.push_back(Conv<T>::make(m, c, 1, rng));
                break;
            }
        }
        return b;
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> h = x;
        for (std::size_t i = 0; i < convs.size(); ++i) {
            h = convs[i](h);
            if (i + 1 < convs.size()) h = gelu(h);
        }
        return h;
    }

    template <class F>
    void visit(const std::string& prefix, bool residual, F&& f) {
        for (std::size_t i = 0; i < convs.size(); ++i) convs[i].visit(prefix + "." + std::to_string(i), residual, f);
    }
};

/// Weight count of a conv block (biases excluded): 9C^2, C^2 or (17/16)C^2.
inline std::size_t conv_block_weight_count(ConvKind kind, std::size_t c) {
    switch (kind) {
        case ConvKind::Conv1: return 9 * c * c;
        case ConvKind::Linear: return c * c;
        case ConvKind::Conv3: return (c * c) / 4 + 9 * (c / 4) * (c / 4) + (c * c) / 4;
    }
    return 0;
}

/// Hierarchical layers followed by a conv block, wrapped in a residual connection.
template <class T>
struct Stage {
    std::vector<TIFMLayer<T>> layers;
    ConvBlock<T> conv;
    BranchScale<T> branch_scale;

    static Stage make(const HiIRConfig& cfg, std::size_t c, Rng& rng) {
        Stage st;
        st.layers = make_layers<T>(cfg.variant, cfg.layers_per_stage, cfg.layer_options(c), rng);
        st.conv = ConvBlock<T>::make(cfg.conv_kind, c, rng);
        return st;
    }

    Tensor<T> operator()(const Tensor<T>& x, const WindowGeom& geom) const {
        Tensor<T> h = x;
        for (const auto& l : layers) h = hiir_layer(h, l, geom);
        return add(branch_scale.apply(conv(h)), x);
    }

    template <class F>
    void visit(const std::string& prefix, F&& f) {
        for (std::size_t j = 0; j < layers.size(); ++j) layers[j].visit(prefix + ".layer" + std::to_string(j), f);
        conv.visit(prefix + ".conv", true, f);
        branch_scale.visit(prefix + ".branch_scale", f);
    }
};

/// Columnar (SR) or U-shape (denoising) network.
template <class T>
class Model {
public:
    Model() = default;

    static Model build(const HiIRConfig& cfg, Rng& rng) {
        cfg.validate();
        return cfg.task == Task::SR ? build_columnar(cfg, rng) : build_ushape(cfg, rng);
    }

    /// head 3x3 conv -> stages -> deep-feature conv block -> global residual -> 3x3 conv -> pixel shuffle.
    static Model build_columnar(const HiIRConfig& cfg, Rng& rng) {
        cfg.validate();
        if (cfg.task != Task::SR) throw ConfigError("columnar architecture is for the SR task");
        Model m;
        m.cfg_ = cfg;
        const std::size_t c = cfg.channels;
        m.head_ = Conv<T>::make(cfg.in_channels, c, 3, rng);
        for (std::size_t i = 0; i < cfg.stages; ++i) m.stages_.push_back(Stage<T>::make(cfg, c, rng));
        m.body_conv_ = ConvBlock<T>::make(cfg.conv_kind, c, rng);
        m.tail_ = Conv<T>::make(c, cfg.in_channels * cfg.scale * cfg.scale, 3, rng);
        return m;
    }

    /// Three encoder levels (pixel-unshuffle down, channels x2), a latent stage, three decoder
    /// levels (pixel-shuffle up, skip concat + 1x1 fuse), and a 3x3 head with a global residual.
    static Model build_ushape(const HiIRConfig& cfg, Rng& rng) {
        cfg.validate();
        if (cfg.task != Task::Denoise) throw ConfigError("U-shape architecture is for the denoising task");
        Model m;
        m.cfg_ = cfg;
        const std::size_t c = cfg.channels;
        m.head_ = Conv<T>::make(cfg.in_channels, c, 3, rng);
        for (std::size_t lvl = 0; lvl < kLevels; ++lvl) {
            const std::size_t ci = c << lvl;
            std::vector<Stage<T>> stages;
            for (std::size_t i = 0; i < cfg.stages; ++i) stages.push_back(Stage<T>::make(cfg, ci, rng));
            m.encoder_.push_back(std::move(stages));
            m.down_.push_back(Conv<T>::make(4 * ci, 2 * ci, 1, rng));
        }
        for (std::size_t i = 0; i < cfg.stages; ++i) m.latent_.push_back(Stage<T>::make(cfg, c << kLevels, rng));
        for (std::size_t lvl = 0; lvl < kLevels; ++lvl) {
            const std::size_t ci = c << lvl;
            m.up_.push_back(Conv<T>::make(2 * ci, 4 * ci, 1, rng));
            m.fuse_.push_back(Conv<T>::make(2 * ci, ci, 1, rng));
            std::vector<Stage<T>> stages;
            for (std::size_t i = 0; i < cfg.stages; ++i) stages.push_back(Stage<T>::make(cfg, ci, rng));
            m.decoder_.push_back(std::move(stages));
        }
        m.tail_ = Conv<T>::make(c, cfg.in_channels, 3, rng);
        return m;
    }

    const HiIRConfig& config() const { return cfg_; }

    /// (B,H,W,in_channels) -> (B, r*H, r*W, in_channels). Inputs not divisible by the block side are
    /// reflection-padded and the output cropped back.
    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(3) != cfg_.in_channels)
            throw DimensionError("model input must be (B,H,W," + std::to_string(cfg_.in_channels) + "), got " +
                                 to_string(x.shape()));
        const std::size_t H = x.dim(1), W = x.dim(2), m = cfg_.input_multiple();
        const std::size_t Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
        if ((Hp != H || Wp != W) && !cfg_.pad)
            throw GeometryError("input " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by " +
                                std::to_string(m) + " and padding is disabled");
        const auto xp = reflect_pad_hw(x, Hp, Wp);
        const auto y = cfg_.task == Task::SR ? forward_columnar(xp) : forward_ushape(xp);
        return crop_hw(y, H * cfg_.scale, W * cfg_.scale);
    }

    /// Visits every parameter with a dotted name; stage layers are named stage{i}.layer{j}.{param}.
    template <class F>
    void visit(const std::string& prefix, F&& f) {
        const std::string p = prefix.empty() ? "" : prefix + ".";
        head_.visit(p + "head", false, f);
        if (cfg_.task == Task::SR) {
            for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].visit(p + "stage" + std::to_string(i), f);
            body_conv_.visit(p + "body_conv", true, f);
        } else {
            std::size_t idx = 0;
            for (std::size_t l = 0; l < encoder_.size(); ++l) {
                for (auto& st : encoder_[l]) st.visit(p + "stage" + std::to_string(idx++), f);
                down_[l].visit(p + "down" + std::to_string(l), false, f);
            }
            for (auto& st : latent_) st.visit(p + "stage" + std::to_string(idx++), f);
            for (std::size_t l = kLevels; l-- > 0;) {
                up_[l].visit(p + "up" + std::to_string(l), false, f);
                fuse_[l].visit(p + "fuse" + std::to_string(l), false, f);
                for (auto& st : decoder_[l]) st.visit(p + "stage" + std::to_string(idx++), f);
            }
        }
        tail_.visit(p + "tail", false, f);
    }

    /// Deep copy: no parameter storage is shared with *this.
    Model clone() const {
        Model m = *this;
        m.visit("", [](const ParamInfo&, Tensor<T>& t) { t = t.clone(); });
        return m;
    }

    /// Zeroes the final conv; the U-shape becomes the identity and the columnar model outputs
    /// the shuffled tail bias.
    void zero_tail() {
        std::fill(tail_.weight.data().begin(), tail_.weight.data().end(), T(0));
        std::fill(tail_.bias.data().begin(), tail_.bias.data().end(), T(0));
    }

    Conv<T>& tail() { return tail_; }
    std::vector<Stage<T>>& columnar_stages() { return stages_; }

    /// Channel width at each U-shape depth (encoder levels then latent).
    std::vector<std::size_t> level_channels() const {
        std::vector<std::size_t> out;
        if (cfg_.task == Task::SR) return {cfg_.channels};
        for (std::size_t l = 0; l <= kLevels; ++l) out.push_back(cfg_.channels << l);
        return out;
    }

    /// Shapes of (upsampled, skip) pairs at each decoder level for an input of H x W.
    std::vector<std::pair<Shape, Shape>> skip_shapes(std::size_t B, std::size_t H, std::size_t W) const {
        std::vector<std::pair<Shape, Shape>> out;
        const NoGradGuard guard;
        auto x = Tensor<T>(Shape{B, H, W, cfg_.in_channels});
        forward_ushape(x, &out);
        return out;
    }

    static constexpr std::size_t kLevels = 3;

private:
    Tensor<T> forward_columnar(const Tensor<T>& x) const {
        const WindowGeom geom = cfg_.geometry();
        const auto shallow = head_(x);
        Tensor<T> h = shallow;
        for (const auto& st : stages_) h = st(h, geom);
        const auto deep = add(body_conv_(h), shallow);
        return pixel_shuffle(tail_(deep), cfg_.scale);
    }

    Tensor<T> forward_ushape(const Tensor<T>& x, std::vector<std::pair<Shape, Shape>>* skip_log = nullptr) const {
        const WindowGeom geom = cfg_.geometry();
        Tensor<T> h = head_(x);
        std::vector<Tensor<T>> skips;
        for (std::size_t l = 0; l < kLevels; ++l) {
            for (const auto& st : encoder_[l]) h = st(h, geom);
            skips.push_back(h);
            h = down_[l](pixel_unshuffle(h, 2));
        }
        for (const auto& st : latent_) h = st(h, geom);
        for (std::size_t l = kLevels; l-- > 0;) {
            const auto up = pixel_shuffle(up_[l](h), 2);
            if (skip_log) skip_log->emplace_back(up.shape(), skips[l].shape());
            h = fuse_[l](concat_lastdim<T>({up, skips[l]}));
            for (const auto& st : decoder_[l]) h = st(h, geom);
        }
        return add(tail_(h), x);
    }

    HiIRConfig cfg_;
    Conv<T> head_;
    Conv<T> tail_;
    // columnar
    std::vector<Stage<T>> stages_;
    ConvBlock<T> body_conv_;
    // U-shape
    std::vector<std::vector<Stage<T>>> encoder_, decoder_;
    std::vector<Stage<T>> latent_;
    std::vector<Conv<T>> down_, up_, fuse_;
};

/// Parameter count with a per-module breakdown and the analytic MACs of one reference forward pass.
struct ModelSummary {
    std::size_t parameter_count = 0;
    std::vector<std::pair<std::string, std::size_t>> breakdown;
    std::uint64_t reference_macs = 0;
};

template <class Module>
ModelSummary param_count(Module& m) {
    ModelSummary s;
    std::map<std::string, std::size_t> order;
    m.visit("", [&](const ParamInfo& info, auto& t) {
        if (!info.trainable) return;
        const std::string top = info.name.substr(0, info.name.find('.'));
        if (!order.count(top)) {
            order[top] = s.breakdown.size();
            s.breakdown.emplace_back(top, 0);
        }
        s.breakdown[order[top]].second += t.numel();
        s.parameter_count += t.numel();
    });
    return s;
}

/// Counts MACs of one forward pass of `model` on a zero input of the given (B,H,W) extent.
template <class T>
ModelSummary summarize(Model<T>& model, std::size_t B, std::size_t H, std::size_t W) {
    auto s = param_count(model);
    const NoGradGuard guard;
    const MacScope macs;
    model.forward(Tensor<T>(Shape{B, H, W, model.config().in_channels}));
    s.reference_macs = macs.count();
    return s;
}

}  // namespace hiflow
