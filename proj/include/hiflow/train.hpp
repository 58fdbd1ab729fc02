#pragma once

#include <hiflow/image.hpp>
#include <hiflow/model.hpp>
#include <hiflow/scaling.hpp>

#include <ostream>

namespace hiflow {

/// Adam with decoupled weight decay.
template <class T>
class AdamW {
public:
    struct Options {
        double beta1 = 0.9;
        double beta2 = 0.99;
        double eps = 1e-8;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<Tensor<T>> params, Options opt) : params_(std::move(params)), opt_(opt) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, double(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            const auto g = p.grad();
            auto w = p.data();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = opt_.beta1 * m[i] + (1 - opt_.beta1) * double(g[i]);
                v[i] = opt_.beta2 * v[i] + (1 - opt_.beta2) * double(g[i]) * double(g[i]);
                const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
                w[i] = static_cast<T>(double(w[i]) * (1 - lr * opt_.weight_decay) - lr * update);
            }
        }
    }

private:
    std::vector<Tensor<T>> params_;
    Options opt_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

/// Degraded input and its clean target.
struct TrainPair {
    Image input;
    Image target;
};

using Dataset = std::vector<TrainPair>;

/// Noisy/clean pairs with one fixed noise draw per image.
inline Dataset make_denoise_dataset(const std::vector<Image>& clean, double sigma, std::uint64_t seed) {
    Dataset d;
    for (std::size_t i = 0; i < clean.size(); ++i)
        d.push_back({degrade(clean[i], DegradationSpec::awgn(sigma, seed + i)), clean[i]});
    return d;
}

/// Bicubic low-resolution inputs; targets are cropped to a multiple of r.
inline Dataset make_sr_dataset(const std::vector<Image>& clean, std::size_t r) {
    Dataset d;
    for (const auto& img : clean) {
        Image hr(img.height / r * r, img.width / r * r, img.channels);
        for (std::size_t y = 0; y < hr.height; ++y)
            for (std::size_t x = 0; x < hr.width; ++x)
                for (std::size_t c = 0; c < hr.channels; ++c) hr.at(y, x, c) = img.at(y, x, c);
        d.push_back({bicubic_downscale(hr, r), hr});
    }
    return d;
}

inline std::vector<Image> synthetic_images(std::size_t n, std::size_t h, std::size_t w, std::size_t channels,
                                           std::uint64_t seed) {
    std::vector<Image> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic_image(h, w, channels, seed * 1000003ULL + i));
    return out;
}

struct TrainOptions {
    long iters = 100;
    std::size_t batch = 4;
    std::size_t crop = 0;  // input-space crop side; 0 uses the full (common) image extent
    WarmupSchedule schedule{1e-3, 0, {}};
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> losses;  // one entry per iteration

    void write_csv(std::ostream& os) const {
        os << "iteration,loss\n";
        os.precision(10);
        for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
    }
};

namespace detail {
template <class T>
void copy_crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w, std::vector<T>& dst,
               std::size_t offset) {
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < img.channels; ++c)
                dst[offset + (y * w + x) * img.channels + c] = static_cast<T>(img.at(y0 + y, x0 + x, c));
}
}  // namespace detail

/// Pixel-L1 training with AdamW and the given learning-rate schedule. Each iteration draws
/// `batch` images and aligned random crops whose side is a multiple of the model's block side.
/// A non-finite loss aborts with TrainingError.
template <class T>
TrainResult train(Model<T>& model, const Dataset& data, const TrainOptions& opt) {
    if (data.empty()) throw ConfigError("train: dataset is empty");
    opt.schedule.validate();
    const auto& cfg = model.config();
    const std::size_t r = cfg.scale, mult = cfg.input_multiple();
    const std::size_t ih = data[0].input.height, iw = data[0].input.width, C = data[0].input.channels;
    for (const auto& p : data)
        if (p.input.height != ih || p.input.width != iw || p.input.channels != C || p.target.height != ih * r ||
            p.target.width != iw * r)
            throw DimensionError("train: dataset pairs must share extents (target = scale x input)");
    if (C != cfg.in_channels) throw DimensionError("train: image channels do not match the model");
    std::size_t crop = opt.crop == 0 ? std::min(ih, iw) : opt.crop;
    crop = std::min({crop, ih, iw}) / mult * mult;
    if (crop == 0) throw GeometryError("train: images smaller than the model block side");

    std::vector<Tensor<T>> params;
    model.visit("", [&](const ParamInfo& info, Tensor<T>& t) {
        t.set_requires_grad(info.trainable);
        if (info.trainable) params.push_back(t);
    });
    AdamW<T> adam(params, {});
    Rng rng(opt.seed);
    TrainResult res;
    const std::size_t B = std::max<std::size_t>(1, opt.batch);
    for (long it = 0; it < opt.iters; ++it) {
        std::vector<T> in(B * crop * crop * C), tg(B * crop * r * crop * r * C);
        for (std::size_t b = 0; b < B; ++b) {
            const auto& pair = data[rng.index(data.size())];
            const std::size_t y0 = rng.index(ih - crop + 1), x0 = rng.index(iw - crop + 1);
            detail::copy_crop(pair.input, y0, x0, crop, crop, in, b * crop * crop * C);
            detail::copy_crop(pair.target, y0 * r, x0 * r, crop * r, crop * r, tg, b * crop * r * crop * r * C);
        }
        const Tensor<T> x(Shape{B, crop, crop, C}, std::move(in));
        const Tensor<T> y(Shape{B, crop * r, crop * r, C}, std::move(tg));
        adam.zero_grad();
        Tensor<T> loss;
        try {
            loss = l1_loss(model.forward(x), y);
        } catch (const NumericError& e) {
            throw TrainingError("training diverged at iteration " + std::to_string(it) + ": " + e.what(), it);
        }
        const double lv = loss.item();
        if (!std::isfinite(lv))
            throw TrainingError("training diverged: non-finite loss at iteration " + std::to_string(it), it);
        res.losses.push_back(lv);
        loss.backward();
        adam.step(lr_at(opt.schedule, it));
    }
    adam.zero_grad();
    for (auto& p : params) p.set_requires_grad(false);
    return res;
}

template <class T>
struct TrainedModel {
    Model<T> model;
    TrainResult result;
};

/// Builds a model from cfg (weights seeded by opt.seed, then `init`) and trains it.
template <class T = float>
TrainedModel<T> train_toy(const HiIRConfig& cfg, const Dataset& data, const TrainOptions& opt,
                          const InitScheme& init = InitScheme::default_scheme()) {
    Rng rng(opt.seed);
    auto model = Model<T>::build(cfg, rng);
    InitScheme s = init;
    s.seed = opt.seed;
    apply_init(model, s);
    auto res = train(model, data, opt);
    return {std::move(model), std::move(res)};
}

/// Full-image forward pass (pad-and-crop handled by the model); output clamped to [0, 1].
template <class T>
Image infer(const Model<T>& model, const Image& img) {
    if (img.channels != model.config().in_channels)
        throw DimensionError("infer: image has " + std::to_string(img.channels) + " channels, model expects " +
                             std::to_string(model.config().in_channels));
    const NoGradGuard guard;
    auto out = Image::from_tensor(model.forward(img.to_tensor<T>()));
    out.clamp();
    return out;
}

template <class T>
Image infer(const Model<T>& model, const Image& img, Task expected) {
    if (model.config().task != expected) throw ConfigError("infer: model was built for a different task");
    return infer(model, img);
}

}  // namespace hiflow
