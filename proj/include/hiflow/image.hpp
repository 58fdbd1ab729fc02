#pragma once

#include <hiflow/random.hpp>
#include <hiflow/tensor_io.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace hiflow {

/// Interleaved channels-last image with values nominally in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 3;
    std::vector<float> values;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.f)
        : height(h), width(w), channels(c), values(h * w * c, fill) {
        if (c != 1 && c != 3) throw DimensionError("image: channels must be 1 or 3");
    }

    float& at(std::size_t y, std::size_t x, std::size_t c) { return values[(y * width + x) * channels + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return values[(y * width + x) * channels + c]; }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    void clamp() {
        for (auto& v : values) v = std::clamp(v, 0.f, 1.f);
    }

    template <class T = float>
    Tensor<T> to_tensor() const {
        return Tensor<T>(Shape{1, height, width, channels}, std::vector<T>(values.begin(), values.end()));
    }

    /// Batch item `b` of a (B,H,W,C) tensor.
    template <class T>
    static Image from_tensor(const Tensor<T>& t, std::size_t b = 0) {
        if (t.rank() != 4) throw DimensionError("image from tensor: expected (B,H,W,C), got " + to_string(t.shape()));
        Image img(t.dim(1), t.dim(2), t.dim(3));
        const std::size_t n = img.values.size();
        for (std::size_t i = 0; i < n; ++i) img.values[i] = static_cast<float>(t[b * n + i]);
        return img;
    }
};

// ---------------------------------------------------------------------------
// Metrics

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) for [0,1] images, capped at 99 dB for identical inputs.
inline double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("psnr: image shapes differ");
    double se = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = double(a.values[i]) - double(b.values[i]);
        se += d * d;
    }
    const double mse = se / double(a.values.size());
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// Degradations

struct DegradationSpec {
    enum class Kind { BicubicDown, AWGN };
    Kind kind = Kind::AWGN;
    std::size_t scale = 2;  // BicubicDown factor
    double sigma = 25.0;    // AWGN std in 8-bit units
    std::uint64_t seed = 0;

    static DegradationSpec awgn(double sigma, std::uint64_t seed = 0) { return {Kind::AWGN, 1, sigma, seed}; }
    static DegradationSpec bicubic(std::size_t r) { return {Kind::BicubicDown, r, 0, 0}; }
};

/// Keys cubic convolution kernel with a = -0.5.
inline double cubic_kernel(double x) {
    constexpr double a = -0.5;
    const double t = std::abs(x);
    if (t <= 1) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
    if (t < 2) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
    return 0;
}

namespace detail {
/// Mirror with edge repetition (...1 0 0 1 2...), the boundary rule of imresize.
inline std::size_t symmetric_index(long i, std::size_t n) {
    const long period = 2 * long(n);
    long m = ((i % period) + period) % period;
    return std::size_t(m < long(n) ? m : period - 1 - m);
}

/// Resampling taps for shrinking n samples by integer factor r with source-space antialiasing.
inline std::vector<std::vector<std::pair<std::size_t, double>>> bicubic_taps(std::size_t n, std::size_t r) {
    const std::size_t out = n / r;
    std::vector<std::vector<std::pair<std::size_t, double>>> taps(out);
    const double width = 2.0 * double(r);
    for (std::size_t i = 0; i < out; ++i) {
        const double center = (double(i) + 0.5) * double(r) - 0.5;
        const long lo = long(std::floor(center - width)), hi = long(std::ceil(center + width));
        double total = 0;
        for (long j = lo; j <= hi; ++j) {
            const double w = cubic_kernel((double(j) - center) / double(r));
            if (w == 0) continue;
            taps[i].emplace_back(symmetric_index(j, n), w);
            total += w;
        }
        for (auto& t : taps[i]) t.second /= total;
    }
    return taps;
}
}  // namespace detail

inline Image bicubic_downscale(const Image& img, std::size_t r) {
    if (r == 0) throw ConfigError("bicubic: scale must be positive");
    if (r == 1) return img;
    if (img.height < r || img.width < r) throw DimensionError("bicubic: image smaller than the scale factor");
    const auto ty = detail::bicubic_taps(img.height, r);
    const auto tx = detail::bicubic_taps(img.width, r);
    const std::size_t C = img.channels, Ho = ty.size(), Wo = tx.size();
    std::vector<double> rows(Ho * img.width * C, 0.0);
    for (std::size_t y = 0; y < Ho; ++y)
        for (const auto& [sy, w] : ty[y])
            for (std::size_t x = 0; x < img.width; ++x)
                for (std::size_t c = 0; c < C; ++c) rows[(y * img.width + x) * C + c] += w * img.at(sy, x, c);
    Image out(Ho, Wo, C);
    for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t x = 0; x < Wo; ++x)
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0;
                for (const auto& [sx, w] : tx[x]) acc += w * rows[(y * img.width + sx) * C + c];
                out.at(y, x, c) = static_cast<float>(acc);
            }
    return out;
}

/// Applies the degradation; AWGN is seed-deterministic and unclipped.
inline Image degrade(const Image& img, const DegradationSpec& spec) {
    switch (spec.kind) {
        case DegradationSpec::Kind::AWGN: {
            if (spec.sigma < 0) throw ConfigError("awgn: sigma must be >= 0");
            if (spec.sigma == 0) return img;
            Rng rng(spec.seed);
            Image out = img;
            const double sd = spec.sigma / 255.0;
            for (auto& v : out.values) v = static_cast<float>(double(v) + rng.normal(0.0, sd));
            return out;
        }
        case DegradationSpec::Kind::BicubicDown:
            if (spec.scale < 1 || spec.scale > 4) throw ConfigError("bicubic: scale must be in 1..4");
            return bicubic_downscale(img, spec.scale);
    }
    return img;
}

// ---------------------------------------------------------------------------
// I/O: binary PPM (P6), PGM (P5) with maxval 255, and HIFT rank-3 (H,W,C) float tensors.

namespace detail {
inline std::string pnm_token(std::istream& is) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(char(ch));
    }
    if (tok.empty()) throw FormatError("pnm: truncated header");
    return tok;
}

inline std::size_t pnm_number(std::istream& is) {
    const auto tok = pnm_token(is);
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit((unsigned char)c); }))
        throw FormatError("pnm: malformed header field '" + tok + "'");
    return std::stoul(tok);
}

inline bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && std::equal(suf.rbegin(), suf.rend(), s.rbegin());
}
}  // namespace detail

inline Image read_pnm(std::istream& is) {
    const auto magic = detail::pnm_token(is);
    std::size_t channels;
    if (magic == "P6")
        channels = 3;
    else if (magic == "P5")
        channels = 1;
    else
        throw FormatError("pnm: unsupported magic '" + magic + "' (need P5 or P6)");
    const std::size_t w = detail::pnm_number(is), h = detail::pnm_number(is), maxval = detail::pnm_number(is);
    if (w == 0 || h == 0) throw FormatError("pnm: zero extent");
    if (maxval != 255) throw FormatError("pnm: unsupported maxval " + std::to_string(maxval) + " (only 255)");
    Image img(h, w, channels);
    std::vector<unsigned char> buf(img.values.size());
    if (!is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size())))
        throw FormatError("pnm: truncated payload");
    for (std::size_t i = 0; i < buf.size(); ++i) img.values[i] = float(buf[i]) / 255.f;
    return img;
}

inline void write_pnm(std::ostream& os, const Image& img) {
    os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> buf(img.values.size());
    for (std::size_t i = 0; i < buf.size(); ++i)
        buf[i] = static_cast<unsigned char>(std::lround(std::clamp(img.values[i], 0.f, 1.f) * 255.f));
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!os) throw FormatError("pnm: write failed");
}

/// Loads by extension: .ppm/.pgm/.pnm as 8-bit PNM, anything else as a HIFT (H,W,C) tensor.
inline Image load_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    if (detail::ends_with(path, ".ppm") || detail::ends_with(path, ".pgm") || detail::ends_with(path, ".pnm"))
        return read_pnm(is);
    const auto t = read_hift<float>(is);
    if (t.rank() != 3 || (t.dim(2) != 1 && t.dim(2) != 3))
        throw FormatError("HIFT image must have shape (H,W,1|3), got " + to_string(t.shape()));
    Image img(t.dim(0), t.dim(1), t.dim(2));
    std::copy(t.data().begin(), t.data().end(), img.values.begin());
    return img;
}

inline void save_image(const std::string& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    if (detail::ends_with(path, ".ppm") || detail::ends_with(path, ".pgm") || detail::ends_with(path, ".pnm")) {
        write_pnm(os, img);
        return;
    }
    write_hift(os, Tensor<float>(Shape{img.height, img.width, img.channels}, img.values));
}

// ---------------------------------------------------------------------------

/// Smooth synthetic scene: a tilted gradient plus a few soft-edged discs and rectangles.
inline Image synthetic_image(std::size_t h, std::size_t w, std::size_t channels, std::uint64_t seed) {
    Rng rng(seed);
    Image img(h, w, channels);
    double base[3], gy[3], gx[3];
    for (std::size_t c = 0; c < channels; ++c) {
        base[c] = rng.uniform(0.25, 0.75);
        gy[c] = rng.uniform(-0.3, 0.3);
        gx[c] = rng.uniform(-0.3, 0.3);
    }
    struct Shape2 {
        bool disc;
        double cy, cx, ry, rx;
        double amp[3];
    };
    std::vector<Shape2> shapes(3);
    for (auto& s : shapes) {
        s.disc = rng.uniform() < 0.5;
        s.cy = rng.uniform(0, double(h));
        s.cx = rng.uniform(0, double(w));
        s.ry = rng.uniform(0.15, 0.35) * double(h);
        s.rx = rng.uniform(0.15, 0.35) * double(w);
        for (std::size_t c = 0; c < channels; ++c) s.amp[c] = rng.uniform(-0.25, 0.25);
    }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < channels; ++c) {
                double v = base[c] + gy[c] * (double(y) / double(h) - 0.5) + gx[c] * (double(x) / double(w) - 0.5);
                for (const auto& s : shapes) {
                    const double dy = (double(y) - s.cy) / s.ry, dx = (double(x) - s.cx) / s.rx;
                    const double d = s.disc ? std::sqrt(dy * dy + dx * dx) : std::max(std::abs(dy), std::abs(dx));
                    v += s.amp[c] / (1.0 + std::exp((d - 1.0) * 6.0));
                }
                img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    return img;
}

}  // namespace hiflow
