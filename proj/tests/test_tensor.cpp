#include <hiflow/grad_check.hpp>
#include <hiflow/ops.hpp>
#include <hiflow/random.hpp>
#include <hiflow/tensor_io.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace hiflow;

namespace {

using Td = Tensor<double>;

Td from(Shape s, std::vector<double> v) { return Td(std::move(s), std::move(v)); }

void expect_near_all(const Td& a, const std::vector<double>& b, double tol) {
    ASSERT_EQ(a.numel(), b.size());
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

// Literal loop convolution used as an independent oracle.
Td naive_conv(const Td& x, const Td& w, const Td& b, std::size_t groups) {
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
    const std::size_t k = w.dim(0), cig = w.dim(2), cout = w.dim(3), cog = cout / groups;
    Td out({B, H, W, cout});
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx)
                for (std::size_t co = 0; co < cout; ++co) {
                    double acc = b[co];
                    const std::size_t g = co / cog;
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long iy = long(y + ky) - long(k / 2), ix = long(xx + kx) - long(k / 2);
                            if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                            for (std::size_t ci = 0; ci < cig; ++ci)
                                acc += x[((n * H + iy) * W + ix) * cin + g * cig + ci] *
                                       w[((ky * k + kx) * cig + ci) * cout + co];
                        }
                    out[((n * H + y) * W + xx) * cout + co] = acc;
                }
    return out;
}

}  // namespace

TEST(Matmul, IdentityAndHandArithmetic) {
    const auto a = from({2, 2}, {1, 2, 3, 4});
    expect_near_all(matmul(a, from({2, 2}, {1, 0, 0, 1})), {1, 2, 3, 4}, 0);
    expect_near_all(matmul(from({1, 2}, {1, 2}), from({2, 1}, {3, 4})), {11}, 0);
    expect_near_all(matmul(a, Td({2, 3})), {0, 0, 0, 0, 0, 0}, 0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Td({2, 3}), Td({2, 3}));
        FAIL();
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("(2,3) x (2,3)"), std::string::npos);
    }
    EXPECT_THROW(matmul(Td({2, 2, 3}), Td({3, 3, 1})), DimensionError);
}

TEST(Matmul, BroadcastsLeadingAxes) {
    Rng rng(1);
    const auto a = randn<double>({2, 3, 4, 5}, rng);
    const auto b = randn<double>({5, 2}, rng);
    const auto c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{2, 3, 4, 2}));
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double s = 0;
                for (std::size_t k = 0; k < 5; ++k) s += a[(t * 4 + i) * 5 + k] * b[k * 2 + j];
                EXPECT_NEAR(c[(t * 4 + i) * 2 + j], s, 1e-12);
            }
    const auto d = matmul(randn<double>({1, 3, 2, 2}, rng), randn<double>({4, 1, 2, 2}, rng));
    EXPECT_EQ(d.shape(), (Shape{4, 3, 2, 2}));
}

TEST(Softmax, ClosedForms) {
    expect_near_all(softmax_lastdim(from({3}, {7, 7, 7})), {1. / 3, 1. / 3, 1. / 3}, 1e-15);
    expect_near_all(softmax_lastdim(from({1}, {-123.0})), {1.0}, 0);
    expect_near_all(softmax_lastdim(from({2}, {0, std::log(2.0)})), {1. / 3, 2. / 3}, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
    Rng rng(7);
    const auto xd = rand_uniform<double>({50, 9}, rng, -50, 50);
    const auto xf = xd.cast<float>();
    const auto yd = softmax_lastdim(xd);
    const auto yf = softmax_lastdim(xf);
    for (std::size_t r = 0; r < 50; ++r) {
        double sd = 0, sf = 0;
        for (std::size_t j = 0; j < 9; ++j) {
            EXPECT_GE(yd[r * 9 + j], 0.0);
            sd += yd[r * 9 + j];
            sf += yf[r * 9 + j];
        }
        EXPECT_NEAR(sd, 1.0, 1e-12);
        EXPECT_NEAR(sf, 1.0, 1e-5);
    }
}

TEST(LayerNorm, Examples) {
    const auto ones = Td::full({2}, 1.0), zeros = Td::zeros({2});
    expect_near_all(layer_norm(from({2, 2}, {3, 3, -1, -1}), ones, zeros, 1e-6), {0, 0, 0, 0}, 0);
    expect_near_all(layer_norm(from({2}, {1, -1}), ones, zeros, 1e-12), {1, -1}, 1e-9);
    expect_near_all(layer_norm(from({2}, {5, -3}), zeros, Td::full({2}, 0.25), 1e-6), {0.25, 0.25}, 0);
    EXPECT_THROW(layer_norm(from({2}, {1, 2}), Td::full({3}, 1.0), Td::zeros({3}), 1e-6), DimensionError);
}

TEST(LayerNorm, InvariantToPerPositionOffset) {
    Rng rng(3);
    const auto x = randn<double>({4, 6}, rng);
    auto shifted = x.clone();
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 6; ++c) shifted[r * 6 + c] += double(r) * 10 - 7;
    const auto g = Td::full({6}, 1.0), b = Td::zeros({6});
    const auto y1 = layer_norm(x, g, b, 1e-6), y2 = layer_norm(shifted, g, b, 1e-6);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-9);
}

TEST(Conv2d, OneByOneEqualsMatmulOverPositions) {
    Rng rng(5);
    const auto x = randn<float>({2, 3, 4, 5}, rng);
    const auto w = randn<float>({1, 1, 5, 6}, rng);
    const auto y = conv2d(x, w);
    const auto m = matmul(reshape(x, {24, 5}), reshape(w, {5, 6}));
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], m[i], 1e-6);
}

TEST(Conv2d, ZeroKernelAndDepthwiseCounts) {
    const auto x = Td::full({1, 5, 5, 2}, 0.5);
    const auto y0 = conv2d(x, Td({3, 3, 2, 2}));
    for (double v : y0.data()) EXPECT_EQ(v, 0.0);
    const auto y = conv2d(x, Td::full({3, 3, 1, 2}, 1.0), std::optional<Td>{}, 2);
    // interior 9v, edge 6v, corner 4v
    EXPECT_DOUBLE_EQ(y[((0 * 5 + 2) * 5 + 2) * 2], 4.5);
    EXPECT_DOUBLE_EQ(y[((0 * 5 + 0) * 5 + 0) * 2 + 1], 2.0);
    EXPECT_DOUBLE_EQ(y[((0 * 5 + 0) * 5 + 2) * 2], 3.0);
}

TEST(Conv2d, MatchesLoopOracleWithGroups) {
    Rng rng(11);
    for (std::size_t groups : {1u, 2u, 4u}) {
        const auto x = randn<double>({2, 5, 6, 4}, rng);
        const auto w = randn<double>({3, 3, 4 / groups, 8}, rng);
        const auto b = randn<double>({8}, rng);
        const auto y = conv2d(x, w, std::optional<Td>(b), groups);
        const auto ref = naive_conv(x, w, b, groups);
        for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(Conv2d, RejectsBadGroups) {
    EXPECT_THROW(conv2d(Td({1, 3, 3, 4}), Td({3, 3, 1, 3}), std::optional<Td>{}, 3), ConfigError);
    EXPECT_THROW(conv2d(Td({1, 3, 3, 4}), Td({2, 2, 4, 4})), ConfigError);
}

TEST(Gelu, Values) {
    const auto y = gelu(from({3}, {0.0, 1.0, 30.0}));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_NEAR(y[1], 0.8412, 1e-4);
    EXPECT_NEAR(y[2], 30.0, 1e-9);
}

TEST(PixelShuffle, IdentityShapeAndIndexMap) {
    Rng rng(2);
    const auto x = randn<double>({1, 3, 2, 4}, rng);
    EXPECT_EQ(pixel_shuffle(x, 1).values(), x.values());
    EXPECT_EQ(pixel_shuffle(Td({1, 2, 2, 4}), 2).shape(), (Shape{1, 4, 4, 1}));

    // 1x1 pixel with 4 channels [a b c d] becomes the 2x2 block [[a b],[c d]].
    const auto one = from({1, 1, 1, 4}, {10, 11, 12, 13});
    expect_near_all(pixel_shuffle(one, 2), {10, 11, 12, 13}, 0);
    // Two pixels side by side, two output channels: enumerate by hand.
    // input (0,0,:) = 0..7, (0,1,:) = 8..15; channel c uses inputs c*4 .. c*4+3.
    std::vector<double> v(16);
    std::iota(v.begin(), v.end(), 0.0);
    const auto y = pixel_shuffle(from({1, 1, 2, 8}, v), 2);
    ASSERT_EQ(y.shape(), (Shape{1, 2, 4, 2}));
    // row 0: x=0:(0,4) x=1:(1,5) x=2:(8,12) x=3:(9,13); row 1: (2,6) (3,7) (10,14) (11,15)
    expect_near_all(y, {0, 4, 1, 5, 8, 12, 9, 13, 2, 6, 3, 7, 10, 14, 11, 15}, 0);
    EXPECT_THROW(pixel_shuffle(Td({1, 2, 2, 3}), 2), DimensionError);
}

TEST(PixelShuffle, RoundTripIsBitwiseIdentity) {
    Rng rng(9);
    for (int t = 0; t < 20; ++t) {
        const std::size_t r = 1 + rng.index(3);
        const auto x = randn<float>({1 + rng.index(2), r * (1 + rng.index(3)), r * (1 + rng.index(3)), 1 + rng.index(3)},
                                    rng);
        EXPECT_EQ(pixel_shuffle(pixel_unshuffle(x, r), r).values(), x.values());
        const auto y = randn<float>({1, 2, 3, r * r * 2}, rng);
        EXPECT_EQ(pixel_unshuffle(pixel_shuffle(y, r), r).values(), y.values());
    }
}

TEST(Autograd, BackwardRequiresScalar) {
    Td x({2, 2}, 1.0);
    x.set_requires_grad();
    EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
    auto x = from({2}, {1.0, 2.0});
    x.set_requires_grad();
    const auto y = mul(x, x);  // d/dx sum(x^2 + x^2) = 4x
    sum(add(y, y)).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(GradCheck, SumIsExact) {
    Rng rng(4);
    const auto x = randn<double>({3, 4}, rng);
    EXPECT_LT(grad_check<double>([](const Td& t) { return sum(t); }, x, 1e-4), 1e-10);
}

TEST(GradCheck, SoftmaxWeighted) {
    Rng rng(4);
    const auto x = randn<double>({3, 5}, rng);
    const auto w = randn<double>({3, 5}, rng);
    EXPECT_LT(grad_check<double>([&](const Td& t) { return sum(mul(softmax_lastdim(t), w)); }, x), 1e-6);
}

TEST(GradCheck, RejectsNonScalarAndF32) {
    Rng rng(4);
    const auto x = randn<double>({3}, rng);
    EXPECT_THROW(grad_check<double>([](const Td& t) { return scale(t, 2.0); }, x), ContractError);
    EXPECT_THROW(grad_check<double>([](const Td& t) { return sum(t); }, x, 1e-2), ContractError);
    auto xf = randn<float>({3}, rng);
    EXPECT_THROW(grad_check_leaf<float>([&] { return sum(xf); }, xf), ContractError);
}

// Every differentiable op on random small shapes, F64.
TEST(GradCheck, EveryOpBelowTolerance) {
    Rng rng(21);
    const double tol = 1e-5;
    auto readout = [&](const Shape& s) { return randn<double>(s, rng); };
    auto check = [&](const char* name, Shape in_shape, auto&& op) {
        const auto x = randn<double>(in_shape, rng);
        const auto probe = op(x);
        const auto w = readout(probe.shape());
        const double err = grad_check<double>([&](const Td& t) { return sum(mul(op(t), w)); }, x);
        EXPECT_LT(err, tol) << name;
    };
    const auto B = randn<double>({4, 3}, rng);
    const auto A = randn<double>({2, 2, 4}, rng);
    check("matmul lhs", {2, 3, 4}, [&](const Td& t) { return matmul(t, B); });
    check("matmul rhs", {4, 3}, [&](const Td& t) { return matmul(A, t); });
    const auto Wl = randn<double>({4, 5}, rng), bl = randn<double>({5}, rng);
    check("linear x", {3, 4}, [&](const Td& t) { return linear(t, Wl, std::optional<Td>(bl)); });
    const auto xl = randn<double>({3, 4}, rng);
    check("linear w", {4, 5}, [&](const Td& t) { return linear(xl, t, std::optional<Td>(bl)); });
    check("linear b", {5}, [&](const Td& t) { return linear(xl, Wl, std::optional<Td>(t)); });
    check("softmax", {3, 6}, [](const Td& t) { return softmax_lastdim(t); });
    const auto g = randn<double>({5}, rng), be = randn<double>({5}, rng);
    check("layer_norm x", {3, 5}, [&](const Td& t) { return layer_norm(t, g, be, 1e-6); });
    const auto xn = randn<double>({3, 5}, rng);
    check("layer_norm gamma", {5}, [&](const Td& t) { return layer_norm(xn, t, be, 1e-6); });
    check("layer_norm beta", {5}, [&](const Td& t) { return layer_norm(xn, g, t, 1e-6); });
    const auto Wc = randn<double>({3, 3, 2, 4}, rng), bc = randn<double>({4}, rng);
    check("conv2d x", {1, 4, 5, 4}, [&](const Td& t) { return conv2d(t, Wc, std::optional<Td>(bc), 2); });
    const auto xc = randn<double>({2, 3, 4, 4}, rng);
    check("conv2d w", {3, 3, 2, 4}, [&](const Td& t) { return conv2d(xc, t, std::optional<Td>(bc), 2); });
    check("conv2d b", {4}, [&](const Td& t) { return conv2d(xc, Wc, std::optional<Td>(t), 2); });
    const auto Wd = randn<double>({3, 3, 1, 4}, rng);
    check("conv2d depthwise", {1, 3, 3, 4}, [&](const Td& t) { return conv2d(t, Wd, std::optional<Td>{}, 4); });
    check("gelu", {10}, [](const Td& t) { return gelu(t); });
    check("l2_normalize", {3, 4}, [](const Td& t) { return l2_normalize_lastdim(t); });
    check("pixel_shuffle", {1, 2, 2, 8}, [](const Td& t) { return pixel_shuffle(t, 2); });
    check("pixel_unshuffle", {1, 4, 2, 2}, [](const Td& t) { return pixel_unshuffle(t, 2); });
    check("roll", {1, 3, 4, 2}, [](const Td& t) { return roll_hw(t, 1, -2); });
    check("reflect_pad", {1, 3, 2, 2}, [](const Td& t) { return reflect_pad_hw(t, 7, 5); });
    check("crop", {1, 4, 4, 2}, [](const Td& t) { return crop_hw(t, 2, 3); });
    check("permute", {2, 3, 4}, [](const Td& t) { return permute(t, {2, 0, 1}); });
    check("slice", {3, 6}, [](const Td& t) { return slice_lastdim(t, 1, 4); });
    const auto other = randn<double>({3, 2}, rng);
    check("concat", {3, 4}, [&](const Td& t) { return concat_lastdim<double>({t, other, t}); });
    const auto m = randn<double>({3, 4}, rng);
    check("add", {3, 4}, [&](const Td& t) { return add(t, m); });
    check("sub", {3, 4}, [&](const Td& t) { return sub(m, t); });
    check("mul", {3, 4}, [&](const Td& t) { return mul(t, m); });
    check("scale", {3, 4}, [&](const Td& t) { return scale(t, -2.5); });
    check("mean", {3, 4}, [&](const Td& t) { return mean(t); });
    // l1_loss is smooth away from ties; offsets keep |a-b| > h.
    auto target = randn<double>({3, 4}, rng);
    for (auto& v : target.data()) v += 10.0;
    check("l1_loss", {3, 4}, [&](const Td& t) { return l1_loss(t, target); });
}

TEST(Parallel, ThreadCountDoesNotChangeResults) {
    Rng rng(6);
    const auto a = randn<float>({8, 16, 12}, rng);
    const auto b = randn<float>({8, 12, 10}, rng);
    const auto x = randn<float>({2, 9, 7, 6}, rng);
    const auto w = randn<float>({3, 3, 6, 5}, rng);
    set_max_threads(1);
    const auto m1 = matmul(a, b);
    const auto c1 = conv2d(x, w);
    set_max_threads(4);
    const auto m4 = matmul(a, b);
    const auto c4 = conv2d(x, w);
    set_max_threads(0);
    EXPECT_EQ(m1.values(), m4.values());
    EXPECT_EQ(c1.values(), c4.values());
}

TEST(MacCounter, CountsOnlyInsideScope) {
    {
        MacScope scope;
        matmul(Tensor<float>({3, 4}), Tensor<float>({4, 5}));
        EXPECT_EQ(scope.count(), 60u);
        {
            MacScope inner;
            conv2d(Tensor<float>({1, 8, 8, 4}), Tensor<float>({1, 1, 4, 4}));
            EXPECT_EQ(inner.count(), 1024u);
        }
        EXPECT_EQ(scope.count(), 1084u);
    }
    MacScope fresh;
    EXPECT_EQ(fresh.count(), 0u);
}

TEST(Hift, RoundTripIsBitwise) {
    Rng rng(8);
    for (int t = 0; t < 5; ++t) {
        Shape s;
        for (std::size_t r = 0, n = 1 + rng.index(6); r < n; ++r) s.push_back(1 + rng.index(4));
        const auto f = randn<float>(s, rng);
        const auto d = randn<double>(s, rng);
        std::stringstream ss;
        write_hift(ss, f);
        write_hift(ss, d);
        const auto f2 = std::get<Tensor<float>>(read_hift_any(ss));
        const auto d2 = std::get<Tensor<double>>(read_hift_any(ss));
        EXPECT_EQ(f2.shape(), s);
        EXPECT_EQ(std::memcmp(f2.data().data(), f.data().data(), f.numel() * sizeof(float)), 0);
        EXPECT_EQ(std::memcmp(d2.data().data(), d.data().data(), d.numel() * sizeof(double)), 0);
    }
}

TEST(Hift, HeaderLayout) {
    std::stringstream ss;
    write_hift(ss, Tensor<float>({2, 3}, 1.5f));
    const std::string bytes = ss.str();
    ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 2 * 8 + 1 + 6 * 4);
    EXPECT_EQ(bytes.substr(0, 4), "HIFT");
    EXPECT_EQ(bytes[4], 1);  // version, little-endian
    EXPECT_EQ(bytes[8], 2);  // rank
    EXPECT_EQ(bytes[12], 2);
    EXPECT_EQ(bytes[20], 3);
    EXPECT_EQ(bytes[28], 0);  // dtype F32
}

TEST(Hift, RejectsMalformed) {
    std::stringstream bad("HIFX");
    EXPECT_THROW(read_hift_any(bad), FormatError);
    std::stringstream ss;
    write_hift(ss, Tensor<double>({4}, 1.0));
    std::string s = ss.str();
    std::stringstream truncated(s.substr(0, s.size() - 3));
    EXPECT_THROW(read_hift_any(truncated), FormatError);
    s[20] = 7;  // dtype byte of a rank-1 header
    std::stringstream dtype(s);
    EXPECT_THROW(read_hift_any(dtype), FormatError);
}
