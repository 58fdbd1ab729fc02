#pragma once

#include <hiflow/parallel.hpp>
#include <hiflow/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

namespace hiflow {

namespace detail {
inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
}

template <class T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* op) {
    if (x.rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                             to_string(x.shape()));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Index rearrangements

/// out[i] = x[index[i]]. Backward scatter-adds, so repeated indices (padding) are fine.
template <class T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::vector<std::size_t> index) {
    if (numel_of(out_shape) != index.size())
        throw DimensionError("gather: index map size " + std::to_string(index.size()) + " does not match shape " +
                             to_string(out_shape));
    const auto src = x.data();
    std::vector<T> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= src.size()) throw DimensionError("gather: index out of range");
        out[i] = src[index[i]];
    }
    return Tensor<T>::make_result(std::move(out_shape), std::move(out), {x},
                                  [index = std::move(index)](auto& self, auto& in) {
                                      T* gx = grad_of(in[0]);
                                      if (!gx) return;
                                      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += self.grad[i];
                                  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    std::vector<T> out(x.values());
    return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [](auto& self, auto& in) {
        T* gx = grad_of(in[0]);
        if (!gx) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
}

/// Gather index for an axis permutation: out axis k is input axis axes[k].
inline std::vector<std::size_t> permute_index(const Shape& in_shape, const std::vector<std::size_t>& axes,
                                              Shape* out_shape) {
    const std::size_t r = in_shape.size();
    if (axes.size() != r) throw DimensionError("permute: axes rank mismatch");
    std::vector<bool> used(r, false);
    Shape os(r);
    for (std::size_t k = 0; k < r; ++k) {
        if (axes[k] >= r || used[axes[k]]) throw DimensionError("permute: invalid axes");
        used[axes[k]] = true;
        os[k] = in_shape[axes[k]];
    }
    const auto in_st = detail::strides_of(in_shape);
    std::vector<std::size_t> src_st(r);
    for (std::size_t k = 0; k < r; ++k) src_st[k] = in_st[axes[k]];
    std::vector<std::size_t> index(numel_of(os));
    std::vector<std::size_t> ctr(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
        index[i] = off;
        for (std::size_t k = r; k-- > 0;) {
            ++ctr[k];
            off += src_st[k];
            if (ctr[k] < os[k]) break;
            off -= src_st[k] * os[k];
            ctr[k] = 0;
        }
    }
    if (out_shape) *out_shape = os;
    return index;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    Shape os;
    auto idx = permute_index(x.shape(), axes, &os);
    return gather(x, std::move(os), std::move(idx));
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2");
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
    return permute(x, axes);
}

/// Channels [begin, end) of the last axis.
template <class T>
Tensor<T> slice_lastdim(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    const std::size_t c = x.shape().back();
    if (begin >= end || end > c) throw DimensionError("slice_lastdim: bad range for shape " + to_string(x.shape()));
    const std::size_t rows = x.numel() / c, w = end - begin;
    std::vector<std::size_t> idx(rows * w);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) idx[r * w + j] = r * c + begin + j;
    Shape os = x.shape();
    os.back() = w;
    return gather(x, std::move(os), std::move(idx));
}

template <class T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw DimensionError("concat_lastdim: no inputs");
    Shape lead = xs[0].shape();
    lead.pop_back();
    std::size_t total = 0;
    for (const auto& x : xs) {
        Shape l = x.shape();
        l.pop_back();
        if (l != lead) throw DimensionError("concat_lastdim: leading extents differ");
        total += x.shape().back();
    }
    const std::size_t rows = numel_of(lead);
    std::vector<T> out(rows * total);
    std::size_t off = 0;
    for (const auto& x : xs) {
        const std::size_t c = x.shape().back();
        const auto src = x.data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src.begin() + r * c, c, out.begin() + r * total + off);
        off += c;
    }
    std::vector<std::size_t> widths;
    for (const auto& x : xs) widths.push_back(x.shape().back());
    Shape os = lead;
    os.push_back(total);
    return Tensor<T>::make_result(std::move(os), std::move(out), xs,
                                  [rows, total, widths](auto& self, auto& in) {
                                      std::size_t o = 0;
                                      for (std::size_t k = 0; k < in.size(); ++k) {
                                          T* g = grad_of(in[k]);
                                          const std::size_t c = widths[k];
                                          if (g)
                                              for (std::size_t r = 0; r < rows; ++r)
                                                  for (std::size_t j = 0; j < c; ++j)
                                                      g[r * c + j] += self.grad[r * total + o + j];
                                          o += c;
                                      }
                                  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](auto& self, auto& in) {
        for (int k = 0; k < 2; ++k)
            if (T* g = grad_of(in[k]))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](auto& self, auto& in) {
        if (T* g = grad_of(in[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = grad_of(in[1]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](auto& self, auto& in) {
        if (T* g = grad_of(in[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * in[1]->data[i];
        if (T* g = grad_of(in[1]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * in[0]->data[i];
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    std::vector<T> out(a.values());
    for (auto& v : out) v *= c;
    return Tensor<T>::make_result(a.shape(), std::move(out), {a}, [c](auto& self, auto& in) {
        if (T* g = grad_of(in[0]))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += c * self.grad[i];
    });
}

/// Sum of all elements, shape (1).
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = 0;
    for (const T v : a.data()) s += v;
    return Tensor<T>::make_result(Shape{1}, {s}, {a}, [](auto& self, auto& in) {
        if (T* g = grad_of(in[0]))
            for (std::size_t i = 0; i < in[0]->data.size(); ++i) g[i] += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// mean(|a - b|), the pixel L1 loss.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "l1_loss");
    const auto x = a.data(), y = b.data();
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(double(x[i]) - double(y[i]));
    const T n = static_cast<T>(x.size());
    return Tensor<T>::make_result(Shape{1}, {static_cast<T>(s / double(x.size()))}, {a, b},
                                  [n](auto& self, auto& in) {
                                      const T g0 = self.grad[0] / n;
                                      T* ga = grad_of(in[0]);
                                      T* gb = grad_of(in[1]);
                                      for (std::size_t i = 0; i < in[0]->data.size(); ++i) {
                                          const T d = in[0]->data[i] - in[1]->data[i];
                                          const T sg = d > 0 ? g0 : (d < 0 ? -g0 : T(0));
                                          if (ga) ga[i] += sg;
                                          if (gb) gb[i] -= sg;
                                      }
                                  });
}

/// Tanh-approximation GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T k0 = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k1 = T(0.044715);
    std::vector<T> out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T a = v[i];
        out[i] = T(0.5) * a * (T(1) + std::tanh(k0 * (a + k1 * a * a * a)));
    }
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](auto& self, auto& in) {
        T* g = grad_of(in[0]);
        if (!g) return;
        const auto& v = in[0]->data;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const T a = v[i];
            const T t = std::tanh(k0 * (a + k1 * a * a * a));
            const T d = T(0.5) * (T(1) + t) + T(0.5) * a * (T(1) - t * t) * k0 * (T(1) + T(3) * k1 * a * a);
            g[i] += self.grad[i] * d;
        }
    });
}

// ---------------------------------------------------------------------------
// Products

/// Batched matrix product a[..., m, k] x b[..., k, n] with broadcasting over the leading axes.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul: operands need rank >= 2, got " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    const std::size_t m = a.dim(a.rank() - 2), k = a.shape().back();
    const std::size_t k2 = b.dim(b.rank() - 2), n = b.shape().back();
    if (k != k2)
        throw DimensionError("matmul: inner extents differ for " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    const Shape ab(a.shape().begin(), a.shape().end() - 2);
    const Shape bb(b.shape().begin(), b.shape().end() - 2);
    const std::size_t br = std::max(ab.size(), bb.size());
    Shape batch(br);
    for (std::size_t i = 0; i < br; ++i) {
        const std::size_t ea = i + ab.size() >= br ? ab[i + ab.size() - br] : 1;
        const std::size_t eb = i + bb.size() >= br ? bb[i + bb.size() - br] : 1;
        if (ea != eb && ea != 1 && eb != 1)
            throw DimensionError("matmul: batch axes not broadcast-compatible for " + to_string(a.shape()) + " x " +
                                 to_string(b.shape()));
        batch[i] = std::max(ea, eb);
    }
    const std::size_t nb = numel_of(batch);
    std::vector<std::size_t> a_off(nb), b_off(nb);
    {
        std::vector<std::size_t> ctr(br, 0);
        for (std::size_t t = 0; t < nb; ++t) {
            std::size_t ia = 0, ib = 0;
            for (std::size_t i = 0; i < br; ++i) {
                if (i + ab.size() >= br) {
                    const std::size_t e = ab[i + ab.size() - br];
                    ia = ia * e + (e == 1 ? 0 : ctr[i]);
                }
                if (i + bb.size() >= br) {
                    const std::size_t e = bb[i + bb.size() - br];
                    ib = ib * e + (e == 1 ? 0 : ctr[i]);
                }
            }
            a_off[t] = ia * m * k;
            b_off[t] = ib * k * n;
            for (std::size_t i = br; i-- > 0;) {
                if (++ctr[i] < batch[i]) break;
                ctr[i] = 0;
            }
        }
    }
    count_macs(static_cast<std::uint64_t>(nb) * m * k * n);
    std::vector<T> out(nb * m * n, T(0));
    const T* A = a.data().data();
    const T* B = b.data().data();
    parallel_for(nb, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t t = lo; t < hi; ++t) {
            const T* Ab = A + a_off[t];
            const T* Bb = B + b_off[t];
            T* Cb = out.data() + t * m * n;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    const T av = Ab[i * k + kk];
                    const T* brow = Bb + kk * n;
                    T* crow = Cb + i * n;
                    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
        }
    });
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    return Tensor<T>::make_result(
        std::move(os), std::move(out), {a, b},
        [m, k, n, nb, a_off = std::move(a_off), b_off = std::move(b_off)](auto& self, auto& in) {
            T* ga = grad_of(in[0]);
            T* gb = grad_of(in[1]);
            const T* A = in[0]->data.data();
            const T* B = in[1]->data.data();
            for (std::size_t t = 0; t < nb; ++t) {
                const T* G = self.grad.data() + t * m * n;
                if (ga) {
                    T* gA = ga + a_off[t];
                    const T* Bb = B + b_off[t];
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            T s = 0;
                            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * Bb[kk * n + j];
                            gA[i * k + kk] += s;
                        }
                }
                if (gb) {
                    T* gB = gb + b_off[t];
                    const T* Ab = A + a_off[t];
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const T av = Ab[i * k + kk];
                            for (std::size_t j = 0; j < n; ++j) gB[kk * n + j] += av * G[i * n + j];
                        }
                }
            }
        });
}

/// x[..., Cin] * w[Cin, Cout] + bias[Cout] applied along the last axis.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias = std::nullopt) {
    detail::require_rank(w, 2, "linear weight");
    const std::size_t cin = x.shape().back(), cout = w.dim(1);
    if (w.dim(0) != cin)
        throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                             to_string(w.shape()));
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) throw DimensionError("linear: bias extent mismatch");
    const std::size_t rows = x.numel() / cin;
    count_macs(static_cast<std::uint64_t>(rows) * cin * cout);
    std::vector<T> out(rows * cout, T(0));
    const T* X = x.data().data();
    const T* Wt = w.data().data();
    const T* Bs = bias ? bias->data().data() : nullptr;
    parallel_for(
        rows,
        [&](std::size_t lo, std::size_t hi) {
            for (std::size_t r = lo; r < hi; ++r) {
                T* o = out.data() + r * cout;
                if (Bs) std::copy_n(Bs, cout, o);
                const T* xr = X + r * cin;
                for (std::size_t i = 0; i < cin; ++i) {
                    const T xv = xr[i];
                    const T* wr = Wt + i * cout;
                    for (std::size_t j = 0; j < cout; ++j) o[j] += xv * wr[j];
                }
            }
        },
        64);
    Shape os = x.shape();
    os.back() = cout;
    std::vector<Tensor<T>> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return Tensor<T>::make_result(std::move(os), std::move(out), std::move(inputs),
                                  [rows, cin, cout](auto& self, auto& in) {
                                      const T* G = self.grad.data();
                                      const T* X = in[0]->data.data();
                                      const T* Wt = in[1]->data.data();
                                      if (T* gx = grad_of(in[0]))
                                          for (std::size_t r = 0; r < rows; ++r)
                                              for (std::size_t i = 0; i < cin; ++i) {
                                                  T s = 0;
                                                  const T* wr = Wt + i * cout;
                                                  const T* gr = G + r * cout;
                                                  for (std::size_t j = 0; j < cout; ++j) s += gr[j] * wr[j];
                                                  gx[r * cin + i] += s;
                                              }
                                      if (T* gw = grad_of(in[1]))
                                          for (std::size_t r = 0; r < rows; ++r)
                                              for (std::size_t i = 0; i < cin; ++i) {
                                                  const T xv = X[r * cin + i];
                                                  T* gwr = gw + i * cout;
                                                  const T* gr = G + r * cout;
                                                  for (std::size_t j = 0; j < cout; ++j) gwr[j] += xv * gr[j];
                                              }
                                      if (in.size() > 2)
                                          if (T* gb = grad_of(in[2]))
                                              for (std::size_t r = 0; r < rows; ++r)
                                                  for (std::size_t j = 0; j < cout; ++j) gb[j] += G[r * cout + j];
                                  });
}

/// Zero-padded "same" cross-correlation on channels-last input.
/// x: (B,H,W,Cin), w: (kh,kw,Cin/groups,Cout), bias: (Cout).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias = std::nullopt,
                 std::size_t groups = 1) {
    detail::require_rank(x, 4, "conv2d input");
    detail::require_rank(w, 4, "conv2d weight");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), cin = x.dim(3);
    const std::size_t kh = w.dim(0), kw = w.dim(1), cig = w.dim(2), cout = w.dim(3);
    if (groups == 0 || cin % groups != 0 || cout % groups != 0)
        throw ConfigError("conv2d: groups=" + std::to_string(groups) + " must divide Cin=" + std::to_string(cin) +
                          " and Cout=" + std::to_string(cout));
    if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd");
    if (cig != cin / groups)
        throw DimensionError("conv2d: weight " + to_string(w.shape()) + " does not match input " +
                             to_string(x.shape()) + " with groups=" + std::to_string(groups));
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) throw DimensionError("conv2d: bias extent mismatch");
    const std::size_t cog = cout / groups;
    const long ph = long(kh / 2), pw = long(kw / 2);
    count_macs(static_cast<std::uint64_t>(B) * H * W * kh * kw * cig * cout);

    std::vector<T> out(B * H * W * cout, T(0));
    const T* X = x.data().data();
    const T* Wt = w.data().data();
    const T* Bs = bias ? bias->data().data() : nullptr;
    const bool depthwise = cig == 1 && cog == 1;
    parallel_for(B * H, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t by = lo; by < hi; ++by) {
            const std::size_t b = by / H, y = by % H;
            for (std::size_t xx = 0; xx < W; ++xx) {
                T* o = out.data() + ((b * H + y) * W + xx) * cout;
                if (Bs) std::copy_n(Bs, cout, o);
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const long iy = long(y) + long(ky) - ph;
                    if (iy < 0 || iy >= long(H)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const long ix = long(xx) + long(kx) - pw;
                        if (ix < 0 || ix >= long(W)) continue;
                        const T* xin = X + ((b * H + std::size_t(iy)) * W + std::size_t(ix)) * cin;
                        const T* wk = Wt + (ky * kw + kx) * cig * cout;
                        if (depthwise) {
                            for (std::size_t c = 0; c < cout; ++c) o[c] += xin[c] * wk[c];
                            continue;
                        }
                        for (std::size_t g = 0; g < groups; ++g)
                            for (std::size_t ci = 0; ci < cig; ++ci) {
                                const T xv = xin[g * cig + ci];
                                const T* wr = wk + ci * cout + g * cog;
                                T* og = o + g * cog;
                                for (std::size_t co = 0; co < cog; ++co) og[co] += xv * wr[co];
                            }
                    }
                }
            }
        }
    });

    std::vector<Tensor<T>> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    return Tensor<T>::make_result(
        Shape{B, H, W, cout}, std::move(out), std::move(inputs),
        [=](auto& self, auto& in) {
            T* gx = grad_of(in[0]);
            T* gw = grad_of(in[1]);
            T* gb = in.size() > 2 ? grad_of(in[2]) : nullptr;
            const T* X = in[0]->data.data();
            const T* Wt = in[1]->data.data();
            const T* G = self.grad.data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t xx = 0; xx < W; ++xx) {
                        const T* go = G + ((b * H + y) * W + xx) * cout;
                        if (gb)
                            for (std::size_t c = 0; c < cout; ++c) gb[c] += go[c];
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            const long iy = long(y) + long(ky) - ph;
                            if (iy < 0 || iy >= long(H)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                const long ix = long(xx) + long(kx) - pw;
                                if (ix < 0 || ix >= long(W)) continue;
                                const std::size_t xoff = ((b * H + std::size_t(iy)) * W + std::size_t(ix)) * cin;
                                const std::size_t woff = (ky * kw + kx) * cig * cout;
                                for (std::size_t g = 0; g < groups; ++g)
                                    for (std::size_t ci = 0; ci < cig; ++ci) {
                                        const std::size_t xi = xoff + g * cig + ci;
                                        const std::size_t wi = woff + ci * cout + g * cog;
                                        const T* gog = go + g * cog;
                                        if (gx) {
                                            T s = 0;
                                            for (std::size_t co = 0; co < cog; ++co) s += gog[co] * Wt[wi + co];
                                            gx[xi] += s;
                                        }
                                        if (gw) {
                                            const T xv = X[xi];
                                            for (std::size_t co = 0; co < cog; ++co) gw[wi + co] += xv * gog[co];
                                        }
                                    }
                            }
                        }
                    }
        });
}

// ---------------------------------------------------------------------------
// Normalizations

/// Numerically stabilized softmax over the last axis.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    std::vector<T> out(x.numel());
    const auto v = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = v.data() + r * n;
        T* o = out.data() + r * n;
        const T mx = *std::max_element(xr, xr + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(xr[j] - mx));
        const T inv = T(1) / s;
        for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    }
    return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [rows, n](auto& self, auto& in) {
        T* g = grad_of(in[0]);
        if (!g) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.data.data() + r * n;
            const T* gy = self.grad.data() + r * n;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
        }
    });
}

/// Per-position normalization over the last (channel) axis followed by an affine map.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const std::size_t c = x.shape().back();
    if (gamma.numel() != c || beta.numel() != c)
        throw DimensionError("layer_norm: affine parameters must have " + std::to_string(c) + " entries");
    if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / c;
    std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
    const auto v = x.data();
    const auto gm = gamma.data(), bt = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = v.data() + r * c;
        T mu = 0;
        for (std::size_t j = 0; j < c; ++j) mu += xr[j];
        mu /= T(c);
        T var = 0;
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= T(c);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (std::size_t j = 0; j < c; ++j) {
            const T h = (xr[j] - mu) * rs;
            xhat[r * c + j] = h;
            out[r * c + j] = gm[j] * h + bt[j];
        }
    }
    return Tensor<T>::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](auto& self, auto& in) {
            T* gx = grad_of(in[0]);
            T* gg = grad_of(in[1]);
            T* gbt = grad_of(in[2]);
            const T* gm = in[1]->data.data();
            std::vector<T> dh(c);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* gy = self.grad.data() + r * c;
                const T* h = xhat.data() + r * c;
                T m1 = 0, m2 = 0;
                for (std::size_t j = 0; j < c; ++j) {
                    if (gg) gg[j] += gy[j] * h[j];
                    if (gbt) gbt[j] += gy[j];
                    dh[j] = gy[j] * gm[j];
                    m1 += dh[j];
                    m2 += dh[j] * h[j];
                }
                if (!gx) continue;
                m1 /= T(c);
                m2 /= T(c);
                for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += rstd[r] * (dh[j] - m1 - h[j] * m2);
            }
        });
}

/// Scales each last-axis vector to unit Euclidean norm; vectors shorter than eps are divided by eps.
template <class T>
Tensor<T> l2_normalize_lastdim(const Tensor<T>& x, T eps = T(1e-12)) {
    const std::size_t n = x.shape().back(), rows = x.numel() / n;
    std::vector<T> out(x.numel()), norms(rows);
    const auto v = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += v[r * n + j] * v[r * n + j];
        const T nr = std::max(std::sqrt(s), eps);
        norms[r] = nr;
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = v[r * n + j] / nr;
    }
    return Tensor<T>::make_result(x.shape(), std::move(out), {x},
                                  [rows, n, eps, norms = std::move(norms)](auto& self, auto& in) {
                                      T* g = grad_of(in[0]);
                                      if (!g) return;
                                      for (std::size_t r = 0; r < rows; ++r) {
                                          const T* y = self.data.data() + r * n;
                                          const T* gy = self.grad.data() + r * n;
                                          const bool clamped = norms[r] <= eps;
                                          T dot = 0;
                                          if (!clamped)
                                              for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
                                          for (std::size_t j = 0; j < n; ++j)
                                              g[r * n + j] += (gy[j] - y[j] * dot) / norms[r];
                                      }
                                  });
}

// ---------------------------------------------------------------------------
// Spatial rearrangements on (B,H,W,C)

/// Depth-to-space: out[b, h*r+i, w*r+j, c] = x[b, h, w, c*r*r + i*r + j].
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    detail::require_rank(x, 4, "pixel_shuffle");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (r == 0 || C % (r * r) != 0)
        throw DimensionError("pixel_shuffle: channels " + std::to_string(C) + " not divisible by r^2=" +
                             std::to_string(r * r));
    const std::size_t co = C / (r * r);
    std::vector<std::size_t> idx(x.numel());
    std::size_t t = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H * r; ++y)
            for (std::size_t xx = 0; xx < W * r; ++xx)
                for (std::size_t c = 0; c < co; ++c)
                    idx[t++] = ((b * H + y / r) * W + xx / r) * C + c * r * r + (y % r) * r + (xx % r);
    return gather(x, Shape{B, H * r, W * r, co}, std::move(idx));
}

/// Space-to-depth, the inverse of pixel_shuffle.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, std::size_t r) {
    detail::require_rank(x, 4, "pixel_unshuffle");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (r == 0 || H % r != 0 || W % r != 0)
        throw DimensionError("pixel_unshuffle: spatial extents not divisible by " + std::to_string(r));
    const std::size_t Ho = H / r, Wo = W / r, Co = C * r * r;
    std::vector<std::size_t> idx(x.numel());
    std::size_t t = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xx = 0; xx < Wo; ++xx)
                for (std::size_t k = 0; k < Co; ++k) {
                    const std::size_t c = k / (r * r), i = (k / r) % r, j = k % r;
                    idx[t++] = ((b * H + y * r + i) * W + xx * r + j) * C + c;
                }
    return gather(x, Shape{B, Ho, Wo, Co}, std::move(idx));
}

/// Cyclic shift: out[y, x] = in[(y + dy) mod H, (x + dx) mod W].
template <class T>
Tensor<T> roll_hw(const Tensor<T>& x, long dy, long dx) {
    detail::require_rank(x, 4, "roll_hw");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    auto wrap = [](long v, std::size_t n) { return std::size_t(((v % long(n)) + long(n)) % long(n)); };
    std::vector<std::size_t> idx(x.numel());
    std::size_t t = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                const std::size_t base = ((b * H + wrap(long(y) + dy, H)) * W + wrap(long(xx) + dx, W)) * C;
                for (std::size_t c = 0; c < C; ++c) idx[t++] = base + c;
            }
    return gather(x, x.shape(), std::move(idx));
}

/// Mirror index without edge repetition (…2 1 0 1 2…), periodic for any overhang.
inline std::size_t reflect_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * (long(n) - 1);
    long m = ((i % period) + period) % period;
    return std::size_t(m < long(n) ? m : period - m);
}

/// Reflection-pads to (Ht, Wt) at the bottom/right edges.
template <class T>
Tensor<T> reflect_pad_hw(const Tensor<T>& x, std::size_t Ht, std::size_t Wt) {
    detail::require_rank(x, 4, "reflect_pad_hw");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (Ht < H || Wt < W) throw DimensionError("reflect_pad_hw: target smaller than input");
    if (Ht == H && Wt == W) return x;
    std::vector<std::size_t> idx(B * Ht * Wt * C);
    std::size_t t = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < Ht; ++y)
            for (std::size_t xx = 0; xx < Wt; ++xx) {
                const std::size_t base = ((b * H + reflect_index(long(y), H)) * W + reflect_index(long(xx), W)) * C;
                for (std::size_t c = 0; c < C; ++c) idx[t++] = base + c;
            }
    return gather(x, Shape{B, Ht, Wt, C}, std::move(idx));
}

/// Top-left (Ht, Wt) crop.
template <class T>
Tensor<T> crop_hw(const Tensor<T>& x, std::size_t Ht, std::size_t Wt) {
    detail::require_rank(x, 4, "crop_hw");
    const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (Ht > H || Wt > W || Ht == 0 || Wt == 0) throw DimensionError("crop_hw: crop exceeds input");
    if (Ht == H && Wt == W) return x;
    std::vector<std::size_t> idx(B * Ht * Wt * C);
    std::size_t t = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < Ht; ++y)
            for (std::size_t xx = 0; xx < Wt; ++xx)
                for (std::size_t c = 0; c < C; ++c) idx[t++] = ((b * H + y) * W + xx) * C + c;
    return gather(x, Shape{B, Ht, Wt, C}, std::move(idx));
}

}  // namespace hiflow
