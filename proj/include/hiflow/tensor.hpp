#pragma once

#include <hiflow/errors.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#ifndef HIFLOW_CHECK_FINITE
#ifdef NDEBUG
#define HIFLOW_CHECK_FINITE 0
#else
#define HIFLOW_CHECK_FINITE 1
#endif
#endif

namespace hiflow {

using Shape = std::vector<std::size_t>;

enum class Precision : std::uint8_t { F32 = 0, F64 = 1 };

template <class T>
constexpr Precision precision_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "F32 or F64 only");
    return std::is_same_v<T, float> ? Precision::F32 : Precision::F64;
}

inline constexpr std::size_t kMaxRank = 6;

inline std::size_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

// ---------------------------------------------------------------------------
// Global switches: gradient recording and MAC instrumentation.

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
struct MacState {
    bool enabled = false;
    std::uint64_t count = 0;
};
inline MacState& mac_state() {
    thread_local MacState state;
    return state;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Counts multiply-accumulates issued by matmul / linear / conv2d forward kernels
/// while alive. Scopes nest; the innermost owns the tally.
class MacScope {
public:
    MacScope() : saved_(detail::mac_state()) { detail::mac_state() = {true, 0}; }
    ~MacScope() {
        const auto inner = detail::mac_state().count;
        detail::mac_state() = saved_;
        if (saved_.enabled) detail::mac_state().count += inner;
    }
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

    std::uint64_t count() const { return detail::mac_state().count; }

private:
    detail::MacState saved_;
};

inline void count_macs(std::uint64_t n) {
    auto& st = detail::mac_state();
    if (st.enabled) st.count += n;
}

// ---------------------------------------------------------------------------

namespace detail {
template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};
}  // namespace detail

/// Dense row-major tensor handle with reverse-mode differentiation.
///
/// Copies share storage (like a framework tensor handle); use clone() for a deep copy.
/// Results of ops record their inputs only when some input requires a gradient and
/// recording is enabled.
template <class T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : Tensor() {
        check_shape(shape);
        node_->data.assign(numel_of(shape), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : Tensor() {
        check_shape(shape);
        if (numel_of(shape) != values.size())
            throw DimensionError("tensor shape " + to_string(shape) + " needs " +
                                 std::to_string(numel_of(shape)) + " values, got " +
                                 std::to_string(values.size()));
        node_->shape = std::move(shape);
        node_->data = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }
    static constexpr Precision precision() { return precision_of<T>(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    std::vector<T>& values() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    T& operator[](std::size_t i) { return node_->data[i]; }
    const T& operator[](std::size_t i) const { return node_->data[i]; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
        return node_->data[0];
    }

    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    /// New leaf sharing no storage or history.
    Tensor clone() const {
        Tensor out(shape(), std::vector<T>(node_->data));
        out.node_->requires_grad = node_->requires_grad;
        return out;
    }
    /// Same values, cut from the graph.
    Tensor detach() const { return Tensor(shape(), std::vector<T>(node_->data)); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> v(node_->data.begin(), node_->data.end());
        return Tensor<U>(shape(), std::move(v));
    }

    bool same_storage(const Tensor& o) const { return node_ == o.node_; }

    /// Backpropagates from a single-element tensor, accumulating into leaf grads.
    void backward() const {
        if (numel() != 1)
            throw ContractError("backward() requires a scalar output, got shape " + to_string(shape()));
        std::vector<detail::Node<T>*> order;
        std::unordered_set<detail::Node<T>*> seen;
        // Iterative post-order DFS; deep stacks would overflow recursion.
        std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                auto* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward) (*it)->backward();
        }
    }

    /// Builds an op result. `backward` receives (out_node, parents) and must accumulate
    /// into parents that require grad.
    template <class BackwardFn>
    static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                              BackwardFn&& backward) {
        Tensor out(std::move(shape), std::move(data));
#if HIFLOW_CHECK_FINITE
        for (const T v : out.node_->data)
            if (!std::isfinite(v)) throw NumericError("non-finite value produced by forward op");
#endif
        if (!grad_enabled()) return out;
        bool any = false;
        for (const auto& in : inputs) any = any || in.node_->requires_grad;
        if (!any) return out;
        auto* self = out.node_.get();
        self->requires_grad = true;
        for (auto& in : inputs) self->parents.push_back(in.node_);
        std::vector<detail::Node<T>*> raw;
        for (auto& p : self->parents) raw.push_back(p.get());
        self->backward = [self, raw = std::move(raw), fn = std::forward<BackwardFn>(backward)]() mutable {
            if (self->grad.size() != self->data.size()) return;
            fn(*self, raw);
        };
        return out;
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty() || shape.size() > kMaxRank)
            throw DimensionError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                                 std::to_string(shape.size()));
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }

    NodePtr node_;
};

/// Gradient slot of a parent node, allocated on demand; nullptr if it does not require grad.
template <class T>
T* grad_of(detail::Node<T>* n) {
    if (!n->requires_grad) return nullptr;
    n->ensure_grad();
    return n->grad.data();
}

}  // namespace hiflow
