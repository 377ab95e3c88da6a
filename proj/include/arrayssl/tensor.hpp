#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <unordered_set>
#include <utility>

#include "arrayssl/common.hpp"
#include "arrayssl/rng.hpp"

namespace arrayssl {

// ---------------------------------------------------------------------------
// Reverse-mode tape. A TensorNode owns an f32 value buffer plus, while a
// backward pass is live, a same-shape gradient buffer. Ops link nodes into an
// acyclic graph through `parents` and record a closure that pushes the node's
// gradient into its parents. Storage is f32; reductions accumulate in f64.
// ---------------------------------------------------------------------------

struct TensorNode {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn;
    // High-precision mirror of scalar reduction results, used by the
    // finite-difference harness. NaN when not applicable.
    double scalar_hi = std::numeric_limits<double>::quiet_NaN();

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
};

// When disabled, ops stop recording parents/backward closures; outputs are
// plain buffers. Used for validation passes.
class GradMode {
public:
    static bool enabled() { return flag(); }
    static void set(bool on) { flag() = on; }

private:
    static bool& flag() {
        thread_local bool enabled_ = true;
        return enabled_;
    }
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0f); }

    static Tensor full(Shape shape, float v) {
        auto n = std::make_shared<TensorNode>();
        int64_t count = arrayssl::numel(shape);
        if (count < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n->shape = std::move(shape);
        n->value.assign(static_cast<size_t>(count), v);
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<float> data) {
        if (arrayssl::numel(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(float v) { return from_data({}, {v}); }

    // uniform in [-bound, bound]
    static Tensor rand_uniform(Shape shape, float bound, Rng& rng) {
        Tensor t = zeros(std::move(shape));
        for (float& v : t.node_->value)
            v = static_cast<float>(rng.uniform(-bound, bound));
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng) {
        Tensor t = zeros(std::move(shape));
        for (float& v : t.node_->value) v = static_cast<float>(rng.normal());
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t dim(size_t i) const { return node_->shape.at(i); }
    size_t ndim() const { return node_->shape.size(); }
    int64_t numel() const { return node_->numel(); }

    float* data() { return node_->value.data(); }
    const float* data() const { return node_->value.data(); }
    std::vector<float>& values() { return node_->value; }
    const std::vector<float>& values() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    // Valid after backward() has visited this node.
    const std::vector<float>& grad() const {
        if (node_->grad.size() != node_->value.size())
            throw ValueError("tensor has no gradient; call backward() first");
        return node_->grad;
    }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }

    float item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    // Scalar value with the f64 accumulation result when one exists.
    double item_hi() const {
        if (numel() != 1) throw ShapeError("item_hi() on non-scalar tensor " + shape_str(shape()));
        return std::isnan(node_->scalar_hi) ? static_cast<double>(node_->value[0])
                                            : node_->scalar_hi;
    }

    const std::shared_ptr<TensorNode>& node() const { return node_; }

    // Reverse pass from a scalar. Gradients of every node reached through the
    // graph are (re)initialized to zero, the root is seeded with 1, and each
    // recorded closure runs exactly once in reverse topological order.
    void backward() const;

private:
    std::shared_ptr<TensorNode> node_;
};

namespace detail {

inline std::shared_ptr<TensorNode> new_node(Shape shape) {
    auto n = std::make_shared<TensorNode>();
    int64_t count = arrayssl::numel(shape);
    n->shape = std::move(shape);
    n->value.resize(static_cast<size_t>(count));
    return n;
}

inline bool track(std::initializer_list<const Tensor*> inputs) {
    if (!GradMode::enabled()) return false;
    for (const Tensor* t : inputs)
        if ((*t).requires_grad()) return true;
    return false;
}

// Attach parents + backward closure when gradients are being recorded.
inline void record(const std::shared_ptr<TensorNode>& out,
                   std::vector<std::shared_ptr<TensorNode>> parents,
                   std::function<void()> fn) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

inline void Tensor::backward() const {
    if (!node_) throw ValueError("backward() on undefined tensor");
    if (numel() != 1) throw ShapeError("backward() requires a scalar root, got " +
                                       shape_str(shape()));
    // Iterative post-order DFS; graphs can be deep at many train steps.
    std::vector<TensorNode*> topo;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            TensorNode* p = n->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    for (TensorNode* n : topo) n->grad.assign(n->value.size(), 0.0f);
    node_->grad[0] = 1.0f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (detail::track({&a, &b})) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node(), b.node()}, [an, bn, on] {
            int64_t n = on->numel();
            if (an->requires_grad)
                for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
            if (bn->requires_grad)
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
        });
    }
    return Tensor(out);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    if (detail::track({&a, &b})) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node(), b.node()}, [an, bn, on] {
            int64_t n = on->numel();
            if (an->requires_grad)
                for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
            if (bn->requires_grad)
                for (int64_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
        });
    }
    return Tensor(out);
}

// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    if (detail::track({&a, &b})) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node(), b.node()}, [an, bn, on] {
            int64_t n = on->numel();
            if (an->requires_grad)
                for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
            if (bn->requires_grad)
                for (int64_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
        });
    }
    return Tensor(out);
}

inline Tensor mul_scalar(const Tensor& a, float c) {
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on, c] {
            int64_t n = on->numel();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * c;
        });
    }
    return Tensor(out);
}

inline Tensor add_scalar(const Tensor& a, float c) {
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + c;
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            int64_t n = on->numel();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        });
    }
    return Tensor(out);
}

inline Tensor relu(const Tensor& a) {
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            int64_t n = on->numel();
            for (int64_t i = 0; i < n; ++i)
                if (an->value[i] > 0.0f) an->grad[i] += on->grad[i];
        });
    }
    return Tensor(out);
}

inline Tensor sigmoid(const Tensor& a) {
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        double x = pa[i];
        po[i] = static_cast<float>(1.0 / (1.0 + std::exp(-x)));
    }
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            int64_t n = on->numel();
            for (int64_t i = 0; i < n; ++i) {
                float s = on->value[i];
                an->grad[i] += on->grad[i] * s * (1.0f - s);
            }
        });
    }
    return Tensor(out);
}

// ln(1 + e^x), linear for large x to avoid overflow
inline Tensor softplus(const Tensor& a) {
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) {
        double x = pa[i];
        po[i] = static_cast<float>(x > 20.0 ? x : std::log1p(std::exp(x)));
    }
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            int64_t n = on->numel();
            for (int64_t i = 0; i < n; ++i) {
                double x = an->value[i];
                an->grad[i] += on->grad[i] * static_cast<float>(1.0 / (1.0 + std::exp(-x)));
            }
        });
    }
    return Tensor(out);
}

// Natural log; caller guarantees positive inputs.
inline Tensor log(const Tensor& a) {
    auto out = detail::new_node(a.shape());
    const float* pa = a.data();
    float* po = out->value.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = std::log(pa[i]);
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            int64_t n = on->numel();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] / an->value[i];
        });
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// Reductions (f64 accumulation)
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    const float* pa = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    auto out = detail::new_node({});
    out->value[0] = static_cast<float>(acc);
    out->scalar_hi = acc;
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            float g = on->grad[0];
            int64_t n = an->numel();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += g;
        });
    }
    return Tensor(out);
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    double acc = 0.0;
    const float* pa = a.data();
    int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += pa[i];
    acc /= static_cast<double>(n);
    auto out = detail::new_node({});
    out->value[0] = static_cast<float>(acc);
    out->scalar_hi = acc;
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            int64_t n = an->numel();
            float g = on->grad[0] / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) an->grad[i] += g;
        });
    }
    return Tensor(out);
}

// Mean squared error over all elements.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mse");
    if (a.numel() == 0) throw ShapeError("mse of empty tensors");
    const float* pa = a.data();
    const float* pb = b.data();
    int64_t n = a.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        acc += d * d;
    }
    acc /= static_cast<double>(n);
    auto out = detail::new_node({});
    out->value[0] = static_cast<float>(acc);
    out->scalar_hi = acc;
    if (detail::track({&a, &b})) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node(), b.node()}, [an, bn, on] {
            int64_t n = an->numel();
            float scale = 2.0f * on->grad[0] / static_cast<float>(n);
            for (int64_t i = 0; i < n; ++i) {
                float d = (an->value[i] - bn->value[i]) * scale;
                if (an->requires_grad) an->grad[i] += d;
                if (bn->requires_grad) bn->grad[i] -= d;
            }
        });
    }
    return Tensor(out);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape new_shape) {
    if (numel(new_shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
    auto out = detail::new_node(std::move(new_shape));
    out->value = a.values();
    if (detail::track({&a})) {
        TensorNode* an = a.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node()}, [an, on] {
            int64_t n = on->numel();
            for (int64_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
        });
    }
    return Tensor(out);
}

// Remove a size-1 axis.
inline Tensor squeeze(const Tensor& a, size_t axis) {
    if (axis >= a.ndim())
        throw ShapeError("squeeze: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(a.shape()));
    if (a.shape()[axis] != 1)
        throw ShapeError("squeeze: axis " + std::to_string(axis) + " of " +
                         shape_str(a.shape()) + " is not 1");
    Shape s = a.shape();
    s.erase(s.begin() + static_cast<ptrdiff_t>(axis));
    return reshape(a, std::move(s));
}

// Concatenate along an axis; all other dims must match.
inline Tensor concat(const Tensor& a, const Tensor& b, size_t axis) {
    if (a.ndim() != b.ndim() || axis >= a.ndim())
        throw ShapeError("concat: incompatible ranks or axis for " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    for (size_t i = 0; i < a.ndim(); ++i)
        if (i != axis && a.shape()[i] != b.shape()[i])
            throw ShapeError("concat: shapes differ off-axis: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    Shape s = a.shape();
    s[axis] += b.shape()[axis];
    auto out = detail::new_node(std::move(s));

    int64_t outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    int64_t inner = 1;
    for (size_t i = axis + 1; i < a.ndim(); ++i) inner *= a.shape()[i];
    int64_t wa = a.shape()[axis] * inner;
    int64_t wb = b.shape()[axis] * inner;
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out->value.data();
    for (int64_t o = 0; o < outer; ++o) {
        std::memcpy(po + o * (wa + wb), pa + o * wa, sizeof(float) * static_cast<size_t>(wa));
        std::memcpy(po + o * (wa + wb) + wa, pb + o * wb,
                    sizeof(float) * static_cast<size_t>(wb));
    }
    if (detail::track({&a, &b})) {
        TensorNode* an = a.node().get();
        TensorNode* bn = b.node().get();
        TensorNode* on = out.get();
        detail::record(out, {a.node(), b.node()}, [an, bn, on, outer, wa, wb] {
            for (int64_t o = 0; o < outer; ++o) {
                const float* g = on->grad.data() + o * (wa + wb);
                if (an->requires_grad)
                    for (int64_t i = 0; i < wa; ++i) an->grad[o * wa + i] += g[i];
                if (bn->requires_grad)
                    for (int64_t i = 0; i < wb; ++i) bn->grad[o * wb + i] += g[wa + i];
            }
        });
    }
    return Tensor(out);
}

}  // namespace arrayssl
