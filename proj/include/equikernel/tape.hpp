#pragma once

#include <cassert>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "equikernel/tensor.hpp"

namespace equikernel {

/// A named, trainable tensor together with its gradient accumulator.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        grad.fill(T{0});
    }
    std::size_t count() const { return value.size(); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
public:
    Var() = default;

    const Tensor<T>& value() const { return *value_; }
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(int axis) const { return value().dim(axis); }
    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape<T>;
    Var(Tape<T>* tape, std::size_t id, const Tensor<T>* value) : tape_(tape), id_(id), value_(value) {}

    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
    const Tensor<T>* value_ = nullptr;  // nodes live in a deque, so this stays valid
};

/// Reverse-mode recording of a computation. Every op appends one node holding
/// its value and a closure that maps the node's output gradient onto its
/// inputs. A tape has a single owner and is not meant to be shared across
/// threads.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// When disabled, ops still compute values but keep no backward closures.
    void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}, nullptr); }

    Var<T> variable(Tensor<T> value) { return push(std::move(value), grad_enabled_, {}, nullptr); }

    /// Leaf bound to a parameter; `backward` adds the leaf gradient into `p.grad`.
    Var<T> parameter(Parameter<T>& p) {
        Var<T> v = push(p.value, grad_enabled_, {}, nullptr);
        nodes_.back().sink = &p;
        return v;
    }

    /// Appends an op result. The node requires a gradient iff any input does.
    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
        return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
    }

    Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
#ifndef NDEBUG
        if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
#endif
        bool needs = false;
        if (grad_enabled_)
            for (const auto& in : inputs) needs = needs || requires_grad(in);
        return push(std::move(value), needs, inputs, needs ? std::move(fn) : nullptr);
    }

    const Tensor<T>& value(const Var<T>& v) const { return nodes_.at(v.id()).value; }
    bool requires_grad(const Var<T>& v) const { return nodes_.at(v.id()).requires_grad; }

    /// Adds `g` into the gradient of `v` (no-op for nodes without gradient).
    void accumulate(const Var<T>& v, const Tensor<T>& g) {
        Node& n = nodes_.at(v.id());
        if (!n.requires_grad) return;
        if (g.shape() != n.value.shape()) throw ShapeError("Tape::accumulate", g.shape(), n.value.shape(), "gradient shape");
        Tensor<T>& buf = grad_buffer(n);
        T* dst = buf.raw();
        const T* src = g.raw();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
    }

    /// Gradient buffer of `v`, zero-allocated on first access. Backward closures
    /// may write into it directly. Returns nullptr when `v` needs no gradient.
    Tensor<T>* grad_target(const Var<T>& v) {
        Node& n = nodes_.at(v.id());
        if (!n.requires_grad) return nullptr;
        return &grad_buffer(n);
    }

    /// Gradient of `v` after `backward`; zeros if nothing flowed into it.
    Tensor<T> grad(const Var<T>& v) const {
        const Node& n = nodes_.at(v.id());
        if (n.has_grad) return n.grad;
        return Tensor<T>(n.value.shape());
    }

    /// Back-propagates from a scalar root, then flushes leaf gradients into
    /// their bound parameters.
    void backward(const Var<T>& root, T seed = T{1}) {
        Node& r = nodes_.at(root.id());
        if (r.value.size() != 1) throw ShapeError("Tape::backward", r.value.shape(), "root must be a scalar");
        if (!r.requires_grad) return;
        grad_buffer(r)[0] += seed;
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.has_grad) continue;
            if (n.backward) n.backward(*this, n.grad);
            if (n.sink) {
                if (n.sink->grad.shape() != n.value.shape()) n.sink->zero_grad();
                T* dst = n.sink->grad.raw();
                for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += n.grad[k];
            }
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter<T>* sink = nullptr;
        bool has_grad = false;
    };

    Tensor<T>& grad_buffer(Node& n) {
        if (!n.has_grad) {
            n.grad = Tensor<T>(n.value.shape());
            n.has_grad = true;
        }
        return n.grad;
    }

    Var<T> push(Tensor<T> value, bool needs, const std::vector<Var<T>>& inputs, BackwardFn fn) {
        for ([[maybe_unused]] const auto& in : inputs) assert(&in.tape() == this);
        nodes_.push_back(Node{std::move(value), Tensor<T>{}, needs, std::move(fn), nullptr});
        return Var<T>(this, nodes_.size() - 1, &nodes_.back().value);
    }

    std::deque<Node> nodes_;
    bool grad_enabled_ = true;
};

}  // namespace equikernel
