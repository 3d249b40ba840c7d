#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dspnet/tensor.hpp"

namespace dspnet {

/// Writable prefix window of a full parameter tensor: the first `shape[0]`
/// rows and, inside each row, the first `shape[1..]` entries laid out as in the
/// full tensor. Writes through the view land in the owning store.
template <class T>
struct ParamView {
    std::string name;
    T* data = nullptr;
    Shape shape;       // sliced extents
    Shape full_shape;  // extents of the owning tensor
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t ld = 0;

    static ParamView whole(std::string name, Tensor<T>& t);
    /// Prefix slice keeping the first `extents[i]` entries of dimension i.
    static ParamView prefix(std::string name, Tensor<T>& t, const Shape& extents);

    MatRef<T> matrix() const { return {data, rows, cols, ld}; }
    bool is_whole() const { return shape == full_shape; }

    T& operator()(std::size_t r, std::size_t c) const { return data[r * ld + c]; }

    /// Deep copy of the viewed region as a compact tensor.
    Tensor<T> to_tensor() const;
    /// full[region] += compact
    void scatter_add(const Tensor<T>& compact, Tensor<T>& full) const;
};

/// Compact copy of the leading-dims prefix `extents` of `t`.
template <class T>
Tensor<T> prefix_copy(const Tensor<T>& t, const Shape& extents);

/// Full-size gradient tensors keyed by parameter name.
template <class T>
using Gradients = std::map<std::string, Tensor<T>>;

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const;
    bool valid() const { return tape != nullptr; }
};

template <class T>
class Tape {
public:
    class BackwardContext;
    using BackwardFn = std::function<void(BackwardContext&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var<T> constant(Tensor<T> value);
    /// Owned leaf whose gradient is reported under `name`.
    Var<T> variable(std::string name, Tensor<T> value);
    /// Leaf aliasing store memory; its gradient is scattered into a
    /// full-size tensor under `view.name`.
    Var<T> parameter(const ParamView<T>& view);
    /// Same storage as `parameter` but excluded from differentiation.
    Var<T> frozen(const ParamView<T>& view);

    /// Appends an op result. Throws NonFiniteError when `value` has NaN/Inf.
    Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);

    bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
    const Tensor<T>& value(Var<T> v) const;
    MatRef<T> matrix(Var<T> v) const;
    const Shape& shape(Var<T> v) const;
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a scalar loss. Every named leaf on this tape gets
    /// an entry (zeros when unreachable).
    Gradients<T> backward(Var<T> loss) const;
    /// As above, adding into existing entries of `accum`.
    void backward(Var<T> loss, Gradients<T>& accum) const;

    class BackwardContext {
    public:
        const Tensor<T>& grad_out() const { return *grad_out_; }
        const Tensor<T>& value(Var<T> v) const { return tape_->value(v); }
        MatRef<T> matrix(Var<T> v) const { return tape_->matrix(v); }
        /// Gradient buffer of an input, allocated as zeros on first use;
        /// nullptr when that input does not require a gradient.
        Tensor<T>* grad(Var<T> v);

    private:
        friend class Tape;
        const Tape* tape_ = nullptr;
        const Tensor<T>* grad_out_ = nullptr;
        std::vector<Tensor<T>>* grads_ = nullptr;
    };

private:
    struct Node {
        const char* op = "leaf";
        Tensor<T> value;
        std::optional<ParamView<T>> view;
        std::string name;
        std::vector<std::uint32_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        mutable std::optional<Tensor<T>> materialized;
    };

    Var<T> push(Node node);
    Var<T> check(Var<T> v) const;

    std::deque<Node> nodes_;  // element addresses stay stable on push
};

}  // namespace dspnet
