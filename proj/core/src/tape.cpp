#include "dspnet/tape.hpp"

#include <algorithm>

namespace dspnet {

namespace {

std::size_t trailing(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t i = 1; i < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace

template <class T>
ParamView<T> ParamView<T>::whole(std::string name, Tensor<T>& t) {
    return prefix(std::move(name), t, t.shape());
}

template <class T>
ParamView<T> ParamView<T>::prefix(std::string name, Tensor<T>& t, const Shape& extents) {
    const Shape& full = t.shape();
    if (extents.size() != full.size())
        throw DimensionError("slice rank mismatch for " + name + ": " + shape_str(extents) + " vs " +
                             shape_str(full));
    for (std::size_t i = 0; i < full.size(); ++i)
        if (extents[i] == 0 || extents[i] > full[i])
            throw DimensionError("slice " + shape_str(extents) + " outside " + shape_str(full) + " for " + name);
    // Only dims 0 and 1 may be cut; trailing dims (kernel extents) stay whole
    // so every row of the view is one contiguous run.
    for (std::size_t i = 2; i < full.size(); ++i)
        if (extents[i] != full[i]) throw DimensionError("only the two leading dims can be sliced: " + name);

    ParamView v;
    v.name = std::move(name);
    v.data = t.data();
    v.shape = extents;
    v.full_shape = full;
    if (full.size() == 1) {
        v.rows = 1;
        v.cols = extents[0];
        v.ld = full[0];
    } else {
        v.rows = extents[0];
        v.cols = trailing(extents);
        v.ld = trailing(full);
    }
    return v;
}

template <class T>
Tensor<T> ParamView<T>::to_tensor() const {
    Tensor<T> out(shape);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(data + r * ld, cols, out.data() + r * cols);
    return out;
}

template <class T>
void ParamView<T>::scatter_add(const Tensor<T>& compact, Tensor<T>& full) const {
    if (compact.shape() != shape || full.shape() != full_shape)
        throw DimensionError("scatter_add shape mismatch for " + name);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = compact.data() + r * cols;
        T* dst = full.data() + r * ld;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
}

template <class T>
Tensor<T> prefix_copy(const Tensor<T>& t, const Shape& extents) {
    // the view is only read from
    return ParamView<T>::prefix("prefix_copy", const_cast<Tensor<T>&>(t), extents).to_tensor();
}

template <class T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(*this);
}

template <class T>
const Shape& Var<T>::shape() const {
    return tape->shape(*this);
}

template <class T>
Var<T> Tape<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::check(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw ContractError("variable belongs to a different tape");
    return v;
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::variable(std::string name, Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.name = std::move(name);
    n.requires_grad = true;
    return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::parameter(const ParamView<T>& view) {
    Node n;
    n.view = view;
    n.name = view.name;
    n.requires_grad = true;
    return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::frozen(const ParamView<T>& view) {
    Node n;
    n.view = view;
    return push(std::move(n));
}

template <class T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    if (!value.all_finite())
        throw NonFiniteError(std::string("non-finite value produced by ") + op + " " + shape_str(value.shape()));
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (auto in : inputs) {
        check(in);
        n.inputs.push_back(in.id);
        n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
}

template <class T>
const Tensor<T>& Tape<T>::value(Var<T> v) const {
    const Node& n = nodes_[check(v).id];
    if (!n.view) return n.value;
    if (!n.materialized) n.materialized = n.view->to_tensor();
    return *n.materialized;
}

template <class T>
MatRef<T> Tape<T>::matrix(Var<T> v) const {
    const Node& n = nodes_[check(v).id];
    if (n.view) return n.view->matrix();
    return as_matrix(n.value);
}

template <class T>
const Shape& Tape<T>::shape(Var<T> v) const {
    const Node& n = nodes_[check(v).id];
    return n.view ? n.view->shape : n.value.shape();
}

template <class T>
Tensor<T>* Tape<T>::BackwardContext::grad(Var<T> v) {
    if (!tape_->requires_grad(v)) return nullptr;
    Tensor<T>& g = (*grads_)[v.id];
    if (g.empty()) g = Tensor<T>(tape_->shape(v));
    return &g;
}

template <class T>
Gradients<T> Tape<T>::backward(Var<T> loss) const {
    Gradients<T> out;
    backward(loss, out);
    return out;
}

template <class T>
void Tape<T>::backward(Var<T> loss, Gradients<T>& accum) const {
    check(loss);
    if (shape_size(shape(loss)) != 1)
        throw ContractError("backward requires a scalar loss, got " + shape_str(shape(loss)));

    std::vector<Tensor<T>> grads(loss.id + 1);
    grads[loss.id] = Tensor<T>(shape(loss), T(1));

    BackwardContext ctx;
    ctx.tape_ = this;
    ctx.grads_ = &grads;
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (!n.backward || grads[id].empty()) continue;
        ctx.grad_out_ = &grads[id];
        n.backward(ctx);
        grads[id] = Tensor<T>();
    }

    for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
        const Node& n = nodes_[id];
        if (!n.requires_grad || n.name.empty()) continue;
        const Shape& full = n.view ? n.view->full_shape : n.value.shape();
        auto it = accum.find(n.name);
        if (it == accum.end()) it = accum.emplace(n.name, Tensor<T>(full)).first;
        if (it->second.shape() != full) throw DimensionError("gradient shape mismatch for " + n.name);
        if (id >= grads.size() || grads[id].empty()) continue;
        if (n.view) {
            n.view->scatter_add(grads[id], it->second);
        } else {
            for (std::size_t i = 0; i < grads[id].size(); ++i) it->second[i] += grads[id][i];
        }
    }
}

template struct ParamView<float>;
template struct ParamView<double>;
template Tensor<float> prefix_copy(const Tensor<float>&, const Shape&);
template Tensor<double> prefix_copy(const Tensor<double>&, const Shape&);
template struct Var<float>;
template struct Var<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace dspnet
