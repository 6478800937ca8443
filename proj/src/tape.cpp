#include "mar/tape.hpp"

#include <algorithm>

namespace mar {

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape: unknown variable");
    return nodes_[v.id];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
    if (v.id >= nodes_.size()) throw std::out_of_range("Tape: unknown variable");
    return nodes_[v.id];
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value) {
    if (!value.all_finite()) throw NonFiniteError("Tape: non-finite leaf value");
    Node n;
    n.value = std::move(value);
    n.needs_grad = recording();
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
    if (!value.all_finite()) throw NonFiniteError("Tape: non-finite constant value");
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::push(const char* op, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite output");
    Node n;
    n.value = std::move(value);
    n.op = op;
    if (recording()) {
        n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return node(v).needs_grad; });
        if (n.needs_grad) {
            n.inputs = std::move(inputs);
            n.backward = std::move(backward);
        }
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>& Tape<T>::grad_acc(Var v) {
    Node& n = node(v);
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
    if (!recording()) throw std::logic_error("Tape: backward() on an inference tape");
    Node& r = node(root);
    if (r.value.size() != 1) throw std::invalid_argument("Tape: backward root must hold one value");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    if (!r.needs_grad) return;
    grad_acc(root)[0] = T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.backward || n.grad.empty()) continue;
        if (!n.grad.all_finite()) throw NonFiniteError(std::string(n.op) + ": non-finite gradient");
        n.backward(*this, Var{static_cast<std::uint32_t>(i)}, n.grad);
    }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.shape() == n.value.shape()) return n.grad;
    return Tensor<T>(n.value.shape());
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mar
