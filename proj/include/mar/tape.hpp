#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mar/tensor.hpp"

namespace mar {

/// Handle to a value recorded on a Tape. Only meaningful for the tape that
/// issued it.
struct Var {
    std::uint32_t id = UINT32_MAX;
    bool valid() const { return id != UINT32_MAX; }
    friend bool operator==(Var, Var) = default;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class GradMode { Record, Inference };

/// Reverse-mode record of one forward pass. Nodes are appended in execution
/// order, which is a topological order, so backward() is a reverse sweep.
template <typename T>
class Tape {
public:
    // Accumulates into the input gradients given the output gradient.
    using BackwardFn = std::function<void(Tape&, Var self, const Tensor<T>& grad_out)>;

    explicit Tape(GradMode mode = GradMode::Record) : mode_(mode) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    GradMode mode() const { return mode_; }
    bool recording() const { return mode_ == GradMode::Record; }

    /// Differentiable input (parameters, anything we want a gradient for).
    Var leaf(Tensor<T> value);
    /// Input that never receives a gradient.
    Var constant(Tensor<T> value);

    /// Records an op output. `inputs` decide whether the node needs a gradient;
    /// `op` names the primitive in error messages.
    Var push(const char* op, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor<T>& value(Var v) const { return node(v).value; }
    const Shape& shape(Var v) const { return node(v).value.shape(); }
    bool needs_grad(Var v) const { return node(v).needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(root)/d(root) = 1 for a single-element root and sweeps backward.
    void backward(Var root);

    /// Gradient of the last backward() root w.r.t. v; zeros if v is not on a
    /// path to the root.
    Tensor<T> grad(Var v) const;

    /// Mutable accumulator for use inside backward closures.
    Tensor<T>& grad_acc(Var v);

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // empty until something flows into it
        std::vector<Var> inputs;
        BackwardFn backward;
        bool needs_grad = false;
        const char* op = "";
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    GradMode mode_;
    std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mar
