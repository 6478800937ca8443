#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mar/tape.hpp"

// Differentiable primitives. Every op validates shapes eagerly (throwing
// std::invalid_argument), checks that its output is finite, and records a
// backward closure when the tape is recording and any input needs a gradient.
// No implicit broadcasting: the only row-wise broadcast is add_row.
namespace mar::ops {

template <typename T> Var matmul(Tape<T>& tape, Var a, Var b);
template <typename T> Var add(Tape<T>& tape, Var a, Var b);
// a[N x d] + bias[d] on every row.
template <typename T> Var add_row(Tape<T>& tape, Var a, Var bias);
template <typename T> Var scale(Tape<T>& tape, Var a, T factor);
template <typename T> Var transpose(Tape<T>& tape, Var a);
template <typename T> Var reshape(Tape<T>& tape, Var a, Shape shape);
template <typename T> Var identity(Tape<T>& tape, Var a);
template <typename T> Var concat_rows(Tape<T>& tape, std::span<const Var> parts);
template <typename T> Var concat_cols(Tape<T>& tape, std::span<const Var> parts);
template <typename T> Var slice_cols(Tape<T>& tape, Var a, std::size_t start, std::size_t count);
// [N x d] -> [1 x d]
template <typename T> Var mean_rows(Tape<T>& tape, Var a);
// Sum of all elements -> [1]
template <typename T> Var sum(Tape<T>& tape, Var a);
template <typename T> Var softmax_rows(Tape<T>& tape, Var a);
template <typename T> Var layernorm(Tape<T>& tape, Var a, Var gain, Var bias, T eps);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
/// The backward pass differentiates the approximation itself.
template <typename T> Var gelu(Tape<T>& tape, Var a);
/// Rows of a[N x d] in idx order; repeated indices are allowed and their
/// gradients add up.
template <typename T> Var gather_rows(Tape<T>& tape, Var a, std::span<const std::size_t> idx);

/// sum((pred - target)^2) / pred.size(), or 0 for an empty prediction.
template <typename T> Var mean_squared_error(Tape<T>& tape, Var pred, const Tensor<T>& target);
/// -log softmax(logits)[label] with log-sum-exp stabilisation. logits has C
/// elements (any shape).
template <typename T> Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::size_t label);

// Plain kernels shared with the model's inference-only helpers and tests.
template <typename T>
void matmul_kernel(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n);

}  // namespace mar::ops
