#pragma once

#include <cstddef>

#include "mar/patchio.hpp"
#include "mar/tape.hpp"

namespace mar::loss {

inline constexpr double kDefaultLambda = 0.1;

struct LossReport {
    double reconstruction = 0.0;  // L_r
    double classification = 0.0;  // L_c
    double lambda = kDefaultLambda;
    double total = 0.0;            // lambda * L_r + L_c
    std::size_t omega = 0;         // number of masked pixels
};

/// Mean squared error over all masked pixels (not its square root); 0 when
/// nothing is masked. Rows of `pred` must line up with `target`.
template <typename T>
Var reconstruction_loss(Tape<T>& tape, Var pred, const patch::PatchTarget<T>& target);

/// Cross-entropy of softmax(logits) against a hard label.
template <typename T>
Var classification_loss(Tape<T>& tape, Var logits, std::size_t label);

template <typename T>
struct Combined {
    Var total;
    LossReport report;
};

/// Records L = lambda * L_r + L_c on the tape and reports all three values.
template <typename T>
Combined<T> combine(Tape<T>& tape, Var reconstruction, Var classification, double lambda, std::size_t omega);

/// Same arithmetic on plain numbers.
LossReport combine(double reconstruction, double classification, double lambda, std::size_t omega = 0);

}  // namespace mar::loss
