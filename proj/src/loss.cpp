#include "mar/loss.hpp"

#include <stdexcept>
#include <string>

#include "mar/ops.hpp"

namespace mar::loss {
namespace {

void check_lambda(double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("loss weight lambda must be >= 0");
}

}  // namespace

template <typename T>
Var reconstruction_loss(Tape<T>& tape, Var pred, const patch::PatchTarget<T>& target) {
    if (tape.shape(pred) != target.values.shape()) {
        throw std::invalid_argument("reconstruction_loss: predictions " + shape_str(tape.shape(pred)) +
                                    " do not line up with targets " + shape_str(target.values.shape()));
    }
    return ops::mean_squared_error(tape, pred, target.values);
}

template <typename T>
Var classification_loss(Tape<T>& tape, Var logits, std::size_t label) {
    return ops::softmax_cross_entropy(tape, logits, label);
}

template <typename T>
Combined<T> combine(Tape<T>& tape, Var reconstruction, Var classification, double lambda, std::size_t omega) {
    check_lambda(lambda);
    const Var total = ops::add(tape, ops::scale(tape, reconstruction, static_cast<T>(lambda)), classification);
    LossReport report;
    report.reconstruction = static_cast<double>(tape.value(reconstruction)[0]);
    report.classification = static_cast<double>(tape.value(classification)[0]);
    report.lambda = lambda;
    report.total = static_cast<double>(tape.value(total)[0]);
    report.omega = omega;
    return {total, report};
}

LossReport combine(double reconstruction, double classification, double lambda, std::size_t omega) {
    check_lambda(lambda);
    return {reconstruction, classification, lambda, lambda * reconstruction + classification, omega};
}

template Var reconstruction_loss<float>(Tape<float>&, Var, const patch::PatchTarget<float>&);
template Var reconstruction_loss<double>(Tape<double>&, Var, const patch::PatchTarget<double>&);
template Var classification_loss<float>(Tape<float>&, Var, std::size_t);
template Var classification_loss<double>(Tape<double>&, Var, std::size_t);
template Combined<float> combine<float>(Tape<float>&, Var, Var, double, std::size_t);
template Combined<double> combine<double>(Tape<double>&, Var, Var, double, std::size_t);

}  // namespace mar::loss
