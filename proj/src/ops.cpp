#include "mar/ops.hpp"

#include <vector>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace mar::ops {
namespace {

[[noreturn]] void shape_error(const char* op, const std::string& what) {
    throw std::invalid_argument(std::string(op) + ": " + what);
}

template <typename T>
void require_matrix(const Tape<T>& tape, Var v, const char* op) {
    if (tape.shape(v).size() != 2) shape_error(op, "expected a matrix, got " + shape_str(tape.shape(v)));
}

// out[k x n] += a[m x k]^T * g[m x n]
template <typename T>
void matmul_tn_acc(const T* a, const T* g, T* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T{0}) continue;
            T* orow = out + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
        }
    }
}

// out[m x k] += g[m x n] * b[k x n]^T
template <typename T>
void matmul_nt_acc(const T* g, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
    // Transpose b once so the inner loop is a contiguous axpy.
    std::vector<T> bt(n * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    for (std::size_t i = 0; i < m; ++i) {
        T* orow = out + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T gv = g[i * n + j];
            const T* brow = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) orow[p] += gv * brow[p];
        }
    }
}

}  // namespace

template <typename T>
void matmul_kernel(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
    std::fill(out, out + m * n, T{0});
    for (std::size_t i = 0; i < m; ++i) {
        T* orow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T{0}) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
    require_matrix(tape, a, "matmul");
    require_matrix(tape, b, "matmul");
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    if (bv.shape()[0] != k) {
        shape_error("matmul", "inner extents differ: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    Tensor<T> out({m, n});
    matmul_kernel(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return tape.push("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape<T>& t, Var, const Tensor<T>& g) {
        if (t.needs_grad(a)) {
            matmul_nt_acc(g.data().data(), t.value(b).data().data(), t.grad_acc(a).data().data(), m, k, n);
        }
        if (t.needs_grad(b)) {
            matmul_tn_acc(t.value(a).data().data(), g.data().data(), t.grad_acc(b).data().data(), m, k, n);
        }
    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    if (av.shape() != bv.shape()) {
        shape_error("add", shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    }
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return tape.push("add", std::move(out), {a, b}, [a, b](Tape<T>& t, Var, const Tensor<T>& g) {
        for (Var v : {a, b}) {
            if (!t.needs_grad(v)) continue;
            auto& acc = t.grad_acc(v);
            for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
    });
}

template <typename T>
Var add_row(Tape<T>& tape, Var a, Var bias) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(bias);
    if (av.rank() == 0 || bv.size() != av.cols()) {
        shape_error("add_row", shape_str(av.shape()) + " + row " + shape_str(bv.shape()));
    }
    Tensor<T> out = av;
    const std::size_t d = av.cols();
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
    }
    return tape.push("add_row", std::move(out), {a, bias}, [a, bias, d](Tape<T>& t, Var, const Tensor<T>& g) {
        if (t.needs_grad(a)) {
            auto& acc = t.grad_acc(a);
            for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
        if (t.needs_grad(bias)) {
            auto& acc = t.grad_acc(bias);
            for (std::size_t i = 0; i < g.size(); ++i) acc[i % d] += g[i];
        }
    });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
    Tensor<T> out = tape.value(a);
    for (auto& x : out.data()) x *= factor;
    return tape.push("scale", std::move(out), {a}, [a, factor](Tape<T>& t, Var, const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += factor * g[i];
    });
}

template <typename T>
Var transpose(Tape<T>& tape, Var a) {
    require_matrix(tape, a, "transpose");
    const auto& av = tape.value(a);
    const std::size_t m = av.shape()[0], n = av.shape()[1];
    Tensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    }
    return tape.push("transpose", std::move(out), {a}, [a, m, n](Tape<T>& t, Var, const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += g[j * m + i];
        }
    });
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
    const auto& av = tape.value(a);
    if (shape_numel(shape) != av.size()) {
        shape_error("reshape", shape_str(av.shape()) + " -> " + shape_str(shape));
    }
    Tensor<T> out(std::move(shape), av.data());
    return tape.push("reshape", std::move(out), {a}, [a](Tape<T>& t, Var, const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    });
}

template <typename T>
Var identity(Tape<T>& tape, Var a) {
    return tape.push("identity", tape.value(a), {a}, [a](Tape<T>& t, Var, const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    });
}

template <typename T>
Var concat_rows(Tape<T>& tape, std::span<const Var> parts) {
    if (parts.empty()) shape_error("concat_rows", "no inputs");
    const std::size_t d = tape.shape(parts[0]).size() == 2 ? tape.shape(parts[0])[1] : 0;
    std::size_t rows = 0;
    for (Var p : parts) {
        require_matrix(tape, p, "concat_rows");
        if (tape.shape(p)[1] != d) shape_error("concat_rows", "column counts differ");
        rows += tape.shape(p)[0];
    }
    Tensor<T> out({rows, d});
    std::size_t offset = 0;
    for (Var p : parts) {
        const auto& v = tape.value(p);
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += v.size();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.push("concat_rows", std::move(out), inputs, [inputs](Tape<T>& t, Var, const Tensor<T>& g) {
        std::size_t off = 0;
        for (Var p : inputs) {
            const std::size_t n = t.value(p).size();
            if (t.needs_grad(p)) {
                auto& acc = t.grad_acc(p);
                for (std::size_t i = 0; i < n; ++i) acc[i] += g[off + i];
            }
            off += n;
        }
    });
}

template <typename T>
Var concat_cols(Tape<T>& tape, std::span<const Var> parts) {
    if (parts.empty()) shape_error("concat_cols", "no inputs");
    require_matrix(tape, parts[0], "concat_cols");
    const std::size_t rows = tape.shape(parts[0])[0];
    std::size_t cols = 0;
    for (Var p : parts) {
        require_matrix(tape, p, "concat_cols");
        if (tape.shape(p)[0] != rows) shape_error("concat_cols", "row counts differ");
        cols += tape.shape(p)[1];
    }
    Tensor<T> out({rows, cols});
    std::size_t c0 = 0;
    for (Var p : parts) {
        const auto& v = tape.value(p);
        const std::size_t w = v.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(r * w), w,
                        out.data().begin() + static_cast<std::ptrdiff_t>(r * cols + c0));
        }
        c0 += w;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.push("concat_cols", std::move(out), inputs, [inputs, rows, cols](Tape<T>& t, Var, const Tensor<T>& g) {
        std::size_t start = 0;
        for (Var p : inputs) {
            const std::size_t w = t.shape(p)[1];
            if (t.needs_grad(p)) {
                auto& acc = t.grad_acc(p);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < w; ++c) acc[r * w + c] += g[r * cols + start + c];
                }
            }
            start += w;
        }
    });
}

template <typename T>
Var slice_cols(Tape<T>& tape, Var a, std::size_t start, std::size_t count) {
    require_matrix(tape, a, "slice_cols");
    const auto& av = tape.value(a);
    const std::size_t rows = av.shape()[0], cols = av.shape()[1];
    if (start + count > cols) shape_error("slice_cols", "slice exceeds " + shape_str(av.shape()));
    Tensor<T> out({rows, count});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) out[r * count + c] = av[r * cols + start + c];
    }
    return tape.push("slice_cols", std::move(out), {a}, [a, rows, cols, start, count](Tape<T>& t, Var, const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < count; ++c) acc[r * cols + start + c] += g[r * count + c];
        }
    });
}

template <typename T>
Var mean_rows(Tape<T>& tape, Var a) {
    require_matrix(tape, a, "mean_rows");
    const auto& av = tape.value(a);
    const std::size_t n = av.shape()[0], d = av.shape()[1];
    if (n == 0) shape_error("mean_rows", "no rows");
    Tensor<T> out({1, d});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) out[c] += av[r * d + c];
    }
    const T inv = T{1} / static_cast<T>(n);
    for (auto& x : out.data()) x *= inv;
    return tape.push("mean_rows", std::move(out), {a}, [a, n, d, inv](Tape<T>& t, Var, const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) acc[r * d + c] += g[c] * inv;
        }
    });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
    const auto& av = tape.value(a);
    T s{0};
    for (T x : av.data()) s += x;
    return tape.push("sum", Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, Var, const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (auto& x : acc.data()) x += g[0];
    });
}

template <typename T>
Var softmax_rows(Tape<T>& tape, Var a) {
    const auto& av = tape.value(a);
    const std::size_t d = av.cols();
    Tensor<T> out(av.shape());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        const T* x = av.data().data() + r * d;
        T* y = out.data().data() + r * d;
        const T m = *std::max_element(x, x + d);
        T z{0};
        for (std::size_t c = 0; c < d; ++c) z += (y[c] = std::exp(x[c] - m));
        for (std::size_t c = 0; c < d; ++c) y[c] /= z;
    }
    return tape.push("softmax_rows", std::move(out), {a}, [a, d](Tape<T>& t, Var self, const Tensor<T>& g) {
        const auto& y = t.value(self);
        auto& acc = t.grad_acc(a);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            const std::size_t base = r * d;
            T dot{0};
            for (std::size_t c = 0; c < d; ++c) dot += g[base + c] * y[base + c];
            for (std::size_t c = 0; c < d; ++c) acc[base + c] += y[base + c] * (g[base + c] - dot);
        }
    });
}

template <typename T>
Var layernorm(Tape<T>& tape, Var a, Var gain, Var bias, T eps) {
    const auto& av = tape.value(a);
    const std::size_t d = av.cols();
    if (av.rank() == 0 || d == 0) shape_error("layernorm", "empty feature dimension");
    if (tape.value(gain).size() != d || tape.value(bias).size() != d) {
        shape_error("layernorm", "gain/bias must have " + std::to_string(d) + " elements");
    }
    const auto& gv = tape.value(gain);
    const auto& bv = tape.value(bias);
    const std::size_t rows = av.rows();
    Tensor<T> out(av.shape());
    // Normalised rows and inverse std are kept for the backward pass.
    auto xhat = std::make_shared<std::vector<T>>(av.size());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.data().data() + r * d;
        T mean{0};
        for (std::size_t c = 0; c < d; ++c) mean += x[c];
        mean /= static_cast<T>(d);
        T var{0};
        for (std::size_t c = 0; c < d; ++c) var += (x[c] - mean) * (x[c] - mean);
        var /= static_cast<T>(d);
        const T inv = T{1} / std::sqrt(var + eps);
        (*rstd)[r] = inv;
        for (std::size_t c = 0; c < d; ++c) {
            const T h = (x[c] - mean) * inv;
            (*xhat)[r * d + c] = h;
            out[r * d + c] = h * gv[c] + bv[c];
        }
    }
    return tape.push("layernorm", std::move(out), {a, gain, bias},
                     [a, gain, bias, d, rows, xhat, rstd](Tape<T>& t, Var, const Tensor<T>& g) {
        const auto& gv = t.value(gain);
        if (t.needs_grad(gain) || t.needs_grad(bias)) {
            for (Var v : {gain, bias}) {
                if (!t.needs_grad(v)) continue;
                auto& acc = t.grad_acc(v);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < d; ++c) {
                        acc[c] += v == gain ? g[r * d + c] * (*xhat)[r * d + c] : g[r * d + c];
                    }
                }
            }
        }
        if (!t.needs_grad(a)) return;
        auto& acc = t.grad_acc(a);
        std::vector<T> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* h = xhat->data() + r * d;
            T mean_dx{0}, mean_dxh{0};
            for (std::size_t c = 0; c < d; ++c) {
                dxhat[c] = g[r * d + c] * gv[c];
                mean_dx += dxhat[c];
                mean_dxh += dxhat[c] * h[c];
            }
            mean_dx /= static_cast<T>(d);
            mean_dxh /= static_cast<T>(d);
            for (std::size_t c = 0; c < d; ++c) {
                acc[r * d + c] += (*rstd)[r] * (dxhat[c] - mean_dx - h[c] * mean_dxh);
            }
        }
    });
}

template <typename T>
Var gelu(Tape<T>& tape, Var a) {
    constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T c3 = static_cast<T>(0.044715);
    const auto& av = tape.value(a);
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) {
        const T x = av[i];
        out[i] = T{0.5} * x * (T{1} + std::tanh(k * (x + c3 * x * x * x)));
    }
    return tape.push("gelu", std::move(out), {a}, [a](Tape<T>& t, Var, const Tensor<T>& g) {
        const auto& x = t.value(a);
        auto& acc = t.grad_acc(a);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T v = x[i];
            const T th = std::tanh(k * (v + c3 * v * v * v));
            const T sech2 = T{1} - th * th;
            // sech2 underflows to 0 far in the tails; skip to avoid 0 * inf.
            const T inner = sech2 == T{0} ? T{0} : T{0.5} * v * sech2 * k * (T{1} + T{3} * c3 * v * v);
            acc[i] += g[i] * (T{0.5} * (T{1} + th) + inner);
        }
    });
}

template <typename T>
Var gather_rows(Tape<T>& tape, Var a, std::span<const std::size_t> idx) {
    require_matrix(tape, a, "gather_rows");
    const auto& av = tape.value(a);
    const std::size_t n = av.shape()[0], d = av.shape()[1];
    Tensor<T> out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= n) {
            throw std::out_of_range("gather_rows: index " + std::to_string(idx[r]) + " outside " + std::to_string(n) +
                                    " rows");
        }
        std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                    out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    std::vector<std::size_t> rows(idx.begin(), idx.end());
    return tape.push("gather_rows", std::move(out), {a}, [a, d, rows = std::move(rows)](Tape<T>& t, Var,
                                                                                         const Tensor<T>& g) {
        auto& acc = t.grad_acc(a);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) acc[rows[r] * d + c] += g[r * d + c];
        }
    });
}

template <typename T>
Var mean_squared_error(Tape<T>& tape, Var pred, const Tensor<T>& target) {
    const auto& pv = tape.value(pred);
    if (pv.shape() != target.shape()) {
        shape_error("mean_squared_error", shape_str(pv.shape()) + " vs target " + shape_str(target.shape()));
    }
    const std::size_t n = pv.size();
    T acc{0};
    for (std::size_t i = 0; i < n; ++i) {
        const T diff = pv[i] - target[i];
        acc += diff * diff;
    }
    const T value = n == 0 ? T{0} : acc / static_cast<T>(n);
    return tape.push("mean_squared_error", Tensor<T>::scalar(value), {pred},
                     [pred, target, n](Tape<T>& t, Var, const Tensor<T>& g) {
        if (n == 0) return;
        const auto& p = t.value(pred);
        auto& out = t.grad_acc(pred);
        const T k = T{2} * g[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) out[i] += k * (p[i] - target[i]);
    });
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::size_t label) {
    const auto& lv = tape.value(logits);
    const std::size_t c = lv.size();
    if (c < 2) shape_error("softmax_cross_entropy", "need at least two classes");
    if (label >= c) {
        throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside " +
                                std::to_string(c) + " classes");
    }
    const T m = *std::max_element(lv.data().begin(), lv.data().end());
    T z{0};
    for (T v : lv.data()) z += std::exp(v - m);
    // Only differences from the max enter the result, so adding a constant to
    // every logit leaves it unchanged whenever those differences are exact.
    const T log_z = std::log(z);
    return tape.push("softmax_cross_entropy", Tensor<T>::scalar(log_z - (lv[label] - m)), {logits},
                     [logits, label, m, z](Tape<T>& t, Var, const Tensor<T>& g) {
        const auto& l = t.value(logits);
        auto& acc = t.grad_acc(logits);
        for (std::size_t i = 0; i < l.size(); ++i) {
            const T p = std::exp(l[i] - m) / z;
            acc[i] += g[0] * (p - (i == label ? T{1} : T{0}));
        }
    });
}

#define MAR_INSTANTIATE_OPS(T)                                                                        \
    template void matmul_kernel<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);    \
    template Var matmul<T>(Tape<T>&, Var, Var);                                                       \
    template Var add<T>(Tape<T>&, Var, Var);                                                          \
    template Var add_row<T>(Tape<T>&, Var, Var);                                                      \
    template Var scale<T>(Tape<T>&, Var, T);                                                          \
    template Var transpose<T>(Tape<T>&, Var);                                                         \
    template Var reshape<T>(Tape<T>&, Var, Shape);                                                    \
    template Var identity<T>(Tape<T>&, Var);                                                          \
    template Var concat_rows<T>(Tape<T>&, std::span<const Var>);                                      \
    template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                                      \
    template Var slice_cols<T>(Tape<T>&, Var, std::size_t, std::size_t);                              \
    template Var mean_rows<T>(Tape<T>&, Var);                                                         \
    template Var sum<T>(Tape<T>&, Var);                                                               \
    template Var softmax_rows<T>(Tape<T>&, Var);                                                      \
    template Var layernorm<T>(Tape<T>&, Var, Var, Var, T);                                            \
    template Var gelu<T>(Tape<T>&, Var);                                                              \
    template Var gather_rows<T>(Tape<T>&, Var, std::span<const std::size_t>);                         \
    template Var mean_squared_error<T>(Tape<T>&, Var, const Tensor<T>&);                              \
    template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::size_t);

MAR_INSTANTIATE_OPS(float)
MAR_INSTANTIATE_OPS(double)

#undef MAR_INSTANTIATE_OPS

}  // namespace mar::ops
