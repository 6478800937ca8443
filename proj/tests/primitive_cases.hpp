#pragma once

// One gradient-check case per tensor primitive, with extents drawn from the
// seed. Shared by the unit tests and the acceptance run.

#include <random>
#include <vector>

#include "gradcheck.hpp"

namespace mar::testing {

struct PrimitiveCase {
    const char* name;
    Forward f;
    std::vector<Tensor<double>> inputs;
};

inline std::vector<PrimitiveCase> primitive_cases(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> ext(1, 5);
    const std::size_t m = ext(rng), k = ext(rng), n = ext(rng) + 1;

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m + 2; ++i) idx.push_back(rng() % m);

    std::vector<PrimitiveCase> cases = {
        {"matmul", [](auto& t, const auto& in) { return weighted_sum(t, ops::matmul(t, in[0], in[1])); },
         {random_tensor({m, k}, rng), random_tensor({k, n}, rng)}},
        {"add", [](auto& t, const auto& in) { return weighted_sum(t, ops::add(t, in[0], in[1])); },
         {random_tensor({m, n}, rng), random_tensor({m, n}, rng)}},
        {"add_row", [](auto& t, const auto& in) { return weighted_sum(t, ops::add_row(t, in[0], in[1])); },
         {random_tensor({m, n}, rng), random_tensor({n}, rng)}},
        {"scale", [](auto& t, const auto& in) { return weighted_sum(t, ops::scale(t, in[0], -1.7)); },
         {random_tensor({m, n}, rng)}},
        {"transpose", [](auto& t, const auto& in) { return weighted_sum(t, ops::transpose(t, in[0])); },
         {random_tensor({m, n}, rng)}},
        {"reshape", [m, n](auto& t, const auto& in) { return weighted_sum(t, ops::reshape(t, in[0], {n, m})); },
         {random_tensor({m, n}, rng)}},
        {"identity", [](auto& t, const auto& in) { return weighted_sum(t, ops::identity(t, in[0])); },
         {random_tensor({m, n}, rng)}},
        {"concat_rows",
         [](auto& t, const auto& in) {
             std::vector<Var> parts{in[0], in[1]};
             return weighted_sum(t, ops::concat_rows<double>(t, parts));
         },
         {random_tensor({m, n}, rng), random_tensor({k, n}, rng)}},
        {"concat_cols",
         [](auto& t, const auto& in) {
             std::vector<Var> parts{in[0], in[1]};
             return weighted_sum(t, ops::concat_cols<double>(t, parts));
         },
         {random_tensor({m, n}, rng), random_tensor({m, k}, rng)}},
        {"slice_cols", [n](auto& t, const auto& in) { return weighted_sum(t, ops::slice_cols(t, in[0], 1, n - 1)); },
         {random_tensor({m, n}, rng)}},
        {"mean_rows", [](auto& t, const auto& in) { return weighted_sum(t, ops::mean_rows(t, in[0])); },
         {random_tensor({m, n}, rng)}},
        {"sum", [](auto& t, const auto& in) { return ops::sum(t, in[0]); }, {random_tensor({m, n}, rng)}},
        {"softmax_rows", [](auto& t, const auto& in) { return weighted_sum(t, ops::softmax_rows(t, in[0])); },
         {random_tensor({m, n}, rng, -3, 3)}},
        {"layernorm",
         [](auto& t, const auto& in) { return weighted_sum(t, ops::layernorm(t, in[0], in[1], in[2], 1e-5)); },
         {random_tensor({m, n}, rng), random_tensor({n}, rng), random_tensor({n}, rng)}},
        {"gelu", [](auto& t, const auto& in) { return weighted_sum(t, ops::gelu(t, in[0])); },
         {random_tensor({m, n}, rng, -4, 4)}},
        {"gather_rows",
         [idx](auto& t, const auto& in) { return weighted_sum(t, ops::gather_rows<double>(t, in[0], idx)); },
         {random_tensor({m, n}, rng)}},
        {"mean_squared_error",
         [target = random_tensor({m, n}, rng)](auto& t, const auto& in) {
             return ops::mean_squared_error(t, in[0], target);
         },
         {random_tensor({m, n}, rng)}},
        {"softmax_cross_entropy",
         [label = seed % (n * m)](auto& t, const auto& in) { return ops::softmax_cross_entropy(t, in[0], label); },
         {random_tensor({m, n}, rng, -3, 3)}},
    };
    return cases;
}

}  // namespace mar::testing
