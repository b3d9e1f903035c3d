#pragma once

#include <functional>
#include <vector>

#include "multimodel/ops.hpp"

namespace mm::test {

// One case per differentiable op; `variant` changes the shapes.
struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Tensor(const std::vector<Tensor>&)> f;
};

inline std::vector<OpCase> op_cases(std::size_t variant) {
  const std::size_t l = 3 + variant, c = 2 + variant % 3;
  std::vector<int> ids{0, 2, 1, 2, 0, 3};
  std::vector<int> targets{1, 0, 3, 2};
  std::vector<double> weights{1.0, 0.5, 0.0, 2.0};
  std::vector<OpCase> cases;
  cases.push_back({"add_broadcast", {{2, l, c}, {c}}, [](auto& in) { return add(in[0], in[1]); }});
  cases.push_back({"sub", {{l, c}, {l, c}}, [](auto& in) { return sub(in[0], in[1]); }});
  cases.push_back({"mul", {{2, l, c}, {l, c}}, [](auto& in) { return mul(in[0], in[1]); }});
  cases.push_back({"scale", {{l, c}}, [](auto& in) { return scale(in[0], -1.7); }});
  cases.push_back({"relu", {{l, c}}, [](auto& in) { return relu(in[0]); }});
  cases.push_back({"softplus", {{l, c}}, [](auto& in) { return softplus(in[0]); }});
  cases.push_back({"softmax", {{2, l, c}}, [](auto& in) { return softmax(in[0]); }});
  cases.push_back({"dropout_seeded",
                   {{l, c}},
                   [](auto& in) { return dropout(in[0], 0.4, RngStream(3), true); }});
  cases.push_back({"depthwise_same_strided",
                   {{2, l + 3, c}, {3, 1, c}},
                   [](auto& in) { return depthwise_conv(in[0], in[1], {2, 1}, {1, 1}, Padding::same); }});
  cases.push_back({"depthwise_left_dilated",
                   {{1, l + 2, c}, {3, 1, c}},
                   [](auto& in) { return depthwise_conv(in[0], in[1], {1, 1}, {2, 1}, Padding::left); }});
  cases.push_back({"depthwise_2d",
                   {{1, 5, 4, c}, {3, 3, c}},
                   [](auto& in) { return depthwise_conv(in[0], in[1], {2, 2}, {1, 1}, Padding::same); }});
  cases.push_back({"pointwise", {{2, l, c}, {c, 3}}, [](auto& in) { return pointwise_conv(in[0], in[1]); }});
  cases.push_back({"sep_conv",
                   {{2, 6, 3}, {3, 1, 3}, {3, 4}},
                   [](auto& in) { return sep_conv(in[0], in[1], in[2], {1, 1}, {1, 1}, Padding::same); }});
  cases.push_back({"layer_norm",
                   {{3, 4}, {4}, {4}},
                   [](auto& in) { return layer_norm(in[0], in[1], in[2], 1e-6); }});
  cases.push_back({"max_pool", {{1, 5, 4, c}}, [](auto& in) { return max_pool(in[0], {3, 3}, {2, 2}); }});
  cases.push_back({"global_avg_pool", {{2, 3, 2, c}}, [](auto& in) { return global_avg_pool(in[0]); }});
  cases.push_back({"embedding",
                   {{4, c}},
                   [ids](auto& in) { return embedding_lookup(in[0], ids, {2, 3}); }});
  cases.push_back({"matmul", {{l, c}, {c, 4}}, [](auto& in) { return matmul(in[0], in[1]); }});
  cases.push_back({"concat",
                   {{2, l, c}, {2, 2, c}},
                   [](auto& in) { return concat(std::vector<Tensor>{in[0], in[1]}, 1); }});
  cases.push_back({"reshape_slice",
                   {{2, l, c}},
                   [l, c](auto& in) { return slice(reshape(in[0], {2 * l, c}), 0, 1, l + 1); }});
  cases.push_back({"sum", {{l, c}}, [](auto& in) { return sum(in[0]); }});
  cases.push_back({"mean", {{l, c}}, [](auto& in) { return mean(in[0]); }});
  cases.push_back({"sum_rows", {{2, l, c}}, [](auto& in) { return sum_rows(in[0]); }});
  cases.push_back({"cross_entropy",
                   {{4, 5}},
                   [targets, weights](auto& in) { return softmax_cross_entropy(in[0], targets, weights); }});
  return cases;
}

}  // namespace mm::test
