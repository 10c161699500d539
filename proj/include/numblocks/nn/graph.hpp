#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "numblocks/nn/params.hpp"
#include "numblocks/nn/tensor.hpp"

namespace numblocks::nn {

struct Var {
  std::uint32_t id = 0;
};

class Tape;

// Receives the gradient flowing into the node's output and accumulates into its inputs.
using BackwardFn = std::function<void(Tape& tape, const Tensor& out_grad)>;

// Reverse-mode recording of a computation. Nodes are appended in evaluation order and
// backward() walks them in reverse. Nodes whose inputs need no gradient keep no closure.
class Tape {
 public:
  Var constant(Tensor value);
  // Leaf that collects a gradient (for input-gradient checks).
  Var variable(Tensor value);
  // Copies the named parameter's current value into a tracked leaf.
  Var parameter(const ParamStore& store, std::string_view name);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient of the last backward() target w.r.t. v; zeros if nothing flowed into v.
  Tensor grad(Var v) const;

  // `loss` must hold a single element.
  void backward(Var loss);
  Gradients parameter_gradients(const ParamStore& store) const;

  std::size_t size() const { return nodes_.size(); }

  // For op implementations.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Tensor& grad_accumulator(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::int32_t param_index = -1;
  };
  std::vector<Node> nodes_;
};

// Elementwise and reductions. Binary elementwise ops require equal shapes.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var minimum(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var add_scalar(Tape& t, Var a, double c);
Var tanh(Tape& t, Var a);
Var exp(Tape& t, Var a);
Var square(Tape& t, Var a);
// Gradient passes only where lo < x < hi.
Var clamp(Tape& t, Var a, double lo, double hi);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
Var reshape(Tape& t, Var a, Shape shape);

// Last-dimension ops; leading dimensions act as rows.
Var matmul(Tape& t, Var x, Var w);      // [..., k] x [k, m] -> [..., m]
Var add_bias(Tape& t, Var x, Var b);    // [..., m] + [m]
Var row_sum(Tape& t, Var x);            // [..., m] -> [...]
Var softmax_rows(Tape& t, Var x);
Var log_softmax_rows(Tape& t, Var x);
// Entries with mask 0 get probability 0; a fully masked row is all zeros.
Var masked_softmax_rows(Tape& t, Var x, std::vector<std::uint8_t> mask);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5);
Var concat_cols(Tape& t, Var a, Var b);                          // [B, p], [B, q] -> [B, p+q]
Var gather_cols(Tape& t, Var x, std::span<const int> index);     // [B, C] -> [B]

// Rows of `table` selected by `ids`; result shape is `prefix` + [dim].
Var embedding_lookup(Tape& t, Var table, std::span<const int> ids, Shape prefix);

// Batched matrix products over a leading group dimension.
Var bmm(Tape& t, Var a, Var b);     // [G, n, k] x [G, k, m] -> [G, n, m]
Var bmm_nt(Tape& t, Var a, Var b);  // [G, n, k] x [G, m, k]^T -> [G, n, m]
Var split_heads(Tape& t, Var x, std::size_t heads);   // [B, L, d] -> [B*H, L, d/H]
Var merge_heads(Tape& t, Var x, std::size_t heads);   // [B*H, L, e] -> [B, L, H*e]
// Mean over positions with mask 1; all-masked sequences give zeros. [B, L, d] -> [B, d]
Var masked_mean_rows(Tape& t, Var x, std::vector<std::uint8_t> mask);

}  // namespace numblocks::nn
