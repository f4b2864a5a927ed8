#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "calattn/tensor.hpp"

namespace calattn::ad {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
};

/// Records one forward pass. Nodes are appended in execution order, so every
/// node's parents precede it and a reverse sweep is a valid topological order.
///
/// Parameters are registered by pointer and receive gradients in place;
/// intermediates are owned by the tape and die with it.
class Tape {
 public:
  // Called with the tape and the id of the node being differentiated.
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf whose gradient accumulates into `param.grad` across backward calls.
  // Registering the same tensor twice returns the existing node.
  Var param(Tensor& param);
  // Leaf that never receives a gradient.
  Var constant(Tensor value);
  // Non-owning leaf without gradient; `value` must outlive the tape.
  Var view(const Tensor& value);

  // Appends an op result. `backprop` is only invoked when some parent
  // requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> parents, Backprop backprop);

  Tensor& tensor(std::size_t id) { return *nodes_[id].tensor; }
  const Tensor& tensor(std::size_t id) const { return *nodes_[id].tensor; }
  Tensor& tensor(Var v) { return tensor(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of node `id` for the current backward pass, zero-filled
  // on first use. Parameters get a scratch buffer that is added to
  // `param.grad` once the pass completes.
  std::span<double> grad(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Intermediate
  /// gradients are reset first; parameter gradients accumulate.
  void backward(Var loss);

 private:
  struct Node {
    Tensor* tensor = nullptr;
    std::vector<std::size_t> parents;
    Backprop backprop;
    bool requires_grad = false;
    bool is_param = false;
    Buffer scratch;  // parameters only
  };

  std::deque<Tensor> owned_;
  std::vector<Node> nodes_;
};

// ---- ops ---------------------------------------------------------------
// Tensors are treated as matrices whose row width is the last extent.

Var matmul(Var a, Var b);                       // [m,k] x [k,n]
Var linear(Var x, Var weight, const Var* bias);  // x W^T + b, W is [out,in] or [in]
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);
Var add(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var add_scalar(Var x, double c);
Var mul_scalar(Var x, double c);
Var sum(Var x);
Var mean(Var x);
Var gelu(Var x);
Var softplus(Var x);
Var softmax_rows(Var x);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

// Multi-head scaled dot-product attention over `batch` independent sequences
// of `seq` rows each. q, k, v, result: [batch*seq, d].
Var attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads);
// Attention probabilities [batch, heads, seq, seq] for inspection (no tape).
Tensor attention_weights(const Tensor& q, const Tensor& k, std::size_t batch, std::size_t seq,
                         std::size_t heads);

// [batch*n, d] tokens -> [batch*(n+1), d]: row 0 of each sequence is `cls`,
// then every row gets the matching row of `pos` added.
Var assemble_sequence(Var tokens, Var cls, Var pos, std::size_t batch);
Var gather_rows(Var x, std::vector<std::size_t> rows);
// Mean of rows [first, first+count) inside each block of `block` rows.
Var block_row_mean(Var x, std::size_t block, std::size_t first, std::size_t count);
Var concat_cols(Var a, Var b);
// x[r, :] / s[r] for s of size rows(x).
Var divide_rows(Var x, Var s);

// ---- plain-value kernels shared with non-tape code ----------------------

double gelu_value(double x);
double gelu_derivative(double x);
double softplus_value(double x);
double sigmoid_value(double x);
// Writes softmax(logits / temperature) into `out` using max subtraction.
void softmax_into(std::span<const double> logits, double temperature, std::span<double> out);
std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0);
double log_sum_exp(std::span<const double> values);

// ---- gradient checking -------------------------------------------------

using ScalarBuilder = std::function<Var(Tape&)>;

/// Compares backward() against central finite differences for every entry of
/// `params`. `build` must register each tensor in `params` via Tape::param
/// and return a scalar. Returns max |analytic - fd| / max(1, |fd|).
/// Parameter gradients are cleared before and after the check.
double grad_check(const ScalarBuilder& build, std::span<Tensor* const> params, double eps = 1e-5);

}  // namespace calattn::ad
