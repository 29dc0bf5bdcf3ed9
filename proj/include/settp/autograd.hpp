#pragma once

// A small reverse-mode tape over Matrix values. It covers exactly the
// operations the encoder-decoder backbone needs; each op records a closure
// that accumulates input gradients during backward().

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "settp/matrix.hpp"

namespace settp::ad {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  /// With grad_enabled = false no closures are recorded (inference mode).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  // Recorded closures capture `this`.
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Matrix value);
  /// Leaf borrowing external storage; `value` must outlive the tape.
  Var leaf(const Matrix& value, bool requires_grad);

  const Matrix& value(Var v) const;
  /// Gradient of the backward root w.r.t. v. Empty matrix when v received none.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Var matmul(Var a, Var b);     // a * b
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  /// Adds a 1 x c row to every row of a.
  Var add_row(Var a, Var row);
  Var relu(Var a);
  /// Row-wise layer normalization with per-column gain and bias (1 x c each).
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var concat_rows(Var top, Var bottom);
  /// Selects rows of `table`; rows may repeat.
  Var gather_rows(Var table, std::span<const int> ids);
  /// Takes the first `count` rows of a.
  Var take_rows(Var a, std::size_t count);
  /// Multi-head scaled dot-product attention. q is n x d, k and v are t x d;
  /// heads split the columns evenly. With `causal`, query i sees keys 0..i.
  Var attention(Var q, Var k, Var v, std::size_t heads, bool causal);
  /// Sum over rows of -log softmax(logits)[row, target[row]]; a 1 x 1 result.
  Var cross_entropy(Var logits, std::span<const int> targets);

  /// Seeds d(root)/d(root) = 1 and propagates. Root must be 1 x 1.
  void backward(Var root);

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix value, bool requires_grad);
  bool any_grad(std::initializer_list<Var> vs) const;
  /// Gradient buffer of v, zero-initialized on first use.
  Matrix& grad_buffer(Var v);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace settp::ad
