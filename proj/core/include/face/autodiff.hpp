#pragma once

#include <memory>
#include <string>
#include <vector>

#include "face/tensor.hpp"

// Reverse-mode automatic differentiation over an eagerly evaluated graph.
// Backward rules emit ordinary graph nodes, so gradients are themselves
// differentiable (gradients of gradients work by construction).
namespace face::ad {

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Scale,        // x * c
  AddScalar,    // x + c
  MatMul,
  Transpose,
  Exp,
  Log,
  Sqrt,
  Relu,
  Step,         // 1[x > 0], zero gradient
  ClampMin,     // max(x, c)
  SumAll,       // m x n -> 1 x 1
  SumRows,      // m x n -> 1 x n
  SumCols,      // m x n -> m x 1
  BroadcastRow, // 1 x n -> m x n
  BroadcastCol, // m x 1 -> m x n
  BroadcastAll, // 1 x 1 -> m x n
  RowMax,       // m x n -> m x 1, treated as constant in backward
  Reshape,
  ConcatCols,
  SliceCols,
  PadCols,      // embed columns into a wider zero matrix
  Gather,       // flat index gather, -1 reads as zero
  ScatterAdd,   // inverse of Gather
};

struct Node;
using Var = std::shared_ptr<Node>;
using IndexVec = std::shared_ptr<const std::vector<int64_t>>;

struct Node {
  OpKind op;
  std::vector<Var> inputs;
  Tensor value;
  bool needs_grad = false;
  std::string name;       // leaves only
  float scalar = 0.0f;    // Scale / AddScalar / ClampMin
  int64_t a0 = 0, a1 = 0; // op-specific extents (slice start/len, broadcast dims)
  IndexVec index;         // Gather / ScatterAdd
};

const char* op_name(OpKind op);

// Leaves and constants. A parameter participates in grad(); a constant never does.
Var param(Tensor value, std::string name);
Var constant(Tensor value);
// Detached copy of a node's value (cuts the gradient path).
Var detach(const Var& x);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, float c);
Var add_scalar(const Var& x, float c);
Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var relu(const Var& x);
Var step(const Var& x);
Var clamp_min(const Var& x, float c);

// Linear algebra over the (rows, cols) view.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);

// Reductions and broadcasts.
Var sum_all(const Var& x);
Var sum_rows(const Var& x);
Var sum_cols(const Var& x);
Var broadcast_row(const Var& x, int64_t rows);
Var broadcast_col(const Var& x, int64_t cols);
Var broadcast_all(const Var& x, int64_t rows, int64_t cols);
Var row_max(const Var& x);
Var mean_all(const Var& x);

// Structure.
Var reshape(const Var& x, std::vector<int64_t> shape);
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& x, int64_t start, int64_t len);
Var pad_cols(const Var& x, int64_t start, int64_t total);
// out[i] = index[i] < 0 ? 0 : flat(x)[index[i]]
Var gather(const Var& x, IndexVec index, std::vector<int64_t> out_shape);
// out[index[i]] += flat(x)[i]; entries with index -1 are dropped.
Var scatter_add(const Var& x, IndexVec index, std::vector<int64_t> out_shape);

// Composites.
Var sigmoid(const Var& x);
Var softmax_rows(const Var& x);

/// Reverse-mode gradients of a scalar node with respect to `wrt`.
/// Results are graph nodes and can be differentiated again. Parameters the
/// output does not depend on get zero gradients.
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt);

}  // namespace face::ad
