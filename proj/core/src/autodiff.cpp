#include "face/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace face::ad {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap mat(const Tensor& t) { return ECMap(t.data(), t.rows(), t.cols()); }

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
  throw ShapeError(std::string("ad::") + op_name(op) + ": " + detail);
}

void require_same_shape(OpKind op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    shape_fail(op, "operand shapes differ " + a.shape_str() + " vs " + b.shape_str());
}

Var make(OpKind op, std::vector<Var> inputs, Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->inputs = std::move(inputs);
  n->value = std::move(value);
  for (const auto& in : n->inputs) n->needs_grad |= in->needs_grad;
  return n;
}

Tensor map_unary(const Tensor& x, float (*f)(float)) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out.at(i) = f(x.at(i));
  return out;
}

Var ones_like(const Var& x) { return constant(Tensor::full(x->value.shape(), 1.0f)); }

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "Leaf";
    case OpKind::Constant: return "Constant";
    case OpKind::Add: return "Add";
    case OpKind::Sub: return "Sub";
    case OpKind::Mul: return "Mul";
    case OpKind::Div: return "Div";
    case OpKind::Neg: return "Neg";
    case OpKind::Scale: return "Scale";
    case OpKind::AddScalar: return "AddScalar";
    case OpKind::MatMul: return "MatMul";
    case OpKind::Transpose: return "Transpose";
    case OpKind::Exp: return "Exp";
    case OpKind::Log: return "Log";
    case OpKind::Sqrt: return "Sqrt";
    case OpKind::Relu: return "Relu";
    case OpKind::Step: return "Step";
    case OpKind::ClampMin: return "ClampMin";
    case OpKind::SumAll: return "SumAll";
    case OpKind::SumRows: return "SumRows";
    case OpKind::SumCols: return "SumCols";
    case OpKind::BroadcastRow: return "BroadcastRow";
    case OpKind::BroadcastCol: return "BroadcastCol";
    case OpKind::BroadcastAll: return "BroadcastAll";
    case OpKind::RowMax: return "RowMax";
    case OpKind::Reshape: return "Reshape";
    case OpKind::ConcatCols: return "ConcatCols";
    case OpKind::SliceCols: return "SliceCols";
    case OpKind::PadCols: return "PadCols";
    case OpKind::Gather: return "Gather";
    case OpKind::ScatterAdd: return "ScatterAdd";
  }
  return "?";
}

Var param(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->op = OpKind::Leaf;
  n->value = std::move(value);
  n->name = std::move(name);
  n->needs_grad = true;
  return n;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = OpKind::Constant;
  n->value = std::move(value);
  return n;
}

Var detach(const Var& x) { return constant(x->value); }

Var add(const Var& a, const Var& b) {
  require_same_shape(OpKind::Add, a->value, b->value);
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = a->value.at(i) + b->value.at(i);
  return make(OpKind::Add, {a, b}, std::move(out));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(OpKind::Sub, a->value, b->value);
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = a->value.at(i) - b->value.at(i);
  return make(OpKind::Sub, {a, b}, std::move(out));
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(OpKind::Mul, a->value, b->value);
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = a->value.at(i) * b->value.at(i);
  return make(OpKind::Mul, {a, b}, std::move(out));
}

Var div(const Var& a, const Var& b) {
  require_same_shape(OpKind::Div, a->value, b->value);
  Tensor out(a->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = a->value.at(i) / b->value.at(i);
  return make(OpKind::Div, {a, b}, std::move(out));
}

Var neg(const Var& x) {
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = -x->value.at(i);
  return make(OpKind::Neg, {x}, std::move(out));
}

Var scale(const Var& x, float c) {
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = x->value.at(i) * c;
  auto n = make(OpKind::Scale, {x}, std::move(out));
  n->scalar = c;
  return n;
}

Var add_scalar(const Var& x, float c) {
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = x->value.at(i) + c;
  auto n = make(OpKind::AddScalar, {x}, std::move(out));
  n->scalar = c;
  return n;
}

Var exp(const Var& x) { return make(OpKind::Exp, {x}, map_unary(x->value, [](float v) { return std::exp(v); })); }

Var log(const Var& x) { return make(OpKind::Log, {x}, map_unary(x->value, [](float v) { return std::log(v); })); }

Var sqrt(const Var& x) { return make(OpKind::Sqrt, {x}, map_unary(x->value, [](float v) { return std::sqrt(v); })); }

Var relu(const Var& x) {
  return make(OpKind::Relu, {x}, map_unary(x->value, [](float v) { return v > 0.0f ? v : 0.0f; }));
}

Var step(const Var& x) {
  return make(OpKind::Step, {x}, map_unary(x->value, [](float v) { return v > 0.0f ? 1.0f : 0.0f; }));
}

Var clamp_min(const Var& x, float c) {
  Tensor out(x->value.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out.at(i) = std::max(x->value.at(i), c);
  auto n = make(OpKind::ClampMin, {x}, std::move(out));
  n->scalar = c;
  return n;
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.cols() != bv.rows())
    shape_fail(OpKind::MatMul, "inner extents differ " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out({av.rows(), bv.cols()});
  EMap(out.data(), out.rows(), out.cols()).noalias() = mat(av) * mat(bv);
  return make(OpKind::MatMul, {a, b}, std::move(out));
}

Var transpose(const Var& x) {
  const Tensor& xv = x->value;
  Tensor out({xv.cols(), xv.rows()});
  EMap(out.data(), out.rows(), out.cols()) = mat(xv).transpose();
  return make(OpKind::Transpose, {x}, std::move(out));
}

Var sum_all(const Var& x) {
  double s = 0.0;
  for (int64_t i = 0; i < x->value.numel(); ++i) s += x->value.at(i);
  auto n = make(OpKind::SumAll, {x}, Tensor::scalar(static_cast<float>(s)));
  n->a0 = x->value.rows();
  n->a1 = x->value.cols();
  return n;
}

Var sum_rows(const Var& x) {
  int64_t r = x->value.rows(), c = x->value.cols();
  Tensor out({1, c});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(j) += x->value.at(i * c + j);
  auto n = make(OpKind::SumRows, {x}, std::move(out));
  n->a0 = r;
  return n;
}

Var sum_cols(const Var& x) {
  int64_t r = x->value.rows(), c = x->value.cols();
  Tensor out({r, 1});
  for (int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += x->value.at(i * c + j);
    out.at(i) = static_cast<float>(s);
  }
  auto n = make(OpKind::SumCols, {x}, std::move(out));
  n->a0 = c;
  return n;
}

Var broadcast_row(const Var& x, int64_t rows) {
  if (x->value.rows() != 1) shape_fail(OpKind::BroadcastRow, "expected a single row, got " + x->value.shape_str());
  int64_t c = x->value.cols();
  Tensor out({rows, c});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(i * c + j) = x->value.at(j);
  auto n = make(OpKind::BroadcastRow, {x}, std::move(out));
  n->a0 = rows;
  return n;
}

Var broadcast_col(const Var& x, int64_t cols) {
  if (x->value.cols() != 1) shape_fail(OpKind::BroadcastCol, "expected a single column, got " + x->value.shape_str());
  int64_t r = x->value.rows();
  Tensor out({r, cols});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at(i * cols + j) = x->value.at(i);
  auto n = make(OpKind::BroadcastCol, {x}, std::move(out));
  n->a0 = cols;
  return n;
}

Var broadcast_all(const Var& x, int64_t rows, int64_t cols) {
  if (x->value.numel() != 1) shape_fail(OpKind::BroadcastAll, "expected a scalar, got " + x->value.shape_str());
  auto n = make(OpKind::BroadcastAll, {x}, Tensor::full({rows, cols}, x->value.at(0)));
  n->a0 = rows;
  n->a1 = cols;
  return n;
}

Var row_max(const Var& x) {
  int64_t r = x->value.rows(), c = x->value.cols();
  Tensor out({r, 1});
  for (int64_t i = 0; i < r; ++i) {
    float m = x->value.at(i * c);
    for (int64_t j = 1; j < c; ++j) m = std::max(m, x->value.at(i * c + j));
    out.at(i) = m;
  }
  return make(OpKind::RowMax, {x}, std::move(out));
}

Var mean_all(const Var& x) { return scale(sum_all(x), 1.0f / static_cast<float>(x->value.numel())); }

Var reshape(const Var& x, std::vector<int64_t> shape) {
  Tensor out(std::move(shape), x->value.vec());
  if (out.numel() != x->value.numel())
    shape_fail(OpKind::Reshape, "element count changes " + x->value.shape_str() + " -> " + out.shape_str());
  return make(OpKind::Reshape, {x}, std::move(out));
}

Var concat_cols(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rows() != bv.rows())
    shape_fail(OpKind::ConcatCols, "row counts differ " + av.shape_str() + " vs " + bv.shape_str());
  int64_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out({r, ca + cb});
  for (int64_t i = 0; i < r; ++i) {
    std::copy_n(av.data() + i * ca, ca, out.data() + i * (ca + cb));
    std::copy_n(bv.data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
  }
  auto n = make(OpKind::ConcatCols, {a, b}, std::move(out));
  n->a0 = ca;
  return n;
}

Var slice_cols(const Var& x, int64_t start, int64_t len) {
  int64_t r = x->value.rows(), c = x->value.cols();
  if (start < 0 || len <= 0 || start + len > c)
    shape_fail(OpKind::SliceCols, "range [" + std::to_string(start) + ", +" + std::to_string(len) +
                                      ") out of " + std::to_string(c) + " columns");
  Tensor out({r, len});
  for (int64_t i = 0; i < r; ++i)
    std::copy_n(x->value.data() + i * c + start, len, out.data() + i * len);
  auto n = make(OpKind::SliceCols, {x}, std::move(out));
  n->a0 = start;
  n->a1 = c;
  return n;
}

Var pad_cols(const Var& x, int64_t start, int64_t total) {
  int64_t r = x->value.rows(), c = x->value.cols();
  if (start < 0 || start + c > total) shape_fail(OpKind::PadCols, "columns do not fit the padded width");
  Tensor out({r, total});
  for (int64_t i = 0; i < r; ++i)
    std::copy_n(x->value.data() + i * c, c, out.data() + i * total + start);
  auto n = make(OpKind::PadCols, {x}, std::move(out));
  n->a0 = start;
  n->a1 = c;
  return n;
}

Var gather(const Var& x, IndexVec index, std::vector<int64_t> out_shape) {
  Tensor out(std::move(out_shape));
  if (static_cast<int64_t>(index->size()) != out.numel())
    shape_fail(OpKind::Gather, "index length does not match the output shape");
  int64_t n_in = x->value.numel();
  for (int64_t i = 0; i < out.numel(); ++i) {
    int64_t k = (*index)[i];
    if (k >= n_in) shape_fail(OpKind::Gather, "index out of range");
    out.at(i) = k < 0 ? 0.0f : x->value.at(k);
  }
  auto n = make(OpKind::Gather, {x}, std::move(out));
  n->index = std::move(index);
  return n;
}

Var scatter_add(const Var& x, IndexVec index, std::vector<int64_t> out_shape) {
  Tensor out(std::move(out_shape));
  if (static_cast<int64_t>(index->size()) != x->value.numel())
    shape_fail(OpKind::ScatterAdd, "index length does not match the input shape");
  for (int64_t i = 0; i < x->value.numel(); ++i) {
    int64_t k = (*index)[i];
    if (k >= out.numel()) shape_fail(OpKind::ScatterAdd, "index out of range");
    if (k >= 0) out.at(k) += x->value.at(i);
  }
  auto n = make(OpKind::ScatterAdd, {x}, std::move(out));
  n->index = std::move(index);
  return n;
}

Var sigmoid(const Var& x) {
  return div(ones_like(x), add_scalar(exp(neg(x)), 1.0f));
}

Var softmax_rows(const Var& x) {
  // Shifting by the row maximum is exact for softmax and keeps exp() bounded;
  // the shift is a constant of the backward pass.
  auto shifted = sub(x, broadcast_col(row_max(x), x->value.cols()));
  auto e = exp(shifted);
  return div(e, broadcast_col(sum_cols(e), x->value.cols()));
}

namespace {

// Adjoints of `node`'s inputs given the adjoint of its output.
void backprop(const Var& node, const Var& g, std::unordered_map<Node*, Var>& adj) {
  auto accumulate = [&adj](const Var& in, const Var& contribution) {
    if (!in->needs_grad || !contribution) return;
    auto it = adj.find(in.get());
    if (it == adj.end())
      adj.emplace(in.get(), contribution);
    else
      it->second = add(it->second, contribution);
  };

  const auto& in = node->inputs;
  switch (node->op) {
    case OpKind::Leaf:
    case OpKind::Constant:
    case OpKind::Step:
    case OpKind::RowMax:
      break;
    case OpKind::Add:
      accumulate(in[0], g);
      accumulate(in[1], g);
      break;
    case OpKind::Sub:
      accumulate(in[0], g);
      accumulate(in[1], neg(g));
      break;
    case OpKind::Mul:
      accumulate(in[0], mul(g, in[1]));
      accumulate(in[1], mul(g, in[0]));
      break;
    case OpKind::Div:
      accumulate(in[0], div(g, in[1]));
      accumulate(in[1], neg(div(mul(g, in[0]), mul(in[1], in[1]))));
      break;
    case OpKind::Neg:
      accumulate(in[0], neg(g));
      break;
    case OpKind::Scale:
      accumulate(in[0], scale(g, node->scalar));
      break;
    case OpKind::AddScalar:
      accumulate(in[0], g);
      break;
    case OpKind::MatMul:
      accumulate(in[0], matmul(g, transpose(in[1])));
      accumulate(in[1], matmul(transpose(in[0]), g));
      break;
    case OpKind::Transpose:
      accumulate(in[0], transpose(g));
      break;
    case OpKind::Exp:
      accumulate(in[0], mul(g, node));
      break;
    case OpKind::Log:
      accumulate(in[0], div(g, in[0]));
      break;
    case OpKind::Sqrt:
      accumulate(in[0], scale(div(g, node), 0.5f));
      break;
    case OpKind::Relu:
      accumulate(in[0], mul(g, step(in[0])));
      break;
    case OpKind::ClampMin:
      accumulate(in[0], mul(g, step(add_scalar(in[0], -node->scalar))));
      break;
    case OpKind::SumAll:
      accumulate(in[0], broadcast_all(g, node->a0, node->a1));
      break;
    case OpKind::SumRows:
      accumulate(in[0], broadcast_row(g, node->a0));
      break;
    case OpKind::SumCols:
      accumulate(in[0], broadcast_col(g, node->a0));
      break;
    case OpKind::BroadcastRow:
      accumulate(in[0], sum_rows(g));
      break;
    case OpKind::BroadcastCol:
      accumulate(in[0], sum_cols(g));
      break;
    case OpKind::BroadcastAll:
      accumulate(in[0], sum_all(g));
      break;
    case OpKind::Reshape:
      accumulate(in[0], reshape(g, in[0]->value.shape()));
      break;
    case OpKind::ConcatCols:
      accumulate(in[0], slice_cols(g, 0, node->a0));
      accumulate(in[1], slice_cols(g, node->a0, node->value.cols() - node->a0));
      break;
    case OpKind::SliceCols:
      accumulate(in[0], pad_cols(g, node->a0, node->a1));
      break;
    case OpKind::PadCols:
      accumulate(in[0], slice_cols(g, node->a0, node->a1));
      break;
    case OpKind::Gather:
      accumulate(in[0], scatter_add(g, node->index, in[0]->value.shape()));
      break;
    case OpKind::ScatterAdd:
      accumulate(in[0], gather(g, node->index, in[0]->value.shape()));
      break;
  }
}

}  // namespace

std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt) {
  if (output->value.numel() != 1) throw Error("ad::grad: output must be scalar, got " + output->value.shape_str());

  // Iterative post-order over the subgraph that needs gradients.
  std::vector<Var> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Var, size_t>> stack;
  if (output->needs_grad) stack.emplace_back(output, 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0 && seen.count(node.get())) {
      stack.pop_back();
      continue;
    }
    bool descended = false;
    while (next < node->inputs.size()) {
      const Var& in = node->inputs[next++];
      if (in->needs_grad && !seen.count(in.get())) {
        stack.emplace_back(in, 0);
        descended = true;
        break;
      }
    }
    if (descended) continue;
    seen.insert(node.get());
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<Node*, Var> adj;
  if (output->needs_grad) adj.emplace(output.get(), constant(Tensor::scalar(1.0f)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto a = adj.find(it->get());
    if (a == adj.end()) continue;  // unreachable from the output adjoint
    backprop(*it, a->second, adj);
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = adj.find(w.get());
    result.push_back(it != adj.end() ? it->second : constant(Tensor::zeros(w->value.shape())));
  }
  return result;
}

}  // namespace face::ad
