#pragma once

// Tape-based reverse-mode differentiation over dense row-major matrices.
//
// Values live on the tape; a Var is a handle (tape, slot). Records are
// appended in creation order, which is a topological order, and backward
// walks them once in reverse. An op whose inputs are all constants produces
// a constant and records no backward step.
//
// Shape table (n = rows, d = cols):
//   gather_rows(X[m,d], idx[n])         -> [n,d]   idx < m
//   mean_rows(X[n,d])                   -> [1,d]   n >= 1
//   segment_mean/sum/max(X[n,d], off)   -> [s,d]   off has s+1 entries, off.back() == n
//   segment_softmax(x[n,1], off)        -> [n,1]
//   segment_attention(Q,K,V[n,d], off)  -> [n,d]   softmax(QK^T * scale) V within each segment
//   matmul(A[n,k], B[k,d])              -> [n,d]
//   add/mul(A, B)                       -> same shape, elementwise
//   scale(A, c)                         -> A * c
//   scale_rows(X[n,d], s[n,1])          -> row r multiplied by s[r]
//   concat_cols({A[n,a], B[n,b], ...})  -> [n,a+b+...]
//   slice_cols(X[n,d], b, e)            -> [n,e-b]
//   softmax(X[n,d], mask?)              -> softmax over each row; masked entries get 0,
//                                          fully masked rows are all zero
//   sigmoid/relu/log/log_sigmoid/negate -> elementwise
//   cosine_similarity(A[n,d], B[n,d])   -> [n,1]   row-wise; a zero-norm row gives 0 and no gradient
//   row_dot(A[n,d], B[n,d])             -> [n,1]
//   row_sum(X[n,d])                     -> [n,1]
//   sum_squares(X), sum(X), mean(X)     -> [1,1]

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "coldgraph/tensor.hpp"

namespace coldgraph::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Op : std::uint8_t {
  kLeaf,
  kGatherRows,
  kMeanRows,
  kSegmentMean,
  kSegmentSum,
  kSegmentMax,
  kSegmentSoftmax,
  kSegmentAttention,
  kMatmul,
  kAdd,
  kMul,
  kScale,
  kScaleRows,
  kConcatCols,
  kSliceCols,
  kSoftmax,
  kSigmoid,
  kRelu,
  kLog,
  kLogSigmoid,
  kNegate,
  kCosine,
  kRowDot,
  kRowSum,
  kSumSquares,
  kSum,
  kMean,
};

const char* op_name(Op op);

// Gradients produced by one backward pass, indexed by tape slot.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> g) : grads_(std::move(g)) {}
  // Zero tensor of the right shape when no path reached the variable.
  const Tensor& of(Var v) const { return grads_.at(static_cast<std::size_t>(v.id)); }

 private:
  std::vector<Tensor> grads_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return values_.at(static_cast<std::size_t>(v.id)); }
  bool requires_grad(Var v) const { return records_.at(static_cast<std::size_t>(v.id)).grad; }
  std::size_t size() const { return records_.size(); }

  // Counts records whose op recorded a backward step (not leaves or constants).
  std::size_t recorded_ops() const;

  // Loss must be 1x1. A second call without reset() throws "tape consumed".
  Gradients backward(Var loss);
  void reset();

  // Used by the op functions below.
  struct Aux {
    std::vector<int> index;
    std::vector<std::size_t> offsets;
    std::vector<int> argmax;
    Tensor saved;
    Tensor mask;
    double scalar = 0.0;
    std::size_t lo = 0, hi = 0;
  };
  Var push(Op op, std::vector<int> inputs, Tensor value, std::shared_ptr<Aux> aux = nullptr);

 private:
  struct Record {
    Op op = Op::kLeaf;
    bool grad = false;
    std::vector<int> inputs;
    std::shared_ptr<Aux> aux;
  };
  void backward_record(std::size_t i, std::vector<Tensor>& grads) const;

  std::vector<Tensor> values_;
  std::vector<Record> records_;
  bool consumed_ = false;
};

Var gather_rows(Var x, std::vector<int> index);
Var mean_rows(Var x);
Var segment_mean(Var x, std::vector<std::size_t> offsets);
Var segment_sum(Var x, std::vector<std::size_t> offsets);
Var segment_max(Var x, std::vector<std::size_t> offsets);
Var segment_softmax(Var x, std::vector<std::size_t> offsets);
Var segment_attention(Var q, Var k, Var v, std::vector<std::size_t> offsets, double scale);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var scale_rows(Var x, Var s);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var softmax(Var x, std::optional<Tensor> mask = std::nullopt);
Var sigmoid(Var x);
Var relu(Var x);
Var log(Var x);
Var log_sigmoid(Var x);
Var negate(Var x);
Var cosine_similarity(Var a, Var b);
Var row_dot(Var a, Var b);
Var row_sum(Var x);
Var sum_squares(Var x);
Var sum(Var x);
Var mean(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// Builds a scalar loss on a fresh tape from leaves holding `params`.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

// Max over all coordinates of |analytic - numeric| / max(1e-8, |numeric|), with
// numeric gradients from five-point central differences of step eps.
double finite_diff_check(const LossBuilder& f, const std::vector<Tensor>& params, double eps = 1e-4);

}  // namespace coldgraph::ad
