#include "coldgraph/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "coldgraph/error.hpp"
#include "coldgraph/kernels.hpp"

namespace coldgraph::ad {
namespace {

namespace kp = kernels::parallel;

Tape& tape_of(Var v) {
  if (!v.valid()) throw Error("operation on an unbound variable");
  return *v.tape;
}

Tape& common_tape(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (Var v : vars) {
    Tape& tv = tape_of(v);
    if (t != nullptr && t != &tv) throw Error("operands recorded on different tapes");
    t = &tv;
  }
  return *t;
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

void check_offsets(const char* op, const std::vector<std::size_t>& offsets, std::size_t rows) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw ShapeError(std::string(op) + ": segment offsets do not partition " +
                     std::to_string(rows) + " rows");
  }
}

Tensor& slot(std::vector<Tensor>& grads, int id, const Tensor& like) {
  Tensor& g = grads[static_cast<std::size_t>(id)];
  if (g.data.empty() && like.size() > 0) g = Tensor(like.rows, like.cols);
  if (g.rows != like.rows || g.cols != like.cols) g = Tensor(like.rows, like.cols);
  return g;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid_scalar(double x) {
  // log(sigmoid(x)) = -log1p(exp(-x)), evaluated without overflow on either side.
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

template <typename F>
Var unary(Var x, Op op, F f) {
  Tape& t = tape_of(x);
  Tensor out = t.value(x);
  for (double& v : out.data) v = f(v);
  return t.push(op, {x.id}, std::move(out));
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kGatherRows: return "gather_rows";
    case Op::kMeanRows: return "mean_rows";
    case Op::kSegmentMean: return "segment_mean";
    case Op::kSegmentSum: return "segment_sum";
    case Op::kSegmentMax: return "segment_max";
    case Op::kSegmentSoftmax: return "segment_softmax";
    case Op::kSegmentAttention: return "segment_attention";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kScaleRows: return "scale_rows";
    case Op::kConcatCols: return "concat";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSoftmax: return "softmax";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRelu: return "relu";
    case Op::kLog: return "log";
    case Op::kLogSigmoid: return "log_sigmoid";
    case Op::kNegate: return "negate";
    case Op::kCosine: return "cosine_similarity";
    case Op::kRowDot: return "row_dot";
    case Op::kRowSum: return "row_sum";
    case Op::kSumSquares: return "sum_squares";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
  }
  return "?";
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  values_.push_back(std::move(value));
  records_.push_back(Record{Op::kLeaf, requires_grad, {}, nullptr});
  return Var{this, static_cast<int>(records_.size() - 1)};
}

Var Tape::push(Op op, std::vector<int> inputs, Tensor value, std::shared_ptr<Aux> aux) {
  bool grad = false;
  for (int id : inputs) grad = grad || records_[static_cast<std::size_t>(id)].grad;
  values_.push_back(std::move(value));
  if (grad) {
    records_.push_back(Record{op, true, std::move(inputs), std::move(aux)});
  } else {
    records_.push_back(Record{op, false, {}, nullptr});
  }
  return Var{this, static_cast<int>(records_.size() - 1)};
}

std::size_t Tape::recorded_ops() const {
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [](const Record& r) {
    return r.grad && r.op != Op::kLeaf;
  }));
}

void Tape::reset() {
  values_.clear();
  records_.clear();
  consumed_ = false;
}

Gradients Tape::backward(Var loss) {
  if (consumed_) throw Error("tape consumed");
  if (loss.tape != this) throw Error("loss belongs to another tape");
  const Tensor& lv = value(loss);
  if (lv.rows != 1 || lv.cols != 1) throw ShapeError("backward needs a scalar loss, got " + lv.shape_str());
  consumed_ = true;

  std::vector<Tensor> grads(values_.size());
  grads[static_cast<std::size_t>(loss.id)] = Tensor(1, 1, 1.0);
  for (std::size_t i = static_cast<std::size_t>(loss.id) + 1; i-- > 0;) {
    if (!records_[i].grad || records_[i].op == Op::kLeaf || grads[i].data.empty()) continue;
    backward_record(i, grads);
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].data.empty()) grads[i] = Tensor(values_[i].rows, values_[i].cols);
  }
  return Gradients(std::move(grads));
}

void Tape::backward_record(std::size_t i, std::vector<Tensor>& grads) const {
  const Record& rec = records_[i];
  const Tensor& dy = grads[i];
  const Tensor& y = values_[i];
  auto in = [&](std::size_t k) -> const Tensor& { return values_[static_cast<std::size_t>(rec.inputs[k])]; };
  auto needs = [&](std::size_t k) { return records_[static_cast<std::size_t>(rec.inputs[k])].grad; };
  auto g = [&](std::size_t k) -> Tensor& { return slot(grads, rec.inputs[k], in(k)); };
  const Aux* aux = rec.aux.get();

  switch (rec.op) {
    case Op::kLeaf:
      break;
    case Op::kGatherRows: {
      Tensor& dx = g(0);
      kp::scatter_add_rows(dy.data, dy.cols, aux->index, dx.data);
      break;
    }
    case Op::kMeanRows: {
      Tensor& dx = g(0);
      const double inv = 1.0 / static_cast<double>(dx.rows);
      for (std::size_t r = 0; r < dx.rows; ++r)
        for (std::size_t c = 0; c < dx.cols; ++c) dx(r, c) += dy(0, c) * inv;
      break;
    }
    case Op::kSegmentMean:
    case Op::kSegmentSum: {
      Tensor& dx = g(0);
      const auto& off = aux->offsets;
      for (std::size_t s = 0; s + 1 < off.size(); ++s) {
        const std::size_t n = off[s + 1] - off[s];
        if (n == 0) continue;
        const double w = rec.op == Op::kSegmentMean ? 1.0 / static_cast<double>(n) : 1.0;
        for (std::size_t r = off[s]; r < off[s + 1]; ++r)
          for (std::size_t c = 0; c < dx.cols; ++c) dx(r, c) += dy(s, c) * w;
      }
      break;
    }
    case Op::kSegmentMax: {
      Tensor& dx = g(0);
      for (std::size_t s = 0; s < dy.rows; ++s) {
        for (std::size_t c = 0; c < dy.cols; ++c) {
          const int r = aux->argmax[s * dy.cols + c];
          if (r >= 0) dx(static_cast<std::size_t>(r), c) += dy(s, c);
        }
      }
      break;
    }
    case Op::kSegmentSoftmax: {
      Tensor& dx = g(0);
      const auto& off = aux->offsets;
      for (std::size_t s = 0; s + 1 < off.size(); ++s) {
        double inner = 0.0;
        for (std::size_t r = off[s]; r < off[s + 1]; ++r) inner += y(r, 0) * dy(r, 0);
        for (std::size_t r = off[s]; r < off[s + 1]; ++r) dx(r, 0) += y(r, 0) * (dy(r, 0) - inner);
      }
      break;
    }
    case Op::kSegmentAttention: {
      const Tensor& q = in(0);
      const Tensor& k = in(1);
      const Tensor& v = in(2);
      const std::size_t d = q.cols;
      const auto& off = aux->offsets;
      const double sc = aux->scalar;
      const double* attn = aux->saved.data.data();
      Tensor* dq = needs(0) ? &g(0) : nullptr;
      Tensor* dk = needs(1) ? &g(1) : nullptr;
      Tensor* dv = needs(2) ? &g(2) : nullptr;
      std::vector<double> da, ds;
      for (std::size_t s = 0; s + 1 < off.size(); ++s) {
        const std::size_t b = off[s], n = off[s + 1] - off[s];
        da.assign(n * n, 0.0);
        ds.assign(n * n, 0.0);
        for (std::size_t i2 = 0; i2 < n; ++i2) {
          for (std::size_t j = 0; j < n; ++j) {
            const double a = attn[i2 * n + j];
            if (dv != nullptr) {
              for (std::size_t c = 0; c < d; ++c) (*dv)(b + j, c) += a * dy(b + i2, c);
            }
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += dy(b + i2, c) * v(b + j, c);
            da[i2 * n + j] = acc;
          }
          double inner = 0.0;
          for (std::size_t j = 0; j < n; ++j) inner += da[i2 * n + j] * attn[i2 * n + j];
          for (std::size_t j = 0; j < n; ++j) ds[i2 * n + j] = attn[i2 * n + j] * (da[i2 * n + j] - inner) * sc;
        }
        for (std::size_t i2 = 0; i2 < n; ++i2) {
          for (std::size_t j = 0; j < n; ++j) {
            const double w = ds[i2 * n + j];
            if (dq != nullptr) {
              for (std::size_t c = 0; c < d; ++c) (*dq)(b + i2, c) += w * k(b + j, c);
            }
            if (dk != nullptr) {
              for (std::size_t c = 0; c < d; ++c) (*dk)(b + j, c) += w * q(b + i2, c);
            }
          }
        }
        attn += n * n;
      }
      break;
    }
    case Op::kMatmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (needs(0)) kp::gemm({a.rows, a.cols, b.cols}, dy.data, false, b.data, true, g(0).data, true);
      if (needs(1)) kp::gemm({b.rows, b.cols, a.rows}, a.data, true, dy.data, false, g(1).data, true);
      break;
    }
    case Op::kAdd: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!needs(k)) continue;
        Tensor& dx = g(k);
        for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += dy.data[j];
      }
      break;
    }
    case Op::kMul: {
      if (needs(0)) {
        Tensor& dx = g(0);
        for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += dy.data[j] * in(1).data[j];
      }
      if (needs(1)) {
        Tensor& dx = g(1);
        for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += dy.data[j] * in(0).data[j];
      }
      break;
    }
    case Op::kScale: {
      Tensor& dx = g(0);
      for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += dy.data[j] * aux->scalar;
      break;
    }
    case Op::kScaleRows: {
      const Tensor& x = in(0);
      const Tensor& s = in(1);
      if (needs(0)) {
        Tensor& dx = g(0);
        for (std::size_t r = 0; r < x.rows; ++r)
          for (std::size_t c = 0; c < x.cols; ++c) dx(r, c) += dy(r, c) * s(r, 0);
      }
      if (needs(1)) {
        Tensor& dsv = g(1);
        for (std::size_t r = 0; r < x.rows; ++r) dsv(r, 0) += dot(dy.row_span(r), x.row_span(r));
      }
      break;
    }
    case Op::kConcatCols: {
      std::size_t col = 0;
      for (std::size_t k = 0; k < rec.inputs.size(); ++k) {
        const Tensor& part = in(k);
        if (needs(k)) {
          Tensor& dx = g(k);
          for (std::size_t r = 0; r < part.rows; ++r)
            for (std::size_t c = 0; c < part.cols; ++c) dx(r, c) += dy(r, col + c);
        }
        col += part.cols;
      }
      break;
    }
    case Op::kSliceCols: {
      Tensor& dx = g(0);
      for (std::size_t r = 0; r < dy.rows; ++r)
        for (std::size_t c = 0; c < dy.cols; ++c) dx(r, aux->lo + c) += dy(r, c);
      break;
    }
    case Op::kSoftmax: {
      Tensor& dx = g(0);
      for (std::size_t r = 0; r < y.rows; ++r) {
        const double inner = dot(y.row_span(r), dy.row_span(r));
        for (std::size_t c = 0; c < y.cols; ++c) dx(r, c) += y(r, c) * (dy(r, c) - inner);
      }
      break;
    }
    case Op::kSigmoid: {
      Tensor& dx = g(0);
      for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += dy.data[j] * y.data[j] * (1.0 - y.data[j]);
      break;
    }
    case Op::kRelu: {
      Tensor& dx = g(0);
      for (std::size_t j = 0; j < dx.size(); ++j) {
        if (in(0).data[j] > 0.0) dx.data[j] += dy.data[j];
      }
      break;
    }
    case Op::kLog: {
      Tensor& dx = g(0);
      for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += dy.data[j] / in(0).data[j];
      break;
    }
    case Op::kLogSigmoid: {
      Tensor& dx = g(0);
      for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += dy.data[j] * sigmoid_scalar(-in(0).data[j]);
      break;
    }
    case Op::kNegate: {
      Tensor& dx = g(0);
      for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] -= dy.data[j];
      break;
    }
    case Op::kCosine: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      for (std::size_t r = 0; r < a.rows; ++r) {
        const double na = std::sqrt(dot(a.row_span(r), a.row_span(r)));
        const double nb = std::sqrt(dot(b.row_span(r), b.row_span(r)));
        if (na == 0.0 || nb == 0.0) continue;
        const double cs = y(r, 0);
        const double up = dy(r, 0);
        if (needs(0)) {
          Tensor& da = g(0);
          for (std::size_t c = 0; c < a.cols; ++c)
            da(r, c) += up * (b(r, c) / (na * nb) - cs * a(r, c) / (na * na));
        }
        if (needs(1)) {
          Tensor& db = g(1);
          for (std::size_t c = 0; c < b.cols; ++c)
            db(r, c) += up * (a(r, c) / (na * nb) - cs * b(r, c) / (nb * nb));
        }
      }
      break;
    }
    case Op::kRowDot: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (needs(0)) {
        Tensor& da = g(0);
        for (std::size_t r = 0; r < a.rows; ++r)
          for (std::size_t c = 0; c < a.cols; ++c) da(r, c) += dy(r, 0) * b(r, c);
      }
      if (needs(1)) {
        Tensor& db = g(1);
        for (std::size_t r = 0; r < a.rows; ++r)
          for (std::size_t c = 0; c < a.cols; ++c) db(r, c) += dy(r, 0) * a(r, c);
      }
      break;
    }
    case Op::kRowSum: {
      Tensor& dx = g(0);
      for (std::size_t r = 0; r < dx.rows; ++r)
        for (std::size_t c = 0; c < dx.cols; ++c) dx(r, c) += dy(r, 0);
      break;
    }
    case Op::kSumSquares: {
      Tensor& dx = g(0);
      for (std::size_t j = 0; j < dx.size(); ++j) dx.data[j] += 2.0 * in(0).data[j] * dy.data[0];
      break;
    }
    case Op::kSum:
    case Op::kMean: {
      Tensor& dx = g(0);
      const double w = rec.op == Op::kMean ? dy.data[0] / static_cast<double>(dx.size()) : dy.data[0];
      for (double& v : dx.data) v += w;
      break;
    }
  }
}

Var gather_rows(Var x, std::vector<int> index) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  for (int r : index) {
    if (r < 0 || static_cast<std::size_t>(r) >= xv.rows) {
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range for " + xv.shape_str());
    }
  }
  Tensor out(index.size(), xv.cols);
  kp::gather_rows(xv.data, xv.cols, index, out.data);
  auto aux = std::make_shared<Tape::Aux>();
  aux->index = std::move(index);
  return t.push(Op::kGatherRows, {x.id}, std::move(out), std::move(aux));
}

Var mean_rows(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (xv.rows == 0) throw ShapeError("mean_rows of an empty tensor");
  Tensor out(1, xv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < xv.cols; ++c) out(0, c) += xv(r, c);
  for (double& v : out.data) v /= static_cast<double>(xv.rows);
  return t.push(Op::kMeanRows, {x.id}, std::move(out));
}

Var segment_mean(Var x, std::vector<std::size_t> offsets) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  check_offsets("segment_mean", offsets, xv.rows);
  Tensor out(offsets.size() - 1, xv.cols);
  kp::segment_mean(xv.data, xv.cols, offsets, out.data);
  auto aux = std::make_shared<Tape::Aux>();
  aux->offsets = std::move(offsets);
  return t.push(Op::kSegmentMean, {x.id}, std::move(out), std::move(aux));
}

Var segment_sum(Var x, std::vector<std::size_t> offsets) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  check_offsets("segment_sum", offsets, xv.rows);
  Tensor out(offsets.size() - 1, xv.cols);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s)
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < xv.cols; ++c) out(s, c) += xv(r, c);
  auto aux = std::make_shared<Tape::Aux>();
  aux->offsets = std::move(offsets);
  return t.push(Op::kSegmentSum, {x.id}, std::move(out), std::move(aux));
}

Var segment_max(Var x, std::vector<std::size_t> offsets) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  check_offsets("segment_max", offsets, xv.rows);
  const std::size_t n_seg = offsets.size() - 1;
  Tensor out(n_seg, xv.cols);
  auto aux = std::make_shared<Tape::Aux>();
  aux->argmax.assign(n_seg * xv.cols, -1);
  for (std::size_t s = 0; s < n_seg; ++s) {
    for (std::size_t c = 0; c < xv.cols; ++c) {
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
        int& am = aux->argmax[s * xv.cols + c];
        if (am < 0 || xv(r, c) > xv(static_cast<std::size_t>(am), c)) am = static_cast<int>(r);
      }
      const int am = aux->argmax[s * xv.cols + c];
      if (am >= 0) out(s, c) = xv(static_cast<std::size_t>(am), c);
    }
  }
  aux->offsets = std::move(offsets);
  return t.push(Op::kSegmentMax, {x.id}, std::move(out), std::move(aux));
}

Var segment_softmax(Var x, std::vector<std::size_t> offsets) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (xv.cols != 1) throw ShapeError("segment_softmax expects a column, got " + xv.shape_str());
  check_offsets("segment_softmax", offsets, xv.rows);
  Tensor out(xv.rows, 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s] == offsets[s + 1]) continue;
    double mx = xv(offsets[s], 0);
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) mx = std::max(mx, xv(r, 0));
    double z = 0.0;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) z += (out(r, 0) = std::exp(xv(r, 0) - mx));
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) out(r, 0) /= z;
  }
  auto aux = std::make_shared<Tape::Aux>();
  aux->offsets = std::move(offsets);
  return t.push(Op::kSegmentSoftmax, {x.id}, std::move(out), std::move(aux));
}

Var segment_attention(Var q, Var k, Var v, std::vector<std::size_t> offsets, double scale) {
  Tape& t = common_tape({q, k, v});
  const Tensor& qv = t.value(q);
  const Tensor& kv = t.value(k);
  const Tensor& vv = t.value(v);
  if (!qv.same_shape(kv)) shape_fail("segment_attention", qv, kv);
  if (qv.rows != vv.rows) shape_fail("segment_attention", qv, vv);
  check_offsets("segment_attention", offsets, qv.rows);
  Tensor out(vv.rows, vv.cols);
  auto aux = std::make_shared<Tape::Aux>();
  std::size_t blocks = 0;
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t n = offsets[s + 1] - offsets[s];
    blocks += n * n;
  }
  aux->saved = Tensor(1, blocks);
  double* attn = aux->saved.data.data();
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], n = offsets[s + 1] - offsets[s];
    for (std::size_t i = 0; i < n; ++i) {
      double* row = attn + i * n;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = dot(qv.row_span(b + i), kv.row_span(b + j)) * scale;
        mx = std::max(mx, row[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += (row[j] = std::exp(row[j] - mx));
      for (std::size_t j = 0; j < n; ++j) row[j] /= z;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < vv.cols; ++c) out(b + i, c) += row[j] * vv(b + j, c);
    }
    attn += n * n;
  }
  aux->offsets = std::move(offsets);
  aux->scalar = scale;
  return t.push(Op::kSegmentAttention, {q.id, k.id, v.id}, std::move(out), std::move(aux));
}

Var matmul(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.cols != bv.rows) shape_fail("matmul", av, bv);
  Tensor out(av.rows, bv.cols);
  kp::gemm({av.rows, bv.cols, av.cols}, av.data, false, bv.data, false, out.data, false);
  return t.push(Op::kMatmul, {a.id, b.id}, std::move(out));
}

Var add(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) shape_fail("add", av, bv);
  Tensor out = av;
  for (std::size_t j = 0; j < out.size(); ++j) out.data[j] += bv.data[j];
  return t.push(Op::kAdd, {a.id, b.id}, std::move(out));
}

Var mul(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) shape_fail("mul", av, bv);
  Tensor out = av;
  for (std::size_t j = 0; j < out.size(); ++j) out.data[j] *= bv.data[j];
  return t.push(Op::kMul, {a.id, b.id}, std::move(out));
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out = t.value(a);
  for (double& v : out.data) v *= c;
  auto aux = std::make_shared<Tape::Aux>();
  aux->scalar = c;
  return t.push(Op::kScale, {a.id}, std::move(out), std::move(aux));
}

Var scale_rows(Var x, Var s) {
  Tape& t = common_tape({x, s});
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(s);
  if (sv.cols != 1 || sv.rows != xv.rows) shape_fail("scale_rows", xv, sv);
  Tensor out = xv;
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < xv.cols; ++c) out(r, c) *= sv(r, 0);
  return t.push(Op::kScaleRows, {x.id, s.id}, std::move(out));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = t.value(parts[0]).rows;
  std::size_t cols = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    if (&tape_of(p) != &t) throw Error("operands recorded on different tapes");
    if (t.value(p).rows != rows) shape_fail("concat", t.value(parts[0]), t.value(p));
    cols += t.value(p).cols;
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t col = 0;
  for (Var p : parts) {
    const Tensor& pv = t.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols; ++c) out(r, col + c) = pv(r, c);
    col += pv.cols;
  }
  return t.push(Op::kConcatCols, std::move(ids), std::move(out));
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (begin > end || end > xv.cols) throw ShapeError("slice_cols out of range on " + xv.shape_str());
  Tensor out(xv.rows, end - begin);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = xv(r, c);
  auto aux = std::make_shared<Tape::Aux>();
  aux->lo = begin;
  aux->hi = end;
  return t.push(Op::kSliceCols, {x.id}, std::move(out), std::move(aux));
}

Var softmax(Var x, std::optional<Tensor> mask) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (mask && !mask->same_shape(xv)) shape_fail("softmax mask", xv, *mask);
  Tensor out(xv.rows, xv.cols);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < xv.cols; ++c) {
      if (!mask || (*mask)(r, c) != 0.0) mx = std::max(mx, xv(r, c));
    }
    if (mx == -INFINITY) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < xv.cols; ++c) {
      if (!mask || (*mask)(r, c) != 0.0) z += (out(r, c) = std::exp(xv(r, c) - mx));
    }
    for (std::size_t c = 0; c < xv.cols; ++c) out(r, c) /= z;
  }
  return t.push(Op::kSoftmax, {x.id}, std::move(out));
}

Var sigmoid(Var x) { return unary(x, Op::kSigmoid, sigmoid_scalar); }
Var relu(Var x) { return unary(x, Op::kRelu, [](double v) { return v > 0.0 ? v : 0.0; }); }
Var log_sigmoid(Var x) { return unary(x, Op::kLogSigmoid, log_sigmoid_scalar); }
Var negate(Var x) { return unary(x, Op::kNegate, [](double v) { return -v; }); }

Var log(Var x) {
  for (double v : tape_of(x).value(x).data) {
    if (!(v > 0.0)) throw Error("log of a non-positive value");
  }
  return unary(x, Op::kLog, [](double v) { return std::log(v); });
}

Var cosine_similarity(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) shape_fail("cosine_similarity", av, bv);
  Tensor out(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r) {
    const double na = std::sqrt(dot(av.row_span(r), av.row_span(r)));
    const double nb = std::sqrt(dot(bv.row_span(r), bv.row_span(r)));
    out(r, 0) = na == 0.0 || nb == 0.0 ? 0.0 : dot(av.row_span(r), bv.row_span(r)) / (na * nb);
  }
  return t.push(Op::kCosine, {a.id, b.id}, std::move(out));
}

Var row_dot(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) shape_fail("row_dot", av, bv);
  Tensor out(av.rows, 1);
  for (std::size_t r = 0; r < av.rows; ++r) out(r, 0) = dot(av.row_span(r), bv.row_span(r));
  return t.push(Op::kRowDot, {a.id, b.id}, std::move(out));
}

Var row_sum(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  Tensor out(xv.rows, 1);
  for (std::size_t r = 0; r < xv.rows; ++r)
    for (std::size_t c = 0; c < xv.cols; ++c) out(r, 0) += xv(r, c);
  return t.push(Op::kRowSum, {x.id}, std::move(out));
}

Var sum_squares(Var x) {
  Tape& t = tape_of(x);
  return t.push(Op::kSumSquares, {x.id}, Tensor::scalar(squared_norm(t.value(x))));
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : t.value(x).data) s += v;
  return t.push(Op::kSum, {x.id}, Tensor::scalar(s));
}

Var mean(Var x) {
  Tape& t = tape_of(x);
  const Tensor& xv = t.value(x);
  if (xv.size() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : xv.data) s += v;
  return t.push(Op::kMean, {x.id}, Tensor::scalar(s / static_cast<double>(xv.size())));
}

double finite_diff_check(const LossBuilder& f, const std::vector<Tensor>& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw Error("finite_diff_check: eps outside [1e-7, 1e-3]");

  auto evaluate = [&](const std::vector<Tensor>& p) {
    Tape t;
    std::vector<Var> leaves;
    for (const Tensor& x : p) leaves.push_back(t.leaf(x));
    const double v = t.value(f(t, leaves)).item();
    if (!std::isfinite(v)) throw Error("finite_diff_check: non-finite function value");
    return v;
  };

  Tape t;
  std::vector<Var> leaves;
  for (const Tensor& x : params) leaves.push_back(t.leaf(x));
  const Var loss = f(t, leaves);
  if (!std::isfinite(t.value(loss).item())) throw Error("finite_diff_check: non-finite function value");
  const Gradients grads = t.backward(loss);

  double worst = 0.0;
  std::vector<Tensor> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& analytic = grads.of(leaves[p]);
    for (std::size_t j = 0; j < params[p].size(); ++j) {
      const double x0 = params[p].data[j];
      auto at = [&](double h) {
        probe[p].data[j] = x0 + h;
        return evaluate(probe);
      };
      // Five-point central stencil, O(eps^4) truncation.
      const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
      probe[p].data[j] = x0;
      worst = std::max(worst, std::abs(analytic.data[j] - numeric) / std::max(1e-8, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace coldgraph::ad
