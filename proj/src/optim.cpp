#include "coldgraph/optim.hpp"

#include <cmath>

#include "coldgraph/error.hpp"

namespace coldgraph {

Adam::Adam(AdamConfig cfg, std::vector<Tensor*> params) : cfg_(cfg), params_(std::move(params)) {
  for (const Tensor* p : params_) {
    m_.emplace_back(p->rows, p->cols);
    v_.emplace_back(p->rows, p->cols);
  }
}

void Adam::step(const std::vector<const Tensor*>& grads) {
  if (grads.size() != params_.size()) throw ShapeError("adam: gradient count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    const Tensor& g = *grads[i];
    if (!p.same_shape(g)) throw ShapeError("adam: gradient shape " + g.shape_str() + " vs " + p.shape_str());
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g.data[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g.data[j] * g.data[j];
      p.data[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

}  // namespace coldgraph
