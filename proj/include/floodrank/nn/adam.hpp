#pragma once

#include <cmath>
#include <vector>

#include "floodrank/nn/tensor.hpp"

namespace floodrank::nn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moment estimation over a fixed list of parameters.
template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Parameter<Scalar>*> params, AdamOptions opts = {})
      : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        p.value[i] = static_cast<Scalar>(p.value[i] - lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
    }
  }

  long steps() const { return t_; }
  const std::vector<Parameter<Scalar>*>& parameters() const { return params_; }

 private:
  std::vector<Parameter<Scalar>*> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace floodrank::nn
