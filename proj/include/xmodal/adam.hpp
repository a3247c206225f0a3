#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "xmodal/tensor.hpp"
#include "xmodal/util.hpp"

namespace xmodal {

struct AdamConfig {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

// Standard Adam with bias correction. Moment buffers are indexed by the
// caller's fixed parameter order.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  int64_t step_count() const { return step_; }

  void init(const std::vector<Tensor*>& params) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->numel(), 0.0f);
      v_[i].assign(params[i]->numel(), 0.0f);
    }
  }

  // One update over all parameters; grads[i] must match params[i] in length.
  // lr_scale implements warmup schedules without mutating the config.
  void step(const std::vector<Tensor*>& params, const std::vector<std::vector<float>>& grads,
            float lr_scale = 1.0f) {
    require(params.size() == m_.size() && grads.size() == params.size(),
            "adam: parameter/gradient count mismatch");
    ++step_;
    double b1t = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
    double b2t = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));
    double lr = static_cast<double>(cfg_.lr) * lr_scale;
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& p = *params[i];
      require(grads[i].size() == p.numel(), "adam: gradient shape mismatch");
      float* m = m_[i].data();
      float* v = v_[i].data();
      float* w = p.data.data();
      const float* g = grads[i].data();
      for (size_t j = 0; j < p.numel(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
        double mhat = m[j] / b1t;
        double vhat = v[j] / b2t;
        w[j] = static_cast<float>(w[j] - lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      }
    }
  }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace xmodal
