// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Adam with global-norm gradient clipping, and the triangular cyclic
// learning-rate schedule.

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "latentview/nn.hpp"
#include "latentview/tensor.hpp"

namespace latentview {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

template <class S>
class Adam {
 public:
  Adam() = default;
  Adam(const nn::ParameterStore<S>& ps, AdamConfig cfg = {}) : cfg_(cfg) {
    m_.reserve(static_cast<std::size_t>(ps.size()));
    v_.reserve(static_cast<std::size_t>(ps.size()));
    for (int h = 0; h < ps.size(); ++h) {
      m_.emplace_back(ps.shape(h));
      v_.emplace_back(ps.shape(h));
    }
  }

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return step_; }

  // Clips grads in place (global norm), then applies one Adam update.
  // Returns the pre-clip gradient norm.
  double step(nn::ParameterStore<S>& ps, double lr) {
    if (static_cast<int>(m_.size()) != ps.size())
      throw std::invalid_argument("adam: optimizer/store size mismatch");
    double gnorm = std::sqrt(ps.grad_squared_norm());
    if (cfg_.clip_norm > 0 && gnorm > cfg_.clip_norm)
      ps.scale_grads(static_cast<S>(cfg_.clip_norm / gnorm));
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (int h = 0; h < ps.size(); ++h) {
      Tensor<S>& p = ps.value(h);
      Tensor<S>& g = ps.grad(h);
      Tensor<S>& m = m_[static_cast<std::size_t>(h)];
      Tensor<S>& v = v_[static_cast<std::size_t>(h)];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        p[i] -= static_cast<S>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
      }
    }
    return gnorm;
  }

  // State access for checkpointing.
  std::vector<Tensor<S>>& first_moments() { return m_; }
  std::vector<Tensor<S>>& second_moments() { return v_; }
  const std::vector<Tensor<S>>& first_moments() const { return m_; }
  const std::vector<Tensor<S>>& second_moments() const { return v_; }
  void set_step_count(long s) { step_ = s; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<Tensor<S>> m_, v_;
};

// Triangular cyclic schedule: starts at the peak, dips to floor = peak/10 at
// mid-cycle, returns to the peak; cycle length = max(1, epochs/10).
inline double cyclic_lr(double peak_lr, int epoch, int total_epochs) {
  if (peak_lr <= 0) throw std::invalid_argument("cyclic_lr: peak must be positive");
  if (epoch < 0 || total_epochs < 1) throw std::invalid_argument("cyclic_lr: bad epoch");
  const int period = total_epochs / 10 > 0 ? total_epochs / 10 : 1;
  const double frac = static_cast<double>(epoch % period) / period;
  const double floor_lr = peak_lr / 10.0;
  return floor_lr + (peak_lr - floor_lr) * std::abs(1.0 - 2.0 * frac);
}

}  // namespace latentview
