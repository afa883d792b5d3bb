// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Diffusion noise schedule: per-step beta/alpha tables and the cumulative
// alpha-bar products that drive noising, inversion and sampling.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentview {

// Tables are stored for timesteps 1..num_train_steps (index i holds step i+1).
// Queries accept t in [0, num_train_steps]; t = 0 is the clean point where the
// cumulative product is exactly 1.
class NoiseSchedule {
 public:
  // The inversion/sampling iterations read the cumulative table by default.
  // use_per_step_alpha preserves a literal per-step reading for comparison
  // runs; it breaks the deterministic round-trip identity and exists only as
  // an experiment switch.
  bool use_per_step_alpha = false;

  static NoiseSchedule linear(int num_train_steps = 1000, double beta_start = 1e-4,
                              double beta_end = 2e-2) {
    if (num_train_steps < 1) throw std::invalid_argument("schedule: num_train_steps must be >= 1");
    std::vector<double> beta(static_cast<std::size_t>(num_train_steps));
    for (int i = 0; i < num_train_steps; ++i) {
      double frac = num_train_steps == 1 ? 0.0 : static_cast<double>(i) / (num_train_steps - 1);
      beta[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    return from_betas(std::move(beta));
  }

  static NoiseSchedule from_betas(std::vector<double> beta) {
    NoiseSchedule s;
    s.beta_ = std::move(beta);
    if (s.beta_.empty()) throw std::invalid_argument("schedule: empty beta table");
    s.alpha_.resize(s.beta_.size());
    s.alpha_bar_.resize(s.beta_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < s.beta_.size(); ++i) {
      double b = s.beta_[i];
      if (!(b > 0.0 && b < 1.0))
        throw std::invalid_argument("schedule: beta[" + std::to_string(i) + "] outside (0,1)");
      s.alpha_[i] = 1.0 - b;
      prod *= s.alpha_[i];
      s.alpha_bar_[i] = prod;
    }
    s.validate();
    return s;
  }

  int num_train_steps() const { return static_cast<int>(beta_.size()); }

  // Per-step values for timestep t in [1, num_train_steps].
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }

  // Cumulative product; alpha_bar(0) == 1 exactly.
  double alpha_bar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bar_[index(t)];
  }

  // What Eq.-style iterations should read at timestep t. Cumulative by
  // default; the per-step table under the literal-reading switch.
  double effective_alpha(int t) const {
    if (t == 0) return 1.0;
    return use_per_step_alpha ? alpha(t) : alpha_bar(t);
  }

  const std::vector<double>& beta_table() const { return beta_; }
  const std::vector<double>& alpha_bar_table() const { return alpha_bar_; }

  void validate() const {
    double prev = 2.0;  // alpha_bar values are < 1 < 2, so the first check passes
    for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
      double ab = alpha_bar_[i];
      if (!(ab > 0.0 && ab <= 1.0)) throw std::invalid_argument("schedule: alpha_bar outside (0,1]");
      if (!(ab < prev)) throw std::invalid_argument("schedule: alpha_bar not strictly decreasing");
      prev = ab;
    }
    // The cumulative table starts at its own first factor.
    if (std::abs(alpha_bar_[0] - alpha_[0]) > 1e-6)
      throw std::invalid_argument("schedule: alpha_bar[1] must equal alpha[1]");
  }

 private:
  std::size_t index(int t) const {
    if (t < 1 || t > num_train_steps())
      throw std::invalid_argument("schedule: timestep " + std::to_string(t) + " out of range [1," +
                                  std::to_string(num_train_steps()) + "]");
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

}  // namespace latentview
