// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Noise re-injection strategies combining the translated mean latent with
// reference-derived noise, plus the candidate selector. The coefficient sign
// is configurable: minus keeps the inversion algebra consistent, plus is the
// literal published coefficient; both are available for comparison.

#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latentview/engine.hpp"
#include "latentview/image.hpp"
#include "latentview/metrics.hpp"
#include "latentview/schedule.hpp"

namespace latentview {

enum class FusionStrategy { kA, kB, kBoth };
enum class CoefficientSign { kPlus, kMinus };

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::kBoth;
  CoefficientSign sign = CoefficientSign::kMinus;
  int t_star = 600;
  std::string selector = "psnr";
};

inline double fusion_coefficient(const NoiseSchedule& schedule, const FusionConfig& cfg) {
  const double a = schedule.effective_alpha(cfg.t_star);
  return cfg.sign == CoefficientSign::kMinus ? std::sqrt(1.0 - a) : std::sqrt(1.0 + a);
}

// Strategy A: re-noise the translated mean with the reference's stored noise
// term, ask the prior for a fresh noise estimate there, and add it scaled.
template <class S>
LatentGrid<S> fuse_strategy_a(const LatentGrid<S>& mu_hat, const LatentGrid<S>& sigma_ref,
                              const DiffusionPrior<S>& prior, const NoiseSchedule& schedule,
                              const FusionConfig& cfg) {
  check_same_shape(mu_hat, sigma_ref, "fuse_strategy_a");
  LatentGrid<S> z_noisy = add(mu_hat, sigma_ref);
  LatentGrid<S> eps = prior.predict_noise(z_noisy, cfg.t_star);
  if (!eps.same_shape(mu_hat)) throw std::invalid_argument("fuse_strategy_a: prior shape mismatch");
  if (!eps.all_finite()) throw NumericalError("fuse_strategy_a: prior produced non-finite noise");
  LatentGrid<S> out = mu_hat;
  axpy(static_cast<S>(fusion_coefficient(schedule, cfg)), eps, out);
  return out;
}

// Strategy B: add the reference's full inverted latent directly, scaled.
template <class S>
LatentGrid<S> fuse_strategy_b(const LatentGrid<S>& mu_hat, const LatentGrid<S>& z_ref_inv,
                              const NoiseSchedule& schedule, const FusionConfig& cfg) {
  check_same_shape(mu_hat, z_ref_inv, "fuse_strategy_b");
  LatentGrid<S> out = mu_hat;
  axpy(static_cast<S>(fusion_coefficient(schedule, cfg)), z_ref_inv, out);
  return out;
}

// ---------------------------------------------------------------------------
// Candidate selection. Selectors are distances (lower is better) looked up by
// name; perceptual metrics needing external weights can be registered as
// plugins, and an unavailable selector falls back to PSNR with a warning.

using MetricFn = std::function<double(const Image&, const Image&)>;

class MetricRegistry {
 public:
  static MetricRegistry& instance() {
    static MetricRegistry reg;
    return reg;
  }

  void add(const std::string& name, MetricFn fn) { metrics_[name] = std::move(fn); }

  std::optional<MetricFn> find(const std::string& name) const {
    auto it = metrics_.find(name);
    if (it == metrics_.end()) return std::nullopt;
    return it->second;
  }

 private:
  MetricRegistry() {
    metrics_["mse"] = [](const Image& a, const Image& b) { return mean_squared_error(a, b); };
    metrics_["psnr"] = [](const Image& a, const Image& b) { return -psnr(a, b); };
    metrics_["ssim"] = [](const Image& a, const Image& b) { return 1.0 - ssim(a, b); };
  }

  std::map<std::string, MetricFn> metrics_;
};

struct Candidate {
  Image image;
  std::string tag;
};

// Returns the candidate minimizing the selector distance to the reference;
// ties keep the earlier candidate (callers order A before B).
inline const Candidate& select_best(const std::vector<Candidate>& candidates,
                                    const Image& reference, const std::string& selector,
                                    std::ostream* warn = &std::cerr) {
  if (candidates.empty()) throw std::invalid_argument("select_best: no candidates");
  MetricFn metric;
  if (auto found = MetricRegistry::instance().find(selector)) {
    metric = *found;
  } else {
    if (warn)
      *warn << "[latentview] selector '" << selector << "' unavailable; falling back to psnr\n";
    metric = *MetricRegistry::instance().find("psnr");
  }
  std::size_t best = 0;
  double best_d = metric(candidates[0].image, reference);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double d = metric(candidates[i].image, reference);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return candidates[best];
}

}  // namespace latentview
