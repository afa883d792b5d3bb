// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Diffusion engine: forward noising, DDIM inversion with an explicit
// mean/variance split, and deterministic DDIM sampling over a pluggable
// noise-prediction prior.

#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latentview/common.hpp"
#include "latentview/schedule.hpp"
#include "latentview/tensor.hpp"

namespace latentview {

template <class S>
using LatentGrid = Tensor<S>;

// Epsilon-prediction interface. Implementations must be deterministic for a
// fixed (z, t) and safe to call concurrently.
template <class S>
class DiffusionPrior {
 public:
  virtual ~DiffusionPrior() = default;
  virtual LatentGrid<S> predict_noise(const LatentGrid<S>& z, int t) const = 0;
  virtual std::array<int, 3> latent_shape() const = 0;
  virtual int num_train_steps() const = 0;
  // Stable identity string; feeds inversion-cache keys.
  virtual std::string id() const = 0;
};

template <class S>
class ZeroPrior : public DiffusionPrior<S> {
 public:
  ZeroPrior(std::array<int, 3> shape, int steps) : shape_(shape), steps_(steps) {}
  LatentGrid<S> predict_noise(const LatentGrid<S>& z, int) const override {
    return LatentGrid<S>(z.shape());
  }
  std::array<int, 3> latent_shape() const override { return shape_; }
  int num_train_steps() const override { return steps_; }
  std::string id() const override { return "zero"; }

 private:
  std::array<int, 3> shape_;
  int steps_;
};

// A latent stopped at t_star, carrying the signal (mu) and noise (sigma)
// accumulators of the inversion iteration; z == mu + sigma.
template <class S>
struct InvertedLatent {
  LatentGrid<S> z;
  LatentGrid<S> mu;
  LatentGrid<S> sigma;
  int t_star = 0;
  int steps = 0;
  // Populated only when trajectory recording is requested.
  std::vector<std::pair<LatentGrid<S>, LatentGrid<S>>> trajectory;
};

// Uniform integer grid over [0, t_star] with `steps` transitions; endpoints
// included, so the result has steps+1 entries.
inline std::vector<int> ddim_step_grid(int t_star, int steps) {
  if (steps < 1) throw std::invalid_argument("ddim: steps must be >= 1");
  if (t_star < 1) throw std::invalid_argument("ddim: t_star must be >= 1");
  std::vector<int> grid(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    double pos = static_cast<double>(k) * t_star / steps;
    grid[static_cast<std::size_t>(k)] = static_cast<int>(std::llround(pos));
  }
  for (int k = 0; k < steps; ++k)
    if (grid[static_cast<std::size_t>(k)] >= grid[static_cast<std::size_t>(k) + 1])
      throw std::invalid_argument("ddim: step grid not strictly increasing (steps too large for t_star)");
  return grid;
}

// x_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps
template <class S>
LatentGrid<S> forward_diffuse(const LatentGrid<S>& z0, int t, const LatentGrid<S>& eps,
                              const NoiseSchedule& schedule) {
  if (!z0.same_shape(eps)) throw std::invalid_argument("forward_diffuse: z0/eps shape mismatch");
  if (t < 0 || t >= schedule.num_train_steps())
    throw std::invalid_argument("forward_diffuse: t out of range");
  const double ab = schedule.alpha_bar(t);
  const S sa = static_cast<S>(std::sqrt(ab));
  const S sn = static_cast<S>(std::sqrt(1.0 - ab));
  LatentGrid<S> out = z0;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sa * z0[i] + sn * eps[i];
  return out;
}

namespace detail {

template <class S>
void require_finite(const LatentGrid<S>& x, const char* stage, int step_index) {
  if (!x.all_finite())
    throw NumericalError(std::string(stage) + ": non-finite values at step " +
                         std::to_string(step_index));
}

}  // namespace detail

// Deterministic inversion from t=0 up to t_star. Each transition t_lo -> t_hi
// evaluates eps = prior(x_lo, t_lo) and splits the update into
//   mu    = (x_lo - sqrt(1 - a_lo) * eps) * sqrt(a_hi / a_lo)
//   sigma = sqrt(1 - a_hi) * eps
// with a read from the schedule's effective-alpha table.
template <class S>
InvertedLatent<S> ddim_invert(const LatentGrid<S>& z0, const DiffusionPrior<S>& prior,
                              const NoiseSchedule& schedule, int t_star, int steps,
                              bool record_trajectory = false) {
  if (t_star >= schedule.num_train_steps())
    throw std::invalid_argument("ddim_invert: t_star must be < num_train_steps");
  const std::vector<int> grid = ddim_step_grid(t_star, steps);

  InvertedLatent<S> out;
  out.t_star = t_star;
  out.steps = steps;
  out.z = z0;
  out.mu = z0;
  out.sigma = LatentGrid<S>(z0.shape());

  for (int k = 0; k < steps; ++k) {
    const int t_lo = grid[static_cast<std::size_t>(k)];
    const int t_hi = grid[static_cast<std::size_t>(k) + 1];
    const LatentGrid<S> eps = prior.predict_noise(out.z, t_lo);
    if (!eps.same_shape(out.z)) throw std::invalid_argument("ddim_invert: prior output shape mismatch");
    detail::require_finite(eps, "ddim_invert: prior output", k);

    const double a_lo = schedule.effective_alpha(t_lo);
    const double a_hi = schedule.effective_alpha(t_hi);
    const S ratio = static_cast<S>(std::sqrt(a_hi / a_lo));
    const S s_lo = static_cast<S>(std::sqrt(1.0 - a_lo));
    const S s_hi = static_cast<S>(std::sqrt(1.0 - a_hi));

    LatentGrid<S> mu(out.z.shape());
    LatentGrid<S> sigma(out.z.shape());
    for (std::size_t i = 0; i < mu.numel(); ++i) {
      mu[i] = (out.z[i] - s_lo * eps[i]) * ratio;
      sigma[i] = s_hi * eps[i];
      out.z[i] = mu[i] + sigma[i];
    }
    detail::require_finite(out.z, "ddim_invert", k);
    out.mu = std::move(mu);
    out.sigma = std::move(sigma);
    if (record_trajectory) out.trajectory.emplace_back(out.mu, out.sigma);
  }
  return out;
}

// Deterministic (eta = 0) DDIM reverse iteration from t_start down to 0.
template <class S>
LatentGrid<S> ddim_sample(const LatentGrid<S>& z_t, const DiffusionPrior<S>& prior,
                          const NoiseSchedule& schedule, int t_start, int steps) {
  if (t_start > schedule.num_train_steps())
    throw std::invalid_argument("ddim_sample: t_start must be <= num_train_steps");
  const std::vector<int> grid = ddim_step_grid(t_start, steps);

  LatentGrid<S> x = z_t;
  for (int k = steps; k > 0; --k) {
    const int t_hi = grid[static_cast<std::size_t>(k)];
    const int t_lo = grid[static_cast<std::size_t>(k) - 1];
    const LatentGrid<S> eps = prior.predict_noise(x, t_hi);
    if (!eps.same_shape(x)) throw std::invalid_argument("ddim_sample: prior output shape mismatch");
    detail::require_finite(eps, "ddim_sample: prior output", k);

    const double a_hi = schedule.effective_alpha(t_hi);
    const double a_lo = schedule.effective_alpha(t_lo);
    const S inv_sa = static_cast<S>(1.0 / std::sqrt(a_hi));
    const S s_hi = static_cast<S>(std::sqrt(1.0 - a_hi));
    const S sa_lo = static_cast<S>(std::sqrt(a_lo));
    const S s_lo = static_cast<S>(std::sqrt(1.0 - a_lo));
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const S x0_pred = (x[i] - s_hi * eps[i]) * inv_sa;
      x[i] = sa_lo * x0_pred + s_lo * eps[i];
    }
    detail::require_finite(x, "ddim_sample", k);
  }
  return x;
}

// ---------------------------------------------------------------------------
// InvertedLatent binary format: magic "INVL", version, t_star, steps, C/H/W,
// then mu and sigma as little-endian float32 row-major. z is rebuilt on load.

inline constexpr std::uint32_t kInvertedLatentVersion = 1;

template <class S>
std::string serialize_inverted_latent(const InvertedLatent<S>& inv) {
  if (inv.mu.rank() != 3) throw std::invalid_argument("serialize: latent must be CHW");
  std::string out;
  out += "INVL";
  put_u32(out, kInvertedLatentVersion);
  put_u32(out, static_cast<std::uint32_t>(inv.t_star));
  put_u32(out, static_cast<std::uint32_t>(inv.steps));
  for (int d = 0; d < 3; ++d) put_u32(out, static_cast<std::uint32_t>(inv.mu.dim(d)));
  for (std::size_t i = 0; i < inv.mu.numel(); ++i) put_f32(out, static_cast<float>(inv.mu[i]));
  for (std::size_t i = 0; i < inv.sigma.numel(); ++i) put_f32(out, static_cast<float>(inv.sigma[i]));
  return out;
}

template <class S>
InvertedLatent<S> deserialize_inverted_latent(const std::string& bytes) {
  constexpr std::size_t header = 4 + 4 * 6;
  if (bytes.size() < header || bytes.compare(0, 4, "INVL") != 0)
    throw DataError("inverted latent: bad magic");
  const char* p = bytes.data() + 4;
  const std::uint32_t version = get_u32(p);
  if (version != kInvertedLatentVersion)
    throw DataError("inverted latent: unsupported version " + std::to_string(version));
  InvertedLatent<S> inv;
  inv.t_star = static_cast<int>(get_u32(p + 4));
  inv.steps = static_cast<int>(get_u32(p + 8));
  const int c = static_cast<int>(get_u32(p + 12));
  const int h = static_cast<int>(get_u32(p + 16));
  const int w = static_cast<int>(get_u32(p + 20));
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  if (bytes.size() != header + 8 * n) throw DataError("inverted latent: truncated payload");
  inv.mu = LatentGrid<S>({c, h, w});
  inv.sigma = LatentGrid<S>({c, h, w});
  const char* body = bytes.data() + header;
  for (std::size_t i = 0; i < n; ++i) inv.mu[i] = static_cast<S>(get_f32(body + 4 * i));
  for (std::size_t i = 0; i < n; ++i) inv.sigma[i] = static_cast<S>(get_f32(body + 4 * (n + i)));
  inv.z = add(inv.mu, inv.sigma);
  return inv;
}

}  // namespace latentview
