// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Camera, class, and time embeddings plus the per-stage combined projections
// that get broadcast-added onto feature maps.

#pragma once

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentview/camera.hpp"
#include "latentview/nn.hpp"
#include "latentview/tensor.hpp"

namespace latentview {

struct ConditioningConfig {
  int d_cam = 64;
  int d_cls = 64;
  int d_time = 256;
  int num_classes = 16;  // id 0 is the reserved "generic" class

  void validate() const {
    if (d_cam <= 0 || d_cls <= 0 || d_time <= 0 || num_classes <= 0)
      throw std::invalid_argument("conditioning: dims must be positive");
    if (d_time % 2 != 0) throw std::invalid_argument("conditioning: d_time must be even");
  }
};

enum class Stage { kDown, kMid, kUp };

// Concatenation width of the conditioning vector for each stage:
//   down: time + ref camera + ref class
//   mid:  time + ref camera + tar camera + tar class
//   up:   time + tar camera + tar class
inline int stage_cond_width(Stage stage, const ConditioningConfig& cfg) {
  switch (stage) {
    case Stage::kDown: return cfg.d_time + cfg.d_cam + cfg.d_cls;
    case Stage::kMid: return cfg.d_time + 2 * cfg.d_cam + cfg.d_cls;
    case Stage::kUp: return cfg.d_time + cfg.d_cam + cfg.d_cls;
  }
  throw std::logic_error("stage_cond_width: bad stage");
}

// Sinusoidal position encoding at log-spaced frequencies. Layout is all sine
// channels followed by all cosine channels, so t=0 gives 0s then 1s.
template <class S>
Tensor<S> time_embedding(int t, int d_time) {
  if (d_time <= 0 || d_time % 2 != 0) throw std::invalid_argument("time_embedding: bad dimension");
  const int half = d_time / 2;
  Tensor<S> out({d_time});
  for (int i = 0; i < half; ++i) {
    const double freq =
        half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(i) / (half - 1)) : 1.0;
    const double arg = static_cast<double>(t) * freq;
    out[static_cast<std::size_t>(i)] = static_cast<S>(std::sin(arg));
    out[static_cast<std::size_t>(half + i)] = static_cast<S>(std::cos(arg));
  }
  return out;
}

template <class S>
Tensor<S> concat_vecs(const std::vector<const Tensor<S>*>& parts) {
  int w = 0;
  for (const auto* p : parts) w += static_cast<int>(p->numel());
  Tensor<S> out({w});
  std::size_t off = 0;
  for (const auto* p : parts) {
    std::memcpy(out.data() + off, p->data(), p->numel() * sizeof(S));
    off += p->numel();
  }
  return out;
}

// Learnable camera and class embeddings shared by all stages.
template <class S>
struct ConditioningEmbedder {
  ConditioningConfig cfg;
  nn::Linear<S> camera;
  nn::Embedding<S> classes;

  ConditioningEmbedder() = default;
  ConditioningEmbedder(nn::ParameterStore<S>& ps, const ConditioningConfig& config)
      : cfg(config),
        camera(ps, "cond.camera", kCameraVectorSize, config.d_cam),
        classes(ps, "cond.class", config.num_classes, config.d_cls) {
    cfg.validate();
  }

  using CameraCache = typename nn::Linear<S>::Cache;

  Tensor<S> embed_camera(const nn::ParameterStore<S>& ps, const std::array<double, 16>& camvec,
                         CameraCache* cache = nullptr) const {
    Tensor<S> x({1, kCameraVectorSize});
    for (int i = 0; i < kCameraVectorSize; ++i) x[static_cast<std::size_t>(i)] = static_cast<S>(camvec[static_cast<std::size_t>(i)]);
    return camera.forward(ps, x, cache).reshaped({cfg.d_cam});
  }

  void embed_camera_backward(nn::ParameterStore<S>& ps, const Tensor<S>& dy,
                             const CameraCache& cache) const {
    camera.backward(ps, dy.reshaped({1, cfg.d_cam}), cache);
  }

  Tensor<S> embed_class(const nn::ParameterStore<S>& ps, int class_id) const {
    return classes.forward(ps, class_id);
  }

  void embed_class_backward(nn::ParameterStore<S>& ps, int class_id, const Tensor<S>& dy) const {
    classes.backward(ps, class_id, dy);
  }

  Tensor<S> embed_time(int t) const { return time_embedding<S>(t, cfg.d_time); }
};

// Per-block linear map from a stage conditioning vector to the block's channel
// count, broadcast-added over the spatial grid.
template <class S>
struct StageProjection {
  int width = 0, channels = 0;
  nn::Linear<S> proj;

  StageProjection() = default;
  StageProjection(nn::ParameterStore<S>& ps, const std::string& prefix, int cond_width,
                  int block_channels)
      : width(cond_width), channels(block_channels),
        proj(ps, prefix, cond_width, block_channels) {}

  struct Cache {
    typename nn::Linear<S>::Cache lin;
  };

  Tensor<S> inject(const nn::ParameterStore<S>& ps, const Tensor<S>& f, const Tensor<S>& cond,
                   Cache* cache = nullptr) const {
    if (static_cast<int>(cond.numel()) != width)
      throw std::invalid_argument("stage projection: conditioning width mismatch");
    if (f.dim(0) != channels) throw std::invalid_argument("stage projection: channel mismatch");
    Tensor<S> v = proj.forward(ps, cond.reshaped({1, width}), cache ? &cache->lin : nullptr);
    Tensor<S> y = f;
    const int hw = f.dim(1) * f.dim(2);
    for (int c = 0; c < channels; ++c) {
      const S add = v[static_cast<std::size_t>(c)];
      for (int p = 0; p < hw; ++p) y[static_cast<std::size_t>(c) * hw + p] += add;
    }
    return y;
  }

  // d f is the incoming dy unchanged (identity path); returns d cond.
  Tensor<S> backward_cond(nn::ParameterStore<S>& ps, const Tensor<S>& dy,
                          const Cache& cache) const {
    Tensor<S> dv({1, channels});
    const int hw = dy.dim(1) * dy.dim(2);
    for (int c = 0; c < channels; ++c) {
      S acc = 0;
      for (int p = 0; p < hw; ++p) acc += dy[static_cast<std::size_t>(c) * hw + p];
      dv[static_cast<std::size_t>(c)] = acc;
    }
    return proj.backward(ps, dv, cache.lin).reshaped({width});
  }
};

}  // namespace latentview
