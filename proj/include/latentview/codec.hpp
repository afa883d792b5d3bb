// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Pixel <-> latent codecs. The desk-scale default is a fixed orthonormal 8x8
// patch transform to 4 channels: no training, deterministic reconstruction
// error, exact inverse on its own range.

#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "latentview/engine.hpp"
#include "latentview/image.hpp"
#include "latentview/tensor.hpp"

namespace latentview {

template <class S>
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual LatentGrid<S> encode(const Image& img) const = 0;
  virtual Image decode(const LatentGrid<S>& z) const = 0;
  virtual std::array<int, 3> latent_shape() const = 0;
  virtual int image_size() const = 0;
  // Stable identity string; part of inversion cache keys.
  virtual std::string id() const = 0;
};

// Projects each 8x8 RGB patch (192 values, centered to [-1,1]) onto four
// orthonormal basis vectors: mean color along (1,1,1), (1,0,-1), (1,-2,1),
// plus a horizontal luminance ramp. A 1/sqrt(192) scale maps a constant patch
// of value c to channel 0 == 2c-1, keeping latents O(1).
template <class S>
class OrthoPatchCodec : public LatentCodec<S> {
 public:
  static constexpr int kPatch = 8;
  static constexpr int kChannels = 4;

  explicit OrthoPatchCodec(int image_size) : size_(image_size) {
    if (image_size < kPatch || image_size % kPatch != 0)
      throw std::invalid_argument("orthopatch: image size must be a positive multiple of 8");
    build_basis();
  }

  LatentGrid<S> encode(const Image& img) const override {
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != size_ || img.dim(2) != size_)
      throw std::invalid_argument("orthopatch: image shape mismatch");
    const int grid = size_ / kPatch;
    LatentGrid<S> z({kChannels, grid, grid});
    const double scl = 1.0 / std::sqrt(192.0);
    for (int pi = 0; pi < grid; ++pi)
      for (int pj = 0; pj < grid; ++pj)
        for (int c = 0; c < kChannels; ++c) {
          double acc = 0;
          for (int i = 0; i < kPatch; ++i)
            for (int j = 0; j < kPatch; ++j)
              for (int ch = 0; ch < 3; ++ch) {
                const double u = 2.0 * img.at(ch, pi * kPatch + i, pj * kPatch + j) - 1.0;
                acc += basis_[static_cast<std::size_t>(c)][idx(i, j, ch)] * u;
              }
          z.at(c, pi, pj) = static_cast<S>(acc * scl);
        }
    return z;
  }

  Image decode(const LatentGrid<S>& z) const override {
    const int grid = size_ / kPatch;
    if (z.rank() != 3 || z.dim(0) != kChannels || z.dim(1) != grid || z.dim(2) != grid)
      throw std::invalid_argument("orthopatch: latent shape mismatch");
    Image img({3, size_, size_});
    const double scl = std::sqrt(192.0);
    for (int pi = 0; pi < grid; ++pi)
      for (int pj = 0; pj < grid; ++pj)
        for (int i = 0; i < kPatch; ++i)
          for (int j = 0; j < kPatch; ++j)
            for (int ch = 0; ch < 3; ++ch) {
              double u = 0;
              for (int c = 0; c < kChannels; ++c)
                u += static_cast<double>(z.at(c, pi, pj)) * basis_[static_cast<std::size_t>(c)][idx(i, j, ch)];
              double x = (u * scl + 1.0) / 2.0;
              if (x < 0) x = 0;
              if (x > 1) x = 1;
              img.at(ch, pi * kPatch + i, pj * kPatch + j) = static_cast<float>(x);
            }
    return img;
  }

  std::array<int, 3> latent_shape() const override {
    return {kChannels, size_ / kPatch, size_ / kPatch};
  }
  int image_size() const override { return size_; }
  std::string id() const override { return "orthopatch8"; }

  // Exposed for orthonormality tests.
  const std::array<std::array<double, 192>, 4>& basis() const { return basis_; }

 private:
  static std::size_t idx(int i, int j, int ch) {
    return static_cast<std::size_t>((i * kPatch + j) * 3 + ch);
  }

  void build_basis() {
    const double s0 = 1.0 / 8.0;  // uniform spatial, unit norm over 64 cells
    double ramp_norm = 0;
    for (int j = 0; j < kPatch; ++j) ramp_norm += (j - 3.5) * (j - 3.5);
    ramp_norm = std::sqrt(ramp_norm * kPatch);
    const std::array<std::array<double, 3>, 3> color = {{
        {1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)},
        {1.0 / std::sqrt(2.0), 0.0, -1.0 / std::sqrt(2.0)},
        {1.0 / std::sqrt(6.0), -2.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0)},
    }};
    for (auto& row : basis_) row.fill(0.0);
    for (int i = 0; i < kPatch; ++i)
      for (int j = 0; j < kPatch; ++j)
        for (int ch = 0; ch < 3; ++ch) {
          for (int c = 0; c < 3; ++c) basis_[static_cast<std::size_t>(c)][idx(i, j, ch)] = s0 * color[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)];
          basis_[3][idx(i, j, ch)] = ((j - 3.5) / ramp_norm) * color[0][static_cast<std::size_t>(ch)];
        }
  }

  int size_;
  std::array<std::array<double, 192>, 4> basis_;
};

// Pads RGB into the first three latent channels (centered to [-1,1]); channel
// 3 is zero. Pixel-resolution latents, for smoke tests only.
template <class S>
class IdentityCodec : public LatentCodec<S> {
 public:
  explicit IdentityCodec(int image_size) : size_(image_size) {
    if (image_size < 1) throw std::invalid_argument("identity codec: bad size");
  }

  LatentGrid<S> encode(const Image& img) const override {
    if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) != size_ || img.dim(2) != size_)
      throw std::invalid_argument("identity codec: image shape mismatch");
    LatentGrid<S> z({4, size_, size_});
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < size_; ++i)
        for (int j = 0; j < size_; ++j) z.at(c, i, j) = static_cast<S>(2.0 * img.at(c, i, j) - 1.0);
    return z;
  }

  Image decode(const LatentGrid<S>& z) const override {
    if (z.rank() != 3 || z.dim(0) != 4 || z.dim(1) != size_ || z.dim(2) != size_)
      throw std::invalid_argument("identity codec: latent shape mismatch");
    Image img({3, size_, size_});
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < size_; ++i)
        for (int j = 0; j < size_; ++j) {
          double x = (static_cast<double>(z.at(c, i, j)) + 1.0) / 2.0;
          if (x < 0) x = 0;
          if (x > 1) x = 1;
          img.at(c, i, j) = static_cast<float>(x);
        }
    return img;
  }

  std::array<int, 3> latent_shape() const override { return {4, size_, size_}; }
  int image_size() const override { return size_; }
  std::string id() const override { return "identity"; }

 private:
  int size_;
};

}  // namespace latentview
