// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Image quality metrics over [0,1] CHW tensors.

#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "latentview/tensor.hpp"

namespace latentview {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// 10*log10(1 / MSE) against unit dynamic range. Identical inputs report the
// +infinity sentinel.
template <class S>
double psnr(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "psnr");
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// Rec.601 luma; pass-through for single-channel input.
template <class S>
Tensor<S> to_luma(const Tensor<S>& img) {
  if (img.rank() != 3) throw std::invalid_argument("to_luma: expected CHW");
  if (img.dim(0) == 1) return img;
  if (img.dim(0) != 3) throw std::invalid_argument("to_luma: expected 1 or 3 channels");
  Tensor<S> y({1, img.dim(1), img.dim(2)});
  const std::size_t hw = static_cast<std::size_t>(img.dim(1)) * img.dim(2);
  for (std::size_t i = 0; i < hw; ++i)
    y[i] = static_cast<S>(0.299) * img[i] + static_cast<S>(0.587) * img[hw + i] +
           static_cast<S>(0.114) * img[2 * hw + i];
  return y;
}

// Windowed SSIM: 11x11 Gaussian (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2 for unit
// dynamic range, mean over valid (fully inside) window positions.
template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a, b, "ssim");
  Tensor<S> x = to_luma(a), y = to_luma(b);
  const int h = x.dim(1), w = x.dim(2);
  if (h < kSsimWindow || w < kSsimWindow)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");

  static const std::vector<double> kernel = [] {
    std::vector<double> k(kSsimWindow * kSsimWindow);
    double sum = 0;
    const int r = kSsimWindow / 2;
    for (int i = 0; i < kSsimWindow; ++i)
      for (int j = 0; j < kSsimWindow; ++j) {
        const double d2 = (i - r) * (i - r) + (j - r) * (j - r);
        k[static_cast<std::size_t>(i) * kSsimWindow + j] = std::exp(-d2 / (2 * kSsimSigma * kSsimSigma));
        sum += k[static_cast<std::size_t>(i) * kSsimWindow + j];
      }
    for (double& v : k) v /= sum;
    return k;
  }();

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double acc = 0;
  int count = 0;
  for (int i = 0; i + kSsimWindow <= h; ++i) {
    for (int j = 0; j + kSsimWindow <= w; ++j) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int ki = 0; ki < kSsimWindow; ++ki)
        for (int kj = 0; kj < kSsimWindow; ++kj) {
          const double kw = kernel[static_cast<std::size_t>(ki) * kSsimWindow + kj];
          const double px = static_cast<double>(x.at(0, i + ki, j + kj));
          const double py = static_cast<double>(y.at(0, i + ki, j + kj));
          mx += kw * px;
          my += kw * py;
          mxx += kw * px * px;
          myy += kw * py * py;
          mxy += kw * px * py;
        }
      const double vx = mxx - mx * mx;
      const double vy = myy - my * my;
      const double cxy = mxy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / count;
}

}  // namespace latentview
