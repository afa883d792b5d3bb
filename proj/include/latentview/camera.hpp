// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Pinhole cameras (world-to-camera extrinsics, +z forward, pixel-center
// sampling), their 16-value vectorization, and per-cell ray maps.

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentview/tensor.hpp"

namespace latentview {

struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // world -> camera
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int height = 1, width = 1;

  Eigen::Vector3d center() const { return -R.transpose() * t; }

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: focal lengths must be positive");
    if (height < 1 || width < 1) throw std::invalid_argument("camera: image size must be positive");
    const Eigen::Matrix3d gram = R.transpose() * R;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-5)
      throw std::invalid_argument("camera: R is not orthonormal");
    if (std::abs(R.determinant() - 1.0) > 1e-5)
      throw std::invalid_argument("camera: det(R) != +1");
  }
};

// Layout is part of the checkpoint contract; bump this if it ever changes.
inline constexpr int kCameraVectorLayoutVersion = 1;
inline constexpr int kCameraVectorSize = 16;

// [fx, fy, cx, cy] ++ row-major R (9) ++ t (3).
inline std::array<double, kCameraVectorSize> vectorize_camera(const Camera& cam) {
  cam.validate();
  std::array<double, kCameraVectorSize> v{};
  v[0] = cam.fx;
  v[1] = cam.fy;
  v[2] = cam.cx;
  v[3] = cam.cy;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) v[4 + 3 * r + c] = cam.R(r, c);
  for (int i = 0; i < 3; ++i) v[13 + i] = cam.t(i);
  return v;
}

inline Camera devectorize_camera(const std::array<double, kCameraVectorSize>& v, int height = 1,
                                 int width = 1) {
  Camera cam;
  cam.fx = v[0];
  cam.fy = v[1];
  cam.cx = v[2];
  cam.cy = v[3];
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.R(r, c) = v[4 + 3 * r + c];
  for (int i = 0; i < 3; ++i) cam.t(i) = v[13 + i];
  cam.height = height;
  cam.width = width;
  return cam;
}

struct RayMap {
  int grid_h = 0, grid_w = 0;
  std::vector<Eigen::Vector3d> origins;     // row-major h*w; all equal the camera center
  std::vector<Eigen::Vector3d> directions;  // unit vectors in world coordinates

  const Eigen::Vector3d& origin(int i, int j) const { return origins[static_cast<std::size_t>(i) * grid_w + j]; }
  const Eigen::Vector3d& direction(int i, int j) const { return directions[static_cast<std::size_t>(i) * grid_w + j]; }
};

// Rays through the centers of a grid_h x grid_w cell grid spanning the full
// image. Each cell center is unprojected through K and rotated to world.
inline RayMap compute_rays(const Camera& cam, int grid_h, int grid_w) {
  cam.validate();
  if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("compute_rays: grid dims must be >= 1");
  if (!(std::abs(cam.fx) > 0) || !(std::abs(cam.fy) > 0))
    throw std::invalid_argument("compute_rays: singular intrinsics");

  RayMap rays;
  rays.grid_h = grid_h;
  rays.grid_w = grid_w;
  rays.origins.resize(static_cast<std::size_t>(grid_h) * grid_w);
  rays.directions.resize(static_cast<std::size_t>(grid_h) * grid_w);

  const Eigen::Vector3d origin = cam.center();
  const Eigen::Matrix3d r_t = cam.R.transpose();
  const double su = static_cast<double>(cam.width) / grid_w;
  const double sv = static_cast<double>(cam.height) / grid_h;
  for (int i = 0; i < grid_h; ++i) {
    for (int j = 0; j < grid_w; ++j) {
      const double u = (j + 0.5) * su;
      const double v = (i + 0.5) * sv;
      Eigen::Vector3d dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      Eigen::Vector3d dir = (r_t * dir_cam).normalized();
      const std::size_t idx = static_cast<std::size_t>(i) * grid_w + j;
      rays.origins[idx] = origin;
      rays.directions[idx] = dir;
    }
  }
  return rays;
}

// Per-cell origin ++ direction, 6 channels. This is the form cross-attention
// consumes.
template <class S>
Tensor<S> embed_rays(const RayMap& rays) {
  Tensor<S> out({6, rays.grid_h, rays.grid_w});
  for (int i = 0; i < rays.grid_h; ++i) {
    for (int j = 0; j < rays.grid_w; ++j) {
      const Eigen::Vector3d& o = rays.origin(i, j);
      const Eigen::Vector3d& d = rays.direction(i, j);
      for (int c = 0; c < 3; ++c) {
        out.at(c, i, j) = static_cast<S>(o(c));
        out.at(3 + c, i, j) = static_cast<S>(d(c));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-frame JSON record: {"fx","fy","cx","cy","R":[9 row-major],"t":[3],"h","w"}.

inline nlohmann::json camera_to_json(const Camera& cam) {
  nlohmann::json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  std::vector<double> r(9), t(3);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r[static_cast<std::size_t>(3 * a + b)] = cam.R(a, b);
  for (int a = 0; a < 3; ++a) t[static_cast<std::size_t>(a)] = cam.t(a);
  j["R"] = r;
  j["t"] = t;
  j["h"] = cam.height;
  j["w"] = cam.width;
  return j;
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera cam;
  try {
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const auto r = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw DataError("camera json: R must have 9 entries, t 3");
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cam.R(a, b) = r[static_cast<std::size_t>(3 * a + b)];
    for (int a = 0; a < 3; ++a) cam.t(a) = t[static_cast<std::size_t>(a)];
    cam.height = j.at("h").get<int>();
    cam.width = j.at("w").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("camera json: ") + e.what());
  }
  return cam;
}

}  // namespace latentview
