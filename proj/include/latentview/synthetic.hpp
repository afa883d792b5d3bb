// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-view scenes: a small lambertian ray tracer (spheres and
// axis-aligned boxes on a checkered ground plane, one point light, no
// shadows) rendered from a circular camera arc that looks at the scene
// center. Everything is deterministic given the seed.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentview/camera.hpp"
#include "latentview/common.hpp"
#include "latentview/dataset.hpp"
#include "latentview/image.hpp"

namespace latentview {

struct Primitive {
  enum class Kind { kSphere, kBox };
  Kind kind = Kind::kSphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.3;                                     // sphere
  Eigen::Vector3d half = Eigen::Vector3d(0.3, 0.3, 0.3);   // box half extents
  Eigen::Vector3d color = Eigen::Vector3d(0.8, 0.3, 0.3);
};

struct SyntheticSpec {
  std::vector<Primitive> prims;
  Eigen::Vector3d light_pos = Eigen::Vector3d(2.2, 3.2, 1.6);
  double light_gain = 0.85;
  double ambient = 0.30;
  bool ground = true;
  Eigen::Vector3d ground_a = Eigen::Vector3d(0.62, 0.57, 0.50);
  Eigen::Vector3d ground_b = Eigen::Vector3d(0.33, 0.38, 0.44);
  Eigen::Vector3d look_at = Eigen::Vector3d(0.0, 0.35, 0.0);
  double orbit_radius = 2.4;
  double orbit_height = 1.3;
  double arc_degrees = 120.0;
  int image_size = 128;
  double fov_deg = 45.0;

  void validate() const {
    if (prims.empty() || prims.size() > 3)
      throw std::invalid_argument("synthetic spec: need 1 to 3 primitives");
    for (const auto& p : prims) {
      if (p.kind == Primitive::Kind::kSphere && !(p.radius > 0))
        throw std::invalid_argument("synthetic spec: sphere radius must be positive");
      if (p.kind == Primitive::Kind::kBox && !(p.half.minCoeff() > 0))
        throw std::invalid_argument("synthetic spec: box extents must be positive");
    }
    if (image_size < 1 || !(orbit_radius > 0) || !(fov_deg > 0) || fov_deg >= 180)
      throw std::invalid_argument("synthetic spec: bad camera parameters");
  }

  // Random arrangement: 1-3 primitives resting on the ground plane, saturated
  // colors, light jitter. Placement keeps centers apart when it can.
  static SyntheticSpec random(std::uint64_t seed) {
    SyntheticSpec spec;
    auto eng = make_engine(mix_seed(seed, 0x53594eULL));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int n = 1 + std::min(2, static_cast<int>(u01(eng) * 3.0));
    for (int i = 0; i < n; ++i) {
      Primitive p;
      p.kind = u01(eng) < 0.5 ? Primitive::Kind::kSphere : Primitive::Kind::kBox;
      const double size = 0.22 + 0.28 * u01(eng);
      for (int tries = 0; tries < 16; ++tries) {
        const double ang = 2.0 * M_PI * u01(eng);
        const double rad = 0.9 * std::sqrt(u01(eng));
        p.center = Eigen::Vector3d(rad * std::cos(ang), 0.0, rad * std::sin(ang));
        bool ok = true;
        for (const auto& q : spec.prims) {
          const double dx = q.center.x() - p.center.x();
          const double dz = q.center.z() - p.center.z();
          if (std::sqrt(dx * dx + dz * dz) < 1.2 * size) ok = false;
        }
        if (ok) break;
      }
      if (p.kind == Primitive::Kind::kSphere) {
        p.radius = size;
        p.center.y() = size;
      } else {
        p.half = Eigen::Vector3d(size * (0.7 + 0.6 * u01(eng)), size * (0.7 + 0.6 * u01(eng)),
                                 size * (0.7 + 0.6 * u01(eng)));
        p.center.y() = p.half.y();
      }
      // one strong channel keeps colors distinct under the shared light
      double c[3] = {0.15 + 0.5 * u01(eng), 0.15 + 0.5 * u01(eng), 0.15 + 0.5 * u01(eng)};
      c[static_cast<int>(u01(eng) * 3.0) % 3] = 0.75 + 0.2 * u01(eng);
      p.color = Eigen::Vector3d(c[0], c[1], c[2]);
      spec.prims.push_back(p);
    }
    spec.light_pos += Eigen::Vector3d(u01(eng) - 0.5, u01(eng) - 0.5, u01(eng) - 0.5);
    return spec;
  }
};

// World convention: +y up, ground plane y=0. Camera rows are (right, down,
// forward) so pixels run left-to-right, top-to-bottom with +z forward.
inline Camera look_at_camera(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                             int image_size, double fov_deg) {
  const Eigen::Vector3d up(0, 1, 0);
  Eigen::Vector3d f = (target - eye).normalized();
  Eigen::Vector3d x = f.cross(up);
  if (x.norm() < 1e-9) throw std::invalid_argument("look_at_camera: view parallel to up axis");
  x.normalize();
  const Eigen::Vector3d y = f.cross(x).normalized();
  Camera cam;
  cam.R.row(0) = x.transpose();
  cam.R.row(1) = y.transpose();
  cam.R.row(2) = f.transpose();
  if (cam.R.determinant() < 0) cam.R.row(1) = -cam.R.row(1);
  cam.t = -cam.R * eye;
  cam.width = cam.height = image_size;
  const double half = static_cast<double>(image_size) / 2.0;
  cam.fx = cam.fy = half / std::tan(fov_deg * M_PI / 360.0);
  cam.cx = cam.cy = half;
  cam.validate();
  return cam;
}

// Continuous pixel coordinates (x right, y down); pixel (i,j) covers
// [j,j+1) x [i,i+1) with its center at (j+0.5, i+0.5).
inline std::array<double, 2> project_point(const Camera& cam, const Eigen::Vector3d& p_world) {
  const Eigen::Vector3d pc = cam.R * p_world + cam.t;
  if (!(pc.z() > 1e-9)) throw std::invalid_argument("project_point: point behind camera");
  return {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
}

namespace detail {

struct Hit {
  double tmin = std::numeric_limits<double>::infinity();
  int id = -2;  // primitive index, -1 ground, -2 background
  Eigen::Vector3d normal = Eigen::Vector3d::UnitY();
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

inline void hit_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Primitive& p,
                       int id, Hit& best) {
  const Eigen::Vector3d oc = o - p.center;
  const double b = d.dot(oc);
  const double c = oc.squaredNorm() - p.radius * p.radius;
  const double disc = b * b - c;
  if (disc < 0) return;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t <= 1e-6) t = -b + s;
  if (t <= 1e-6 || t >= best.tmin) return;
  best.tmin = t;
  best.id = id;
  best.normal = (o + t * d - p.center).normalized();
  best.color = p.color;
}

inline void hit_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Primitive& p,
                    int id, Hit& best) {
  double tnear = -std::numeric_limits<double>::infinity();
  double tfar = std::numeric_limits<double>::infinity();
  int axis = 0;
  double sign = 1.0;
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / d(a);  // IEEE inf handles axis-parallel rays
    double t0 = (p.center(a) - p.half(a) - o(a)) * inv;
    double t1 = (p.center(a) + p.half(a) - o(a)) * inv;
    double s = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1.0;
    }
    if (t0 > tnear) {
      tnear = t0;
      axis = a;
      sign = s;
    }
    tfar = std::min(tfar, t1);
    if (tnear > tfar) return;
  }
  double t = tnear > 1e-6 ? tnear : tfar;
  if (t <= 1e-6 || t >= best.tmin) return;
  best.tmin = t;
  best.id = id;
  best.normal = Eigen::Vector3d::Zero();
  best.normal(axis) = sign;
  best.color = p.color;
}

}  // namespace detail

namespace detail {

// Traces one ray through the scene and shades the hit. `hit_id` receives the
// primitive id (-1 ground, -2 background).
inline Eigen::Vector3d shade_ray(const SyntheticSpec& spec, const Eigen::Vector3d& eye,
                                 const Eigen::Vector3d& d, int* hit_id) {
  Hit hit;
  for (std::size_t k = 0; k < spec.prims.size(); ++k) {
    const auto& p = spec.prims[k];
    if (p.kind == Primitive::Kind::kSphere)
      hit_sphere(eye, d, p, static_cast<int>(k), hit);
    else
      hit_box(eye, d, p, static_cast<int>(k), hit);
  }
  if (spec.ground && std::abs(d.y()) > 1e-12) {
    const double t = -eye.y() / d.y();
    if (t > 1e-6 && t < hit.tmin) {
      hit.tmin = t;
      hit.id = -1;
      hit.normal = Eigen::Vector3d::UnitY();
      const Eigen::Vector3d p = eye + t * d;
      const long cell = static_cast<long>(std::floor(p.x())) + static_cast<long>(std::floor(p.z()));
      hit.color = (cell & 1) ? spec.ground_b : spec.ground_a;
    }
  }
  if (hit_id) *hit_id = hit.id;
  if (hit.id == -2) {
    const double a = 0.5 * (1.0 + d.y());
    return (1.0 - a) * Eigen::Vector3d(0.74, 0.77, 0.82) + a * Eigen::Vector3d(0.44, 0.57, 0.75);
  }
  const Eigen::Vector3d p = eye + hit.tmin * d;
  const Eigen::Vector3d l = (spec.light_pos - p).normalized();
  const double diffuse = std::max(0.0, hit.normal.dot(l));
  return hit.color * (spec.ambient + spec.light_gain * diffuse);
}

}  // namespace detail

// Renders one frame, integrating each pixel over a fixed 3x3 subsample grid
// so silhouettes and the distant ground pattern resolve to their pixel
// averages instead of aliasing. If hit_ids is given it receives per-pixel
// primitive ids from the center subsample (row-major; -1 ground, -2
// background), which the reprojection tests use to locate silhouettes.
inline Image render_frame(const SyntheticSpec& spec, const Camera& cam,
                          std::vector<int>* hit_ids = nullptr) {
  spec.validate();
  cam.validate();
  const int h = cam.height, w = cam.width;
  constexpr int kSub = 3;
  Image img({3, h, w});
  if (hit_ids) hit_ids->assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), -2);
  const Eigen::Vector3d eye = cam.center();
  const Eigen::Matrix3d rt = cam.R.transpose();

  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
      for (int si = 0; si < kSub; ++si)
        for (int sj = 0; sj < kSub; ++sj) {
          const double u = j + (sj + 0.5) / kSub;
          const double v = i + (si + 0.5) / kSub;
          const Eigen::Vector3d dir_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
          const Eigen::Vector3d d = (rt * dir_cam).normalized();
          int id = -2;
          rgb += detail::shade_ray(spec, eye, d, &id);
          // The center subsample is the classic pixel-center ray.
          if (hit_ids && si == kSub / 2 && sj == kSub / 2 && id != -2)
            (*hit_ids)[static_cast<std::size_t>(i) * static_cast<std::size_t>(w) +
                       static_cast<std::size_t>(j)] = id;
        }
      rgb /= static_cast<double>(kSub * kSub);
      for (int c = 0; c < 3; ++c)
        img.at(c, i, j) = static_cast<float>(std::clamp(rgb(c), 0.0, 1.0));
    }
  }
  return img;
}

// Camera k of an n-frame sweep: evenly spaced along a horizontal arc centered
// on the +x side, all poses looking at spec.look_at.
inline Camera orbit_camera(const SyntheticSpec& spec, int k, int n_frames, double phase_rad = 0.0) {
  if (n_frames < 2) throw std::invalid_argument("orbit_camera: n_frames must be >= 2");
  if (k < 0 || k >= n_frames) throw std::invalid_argument("orbit_camera: frame out of range");
  const double arc = spec.arc_degrees * M_PI / 180.0;
  const double theta = phase_rad - arc / 2.0 +
                       arc * static_cast<double>(k) / static_cast<double>(n_frames - 1);
  const Eigen::Vector3d eye(spec.orbit_radius * std::cos(theta), spec.orbit_height,
                            spec.orbit_radius * std::sin(theta));
  return look_at_camera(eye, spec.look_at, spec.image_size, spec.fov_deg);
}

struct RenderedScene {
  SceneRecord record;  // image_path fields are empty until written to disk
  std::vector<Image> images;
  std::vector<Camera> cameras;
};

// The seed perturbs the sweep (phase, radius, height) so distinct scenes get
// distinct camera paths even with identical primitive arrangements.
inline RenderedScene generate_synthetic_scene(const SyntheticSpec& spec, int n_frames,
                                              std::uint64_t seed) {
  if (n_frames < 2) throw std::invalid_argument("generate_synthetic_scene: n_frames must be >= 2");
  spec.validate();
  SyntheticSpec s = spec;
  auto eng = make_engine(mix_seed(seed, 0x4f524249ULL));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double phase = 0.25 * (u01(eng) - 0.5);
  s.orbit_radius *= 0.92 + 0.16 * u01(eng);
  s.orbit_height *= 0.85 + 0.30 * u01(eng);

  RenderedScene out;
  out.record.scene_id = "scene";
  for (int k = 0; k < n_frames; ++k) {
    const Camera cam = orbit_camera(s, k, n_frames, phase);
    out.images.push_back(render_frame(s, cam));
    out.cameras.push_back(cam);
    Frame f;
    f.index = k + 1;
    f.camera = cam;
    out.record.frames.push_back(f);
  }
  return out;
}

// Class name by composition; ids follow synthetic_class_vocab() order.
inline std::string synthetic_class_name(const SyntheticSpec& spec) {
  bool any_sphere = false, any_box = false;
  for (const auto& p : spec.prims)
    (p.kind == Primitive::Kind::kSphere ? any_sphere : any_box) = true;
  if (any_sphere && any_box) return "mixed";
  return any_sphere ? "spheres" : "boxes";
}

inline std::vector<std::string> synthetic_class_vocab() {
  return {"generic", "spheres", "boxes", "mixed"};
}

// Writes num_scenes scenes under root in the standard layout.
inline void make_synthetic_dataset(const std::string& root, int num_scenes, int n_frames,
                                   std::uint64_t base_seed, int image_size = 128,
                                   double arc_degrees = 120.0) {
  if (num_scenes < 1) throw std::invalid_argument("make_synthetic_dataset: num_scenes must be >= 1");
  for (int s = 0; s < num_scenes; ++s) {
    const std::uint64_t seed = mix_seed(base_seed, static_cast<std::uint64_t>(s));
    SyntheticSpec spec = SyntheticSpec::random(seed);
    spec.image_size = image_size;
    spec.arc_degrees = arc_degrees;
    RenderedScene scene = generate_synthetic_scene(spec, n_frames, seed);
    char sid[24];
    std::snprintf(sid, sizeof(sid), "scene_%04d", s);
    write_scene(root, synthetic_class_name(spec), sid, scene.images, scene.cameras);
  }
  write_class_vocab(root, synthetic_class_vocab());
}

}  // namespace latentview
