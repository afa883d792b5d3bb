// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Scene records, on-disk dataset layout, frame pairing and dataset splits.
//
// Layout: <root>/classes.txt, then <root>/<class>/<scene_id>/images/NNN.png
// plus cameras.json (a JSON array of per-frame camera records, frame 1 first).

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "latentview/camera.hpp"
#include "latentview/common.hpp"
#include "latentview/image.hpp"

namespace latentview {

struct Frame {
  int index = 0;  // 1-based, contiguous
  std::string image_path;
  Camera camera;
};

struct SceneRecord {
  std::string scene_id;
  int class_id = 0;
  std::string class_name = "generic";
  std::vector<Frame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }

  const Frame& frame(int index) const {  // 1-based
    if (index < 1 || index > frame_count())
      throw std::invalid_argument("scene " + scene_id + ": frame index out of range");
    return frames[static_cast<std::size_t>(index - 1)];
  }

  void validate() const {
    if (frames.empty()) throw std::invalid_argument("scene " + scene_id + ": no frames");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i].index != static_cast<int>(i) + 1)
        throw std::invalid_argument("scene " + scene_id + ": frame indices not contiguous from 1");
      frames[i].camera.validate();
    }
  }
};

// ---------------------------------------------------------------------------
// Frame pairing. Reference frames come from the early part of the sweep and
// targets from the later part; ranges are configurable for short sweeps.

struct FramePair {
  int ref_index = 0;
  int tar_index = 0;
};

struct PairRanges {
  int ref_lo = 1, ref_hi = 10;
  int tar_lo = 15, tar_hi = 25;

  void validate() const {
    if (ref_lo < 1 || ref_hi < ref_lo || tar_lo < 1 || tar_hi < tar_lo)
      throw std::invalid_argument("pair ranges: need 1 <= lo <= hi for both ranges");
  }
};

// Uniform sampling without duplicate pairs: shuffle the admissible cross
// product and take a prefix. pairs_per_scene >= the product size yields every
// admissible pair exactly once. Scenes too short to admit any pair return an
// empty list; the caller records the skip.
inline std::vector<FramePair> build_pairs(const SceneRecord& scene, int pairs_per_scene,
                                          std::uint64_t seed, const PairRanges& ranges = {}) {
  ranges.validate();
  if (pairs_per_scene < 0) throw std::invalid_argument("build_pairs: pairs_per_scene < 0");
  const int n = scene.frame_count();
  const int ref_hi = std::min(ranges.ref_hi, n);
  const int tar_hi = std::min(ranges.tar_hi, n);
  if (ranges.ref_lo > ref_hi || ranges.tar_lo > tar_hi) return {};

  std::vector<FramePair> all;
  for (int r = ranges.ref_lo; r <= ref_hi; ++r)
    for (int t = ranges.tar_lo; t <= tar_hi; ++t) all.push_back({r, t});

  auto eng = make_engine(mix_seed(seed, fnv1a64(scene.scene_id)));
  std::shuffle(all.begin(), all.end(), eng);
  if (static_cast<int>(all.size()) > pairs_per_scene)
    all.resize(static_cast<std::size_t>(pairs_per_scene));
  return all;
}

// ---------------------------------------------------------------------------
// Dataset split: lexicographic by scene_id, 90/5/5.

struct SplitResult {
  std::vector<std::string> train, val, test;
};

inline SplitResult split_scenes(std::vector<std::string> scene_ids) {
  std::sort(scene_ids.begin(), scene_ids.end());
  const std::size_t n = scene_ids.size();
  const std::size_t n_train = (n * 90) / 100;
  const std::size_t n_val = (n * 5) / 100;
  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      out.train.push_back(scene_ids[i]);
    else if (i < n_train + n_val)
      out.val.push_back(scene_ids[i]);
    else
      out.test.push_back(scene_ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disk layout IO.

inline std::string frame_file_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d.png", index);
  return buf;
}

inline void write_class_vocab(const std::string& root, const std::vector<std::string>& names) {
  std::string body;
  for (const auto& n : names) body += n + "\n";
  write_file((std::filesystem::path(root) / "classes.txt").string(), body);
}

// Line i of classes.txt is the name for class id i; id 0 is "generic".
inline std::vector<std::string> read_class_vocab(const std::string& root) {
  const auto path = (std::filesystem::path(root) / "classes.txt").string();
  std::string body = read_file(path);
  std::vector<std::string> names;
  std::string cur;
  for (char c : body) {
    if (c == '\n') {
      if (!cur.empty()) names.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) names.push_back(cur);
  if (names.empty() || names[0] != "generic")
    throw DataError("classes.txt: first class must be 'generic' (" + path + ")");
  return names;
}

inline void write_scene(const std::string& root, const std::string& class_name,
                        const std::string& scene_id, const std::vector<Image>& images,
                        const std::vector<Camera>& cameras) {
  if (images.size() != cameras.size() || images.empty())
    throw std::invalid_argument("write_scene: need matching nonempty images and cameras");
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / class_name / scene_id;
  fs::create_directories(dir / "images");
  nlohmann::json cams = nlohmann::json::array();
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_png((dir / "images" / frame_file_name(static_cast<int>(i) + 1)).string(), images[i]);
    cams.push_back(camera_to_json(cameras[i]));
  }
  write_file((dir / "cameras.json").string(), cams.dump(2) + "\n");
}

inline SceneRecord load_scene(const std::string& scene_dir, int class_id,
                              const std::string& class_name) {
  namespace fs = std::filesystem;
  const fs::path dir(scene_dir);
  SceneRecord scene;
  scene.scene_id = dir.filename().string();
  scene.class_id = class_id;
  scene.class_name = class_name;

  nlohmann::json cams;
  try {
    cams = nlohmann::json::parse(read_file((dir / "cameras.json").string()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cameras.json parse failure in " + scene_dir + ": " + e.what());
  }
  if (!cams.is_array() || cams.empty())
    throw DataError("cameras.json in " + scene_dir + ": expected nonempty array");

  for (std::size_t i = 0; i < cams.size(); ++i) {
    Frame f;
    f.index = static_cast<int>(i) + 1;
    f.camera = camera_from_json(cams[i]);
    f.image_path = (dir / "images" / frame_file_name(f.index)).string();
    if (!fs::exists(f.image_path)) throw DataError("missing frame image: " + f.image_path);
    scene.frames.push_back(std::move(f));
  }
  scene.validate();
  return scene;
}

// Scans <root>/<class>/<scene_id>; class and scene order is lexicographic so
// iteration is deterministic.
inline std::vector<SceneRecord> load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root not found: " + root);
  const auto vocab = read_class_vocab(root);
  std::map<std::string, int> class_ids;
  for (std::size_t i = 0; i < vocab.size(); ++i) class_ids[vocab[i]] = static_cast<int>(i);

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());

  std::vector<SceneRecord> scenes;
  for (const auto& cname : class_dirs) {
    auto it = class_ids.find(cname);
    if (it == class_ids.end())
      throw DataError("class directory '" + cname + "' not listed in classes.txt");
    std::vector<std::string> scene_dirs;
    for (const auto& e : fs::directory_iterator(fs::path(root) / cname))
      if (e.is_directory()) scene_dirs.push_back(e.path().string());
    std::sort(scene_dirs.begin(), scene_dirs.end());
    for (const auto& sdir : scene_dirs) scenes.push_back(load_scene(sdir, it->second, cname));
  }
  std::sort(scenes.begin(), scenes.end(),
            [](const SceneRecord& a, const SceneRecord& b) { return a.scene_id < b.scene_id; });
  return scenes;
}

inline const SceneRecord& find_scene(const std::vector<SceneRecord>& scenes,
                                     const std::string& scene_id) {
  for (const auto& s : scenes)
    if (s.scene_id == scene_id) return s;
  throw DataError("scene not found: " + scene_id);
}

// ---------------------------------------------------------------------------
// Importer. Source scenes carry a poses.txt in a COLMAP-like convention:
//   line 1:            fx fy cx cy width height
//   following lines:   frame_index qw qx qy qz tx ty tz
// with (q, t) the world-to-camera rotation (unit quaternion) and translation.
// Cameras are renormalized so the common look-at point sits at the origin and
// the mean camera distance is 1; this is a convention of this importer, not a
// property of any upstream dataset.

inline Eigen::Matrix3d quat_to_rotation(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n < 1e-12) throw DataError("poses.txt: zero quaternion");
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  Eigen::Matrix3d r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

// Least-squares point closest to all optical axes: minimizes
// sum_i |(I - d_i d_i^T)(p - c_i)|^2 over p.
inline Eigen::Vector3d closest_axis_point(const std::vector<Camera>& cams) {
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (const auto& cam : cams) {
    const Eigen::Vector3d c = cam.center();
    const Eigen::Vector3d d = cam.R.row(2).transpose();  // optical axis in world coords
    const Eigen::Matrix3d m = Eigen::Matrix3d::Identity() - d * d.transpose();
    a += m;
    b += m * c;
  }
  const Eigen::Vector3d p = a.ldlt().solve(b);
  if (!p.allFinite()) throw DataError("camera normalization: degenerate axis system");
  return p;
}

// Shift world so `pivot` is the origin, then scale so the mean camera distance
// is 1. Pixels are unchanged: R' = R, t' = s (R * pivot + t).
inline void normalize_cameras(std::vector<Camera>& cams) {
  if (cams.empty()) throw std::invalid_argument("normalize_cameras: empty");
  const Eigen::Vector3d pivot = closest_axis_point(cams);
  double mean_dist = 0.0;
  for (const auto& cam : cams) mean_dist += (cam.center() - pivot).norm();
  mean_dist /= static_cast<double>(cams.size());
  if (mean_dist < 1e-9) throw DataError("camera normalization: cameras coincide with pivot");
  const double s = 1.0 / mean_dist;
  for (auto& cam : cams) cam.t = s * (cam.R * pivot + cam.t);
}

struct ImportStats {
  int scenes = 0;
  int frames = 0;
  std::vector<std::string> skipped;  // scene dirs without poses.txt
};

inline ImportStats import_dataset(const std::string& src_root, const std::string& dst_root,
                                  std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(src_root)) throw DataError("import source not found: " + src_root);
  std::vector<std::string> vocab = {"generic"};
  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(src_root))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());

  ImportStats stats;
  for (const auto& cname : class_dirs) {
    if (cname != "generic") vocab.push_back(cname);
    std::vector<fs::path> scene_dirs;
    for (const auto& e : fs::directory_iterator(fs::path(src_root) / cname))
      if (e.is_directory()) scene_dirs.push_back(e.path());
    std::sort(scene_dirs.begin(), scene_dirs.end());

    for (const auto& sdir : scene_dirs) {
      const fs::path poses = sdir / "poses.txt";
      if (!fs::exists(poses)) {
        stats.skipped.push_back(sdir.string());
        if (log) *log << "[latentview] import: no poses.txt, skipping " << sdir << "\n";
        continue;
      }
      std::istringstream in(read_file(poses.string()));
      double fx, fy, cx, cy;
      int w, h;
      if (!(in >> fx >> fy >> cx >> cy >> w >> h))
        throw DataError("poses.txt: bad intrinsics line in " + poses.string());
      std::vector<Camera> cams;
      std::vector<Image> imgs;
      int idx, expect = 1;
      double qw, qx, qy, qz, tx, ty, tz;
      while (in >> idx >> qw >> qx >> qy >> qz >> tx >> ty >> tz) {
        if (idx != expect)
          throw DataError("poses.txt: frame indices not contiguous from 1 in " + poses.string());
        ++expect;
        Camera cam;
        cam.fx = fx;
        cam.fy = fy;
        cam.cx = cx;
        cam.cy = cy;
        cam.width = w;
        cam.height = h;
        cam.R = quat_to_rotation(qw, qx, qy, qz);
        cam.t = Eigen::Vector3d(tx, ty, tz);
        cam.validate();
        cams.push_back(cam);
        imgs.push_back(read_png((sdir / "images" / frame_file_name(idx)).string()));
      }
      if (cams.empty()) throw DataError("poses.txt: no frames in " + poses.string());
      normalize_cameras(cams);
      write_scene(dst_root, cname, sdir.filename().string(), imgs, cams);
      ++stats.scenes;
      stats.frames += static_cast<int>(cams.size());
    }
  }
  write_class_vocab(dst_root, vocab);
  return stats;
}

}  // namespace latentview
