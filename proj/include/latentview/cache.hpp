// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Inversion cache: one InvertedLatent file per frame, keyed by a content hash
// of (image bytes, codec id, prior id, t_star, steps). Rerunning on unchanged
// inputs touches no prior. Writes are write-temp-then-rename so a crash never
// leaves a truncated entry behind.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentview/codec.hpp"
#include "latentview/common.hpp"
#include "latentview/dataset.hpp"
#include "latentview/engine.hpp"
#include "latentview/image.hpp"

namespace latentview {

struct CacheEntry {
  std::string key;
  std::string path;
  std::string scene_id;
  int frame = 0;
  int t_star = 0;
  int steps = 0;
};

inline std::string cache_key(const std::string& image_bytes, const std::string& codec_id,
                             const std::string& prior_id, int t_star, int steps) {
  Sha256 h;
  std::string head = "latentview-cache-v1";
  head.push_back('\0');
  head += codec_id;
  head.push_back('\0');
  head += prior_id;
  head.push_back('\0');
  put_u32(head, static_cast<std::uint32_t>(t_star));
  put_u32(head, static_cast<std::uint32_t>(steps));
  h.update(head);
  h.update(image_bytes);
  return h.hex();
}

inline nlohmann::json manifest_to_json(const std::vector<CacheEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries)
    arr.push_back({{"key", e.key},
                   {"path", e.path},
                   {"scene_id", e.scene_id},
                   {"frame", e.frame},
                   {"t_star", e.t_star},
                   {"steps", e.steps}});
  return arr;
}

inline std::vector<CacheEntry> manifest_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw DataError("cache manifest: expected a JSON array");
  std::vector<CacheEntry> out;
  for (const auto& j : arr) {
    CacheEntry e;
    e.key = j.at("key").get<std::string>();
    e.path = j.at("path").get<std::string>();
    e.scene_id = j.at("scene_id").get<std::string>();
    e.frame = j.at("frame").get<int>();
    e.t_star = j.at("t_star").get<int>();
    e.steps = j.at("steps").get<int>();
    out.push_back(std::move(e));
  }
  return out;
}

template <typename S>
inline void write_latent_atomic(const std::string& path, const InvertedLatent<S>& inv) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, serialize_inverted_latent(inv));
  std::filesystem::rename(tmp, path);
}

// Inverts every frame of every scene through (preprocess, encode, invert) and
// stores the result, skipping entries already present and intact. On an IO
// failure the manifest of completed entries is still written before the error
// propagates.
template <typename S>
inline std::vector<CacheEntry> precompute_inversions(
    const std::vector<SceneRecord>& scenes, const LatentCodec<S>& codec,
    const DiffusionPrior<S>& prior, const NoiseSchedule& schedule, int t_star, int steps,
    const std::string& cache_dir, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(cache_dir);
  const std::string codec_id = codec.id();
  const std::string prior_id = prior.id();

  std::vector<CacheEntry> entries;
  auto flush_manifest = [&]() {
    write_file((fs::path(cache_dir) / "manifest.json").string(),
               manifest_to_json(entries).dump(2) + "\n");
  };

  try {
    for (const auto& scene : scenes) {
      for (const auto& frame : scene.frames) {
        const std::string bytes = read_file(frame.image_path);
        CacheEntry e;
        e.key = cache_key(bytes, codec_id, prior_id, t_star, steps);
        e.path = (fs::path(cache_dir) / (e.key + ".invl")).string();
        e.scene_id = scene.scene_id;
        e.frame = frame.index;
        e.t_star = t_star;
        e.steps = steps;

        bool have = false;
        if (fs::exists(e.path)) {
          try {
            deserialize_inverted_latent<S>(read_file(e.path));
            have = true;
          } catch (const DataError&) {
            if (log)
              *log << "[latentview] cache: corrupt entry " << e.key << ", recomputing\n";
          }
        }
        if (!have) {
          Image img = preprocess_image(read_png(frame.image_path), codec.image_size());
          Tensor<S> z0 = codec.encode(img);
          InvertedLatent<S> inv = ddim_invert(z0, prior, schedule, t_star, steps);
          write_latent_atomic(e.path, inv);
        }
        entries.push_back(std::move(e));
      }
    }
  } catch (...) {
    flush_manifest();
    throw;
  }
  flush_manifest();
  return entries;
}

// (scene_id, frame) -> cache path, for training-time lookups.
class CacheIndex {
 public:
  explicit CacheIndex(const std::vector<CacheEntry>& entries) {
    for (const auto& e : entries) map_[{e.scene_id, e.frame}] = e.path;
  }

  const std::string& path(const std::string& scene_id, int frame) const {
    auto it = map_.find({scene_id, frame});
    if (it == map_.end())
      throw DataError("cache index: no entry for " + scene_id + " frame " +
                      std::to_string(frame));
    return it->second;
  }

  template <typename S>
  InvertedLatent<S> load(const std::string& scene_id, int frame) const {
    return deserialize_inverted_latent<S>(read_file(path(scene_id, frame)));
  }

  std::size_t size() const { return map_.size(); }

 private:
  std::map<std::pair<std::string, int>, std::string> map_;
};

}  // namespace latentview
