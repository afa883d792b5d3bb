// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing named-tensor archive: magic, version, JSON header (metadata
// plus a tensor index of dtype/shape/offset), then raw little-endian payloads.
// Used for model checkpoints, optimizer state, and prior artifacts.

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentview/common.hpp"
#include "latentview/nn.hpp"
#include "latentview/tensor.hpp"

namespace latentview {

inline constexpr char kArchiveMagic[5] = "TUNC";
inline constexpr std::uint32_t kArchiveVersion = 1;

template <class S>
const char* dtype_name() {
  if constexpr (sizeof(S) == 4) return "f32";
  else return "f64";
}

template <class S>
std::string serialize_archive(const nlohmann::json& meta,
                              const std::vector<std::pair<std::string, const Tensor<S>*>>& tensors) {
  nlohmann::json header = meta;
  nlohmann::json index = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::json entry;
    entry["dtype"] = dtype_name<S>();
    entry["shape"] = t->shape();
    entry["offset"] = offset;
    entry["count"] = t->numel();
    index[name] = entry;
    offset += t->numel() * sizeof(S);
  }
  header["tensors"] = index;
  const std::string json_text = header.dump();

  std::string out;
  out.reserve(json_text.size() + static_cast<std::size_t>(offset) + 32);
  out.append(kArchiveMagic, 4);
  put_u32(out, kArchiveVersion);
  put_u64(out, json_text.size());
  out += json_text;
  for (const auto& [name, t] : tensors) {
    (void)name;
    for (std::size_t i = 0; i < t->numel(); ++i) {
      if constexpr (sizeof(S) == 4)
        put_f32(out, static_cast<float>((*t)[i]));
      else
        put_f64(out, static_cast<double>((*t)[i]));
    }
  }
  return out;
}

template <class S>
std::pair<nlohmann::json, std::map<std::string, Tensor<S>>> deserialize_archive(
    const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, kArchiveMagic, 4) != 0)
    throw DataError("archive: bad magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kArchiveVersion) throw DataError("archive: unsupported version");
  const std::uint64_t json_len = get_u64(bytes.data() + 8);
  if (16 + json_len > bytes.size()) throw DataError("archive: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, json_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("archive: corrupt header: ") + e.what());
  }
  if (!header.contains("tensors")) throw DataError("archive: missing tensor index");

  const std::size_t payload_base = 16 + static_cast<std::size_t>(json_len);
  std::map<std::string, Tensor<S>> tensors;
  for (auto it = header["tensors"].begin(); it != header["tensors"].end(); ++it) {
    const auto& entry = it.value();
    if (entry.at("dtype").get<std::string>() != dtype_name<S>())
      throw DataError("archive: dtype mismatch for " + it.key());
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    Tensor<S> t(shape);
    const std::size_t need = payload_base + offset + t.numel() * sizeof(S);
    if (need > bytes.size()) throw DataError("archive: truncated payload for " + it.key());
    const char* p = bytes.data() + payload_base + offset;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if constexpr (sizeof(S) == 4)
        t[i] = static_cast<S>(get_f32(p + i * 4));
      else
        t[i] = static_cast<S>(get_f64(p + i * 8));
    }
    tensors.emplace(it.key(), std::move(t));
  }
  header.erase("tensors");
  return {std::move(header), std::move(tensors)};
}

// Copies archived tensors into an already-built store by parameter name.
// Every store parameter must be present with a matching shape.
template <class S>
void load_into_store(const std::map<std::string, Tensor<S>>& tensors, nn::ParameterStore<S>& ps,
                     const std::string& prefix = "") {
  for (int h = 0; h < ps.size(); ++h) {
    const std::string key = prefix + ps.name(h);
    auto it = tensors.find(key);
    if (it == tensors.end()) throw DataError("archive: missing tensor " + key);
    if (it->second.shape() != ps.shape(h)) throw DataError("archive: shape mismatch for " + key);
    ps.value(h) = it->second;
  }
}

}  // namespace latentview
