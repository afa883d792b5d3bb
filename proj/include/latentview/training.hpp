// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// TUNet training on cached inverted-latent pairs: per-pair MSE on the mean
// term, Adam with global-norm clipping, triangular cyclic LR, CSV metrics,
// periodic + best-validation checkpoints, bit-exact resume.
//
// Every random draw derives from (seed, epoch, step), never from mutable
// engine state, so a resumed run replays the exact same shuffles and class
// substitutions as an uninterrupted one.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentview/cache.hpp"
#include "latentview/checkpoint.hpp"
#include "latentview/common.hpp"
#include "latentview/dataset.hpp"
#include "latentview/engine.hpp"
#include "latentview/optim.hpp"
#include "latentview/tunet.hpp"

namespace latentview {

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 1e-5;
  int epochs = 450;
  int t_star = 600;
  int steps = 30;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;
  int pairs_per_scene = 20;
  PairRanges ranges;
  double generic_substitution = 0.1;  // chance a sample trains with class 0
  std::string out_dir = "runs/default";

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (t_star < 1 || steps < 1) throw std::invalid_argument("train config: bad t_star/steps");
    if (generic_substitution < 0 || generic_substitution > 1)
      throw std::invalid_argument("train config: generic_substitution outside [0,1]");
    ranges.validate();
  }

  static TrainConfig paper() { return TrainConfig{}; }

  static TrainConfig desk() {
    TrainConfig c;
    c.batch_size = 8;
    c.learning_rate = 3e-4;
    c.epochs = 50;
    c.pairs_per_scene = 6;
    return c;
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"t_star", c.t_star},
          {"steps", c.steps},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"pairs_per_scene", c.pairs_per_scene},
          {"ref_lo", c.ranges.ref_lo},
          {"ref_hi", c.ranges.ref_hi},
          {"tar_lo", c.ranges.tar_lo},
          {"tar_hi", c.ranges.tar_hi},
          {"generic_substitution", c.generic_substitution}};
}

inline nlohmann::json tunet_config_to_json(const TUNetConfig& c) {
  return {{"in_channels", c.in_channels},
          {"latent_grid", c.latent_grid},
          {"base_width", c.base_width},
          {"channel_mult", c.channel_mult},
          {"res_blocks_per_stage", c.res_blocks_per_stage},
          {"attn_dim", c.attn_dim},
          {"head_dim", c.head_dim},
          {"d_cam", c.cond.d_cam},
          {"d_cls", c.cond.d_cls},
          {"d_time", c.cond.d_time},
          {"num_classes", c.cond.num_classes},
          {"head_init", c.head_init == TUNetConfig::HeadInit::kZero ? "zero" : "random"}};
}

inline TUNetConfig tunet_config_from_json(const nlohmann::json& j) {
  TUNetConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.latent_grid = j.at("latent_grid").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.channel_mult = j.at("channel_mult").get<std::vector<int>>();
    c.res_blocks_per_stage = j.at("res_blocks_per_stage").get<int>();
    c.attn_dim = j.at("attn_dim").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.cond.d_cam = j.at("d_cam").get<int>();
    c.cond.d_cls = j.at("d_cls").get<int>();
    c.cond.d_time = j.at("d_time").get<int>();
    c.cond.num_classes = j.at("num_classes").get<int>();
    c.head_init = j.at("head_init").get<std::string>() == "random" ? TUNetConfig::HeadInit::kRandom
                                                                   : TUNetConfig::HeadInit::kZero;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config in checkpoint is malformed: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Pair dataset: cached latents for both ends of every training pair, plus the
// cameras and class id needed for conditioning.

template <class S>
struct PairItem {
  const InvertedLatent<S>* ref = nullptr;
  const InvertedLatent<S>* tar = nullptr;
  Camera cam_ref, cam_tar;
  int class_id = 0;
  std::string scene_id;
  int ref_index = 0, tar_index = 0;
};

template <class S>
struct PairDataset {
  std::vector<PairItem<S>> train, val;
  std::vector<std::string> skipped;  // scenes too short to admit any pair
  std::vector<std::string> class_vocab;

  // stable storage backing the PairItem pointers
  std::deque<InvertedLatent<S>> storage;
  std::map<std::pair<std::string, int>, const InvertedLatent<S>*> by_frame;
};

template <class S>
inline PairDataset<S> build_pair_dataset(const std::vector<SceneRecord>& scenes,
                                         const SplitResult& split, const CacheIndex& cache,
                                         const TrainConfig& cfg,
                                         const std::vector<std::string>& class_vocab,
                                         std::ostream* log = nullptr) {
  cfg.validate();
  PairDataset<S> out;
  out.class_vocab = class_vocab;

  auto latent_of = [&](const SceneRecord& scene, int frame) {
    const auto key = std::make_pair(scene.scene_id, frame);
    auto it = out.by_frame.find(key);
    if (it != out.by_frame.end()) return it->second;
    out.storage.push_back(cache.template load<S>(scene.scene_id, frame));
    const InvertedLatent<S>* p = &out.storage.back();
    out.by_frame[key] = p;
    return p;
  };

  auto add_split = [&](const std::vector<std::string>& ids, std::vector<PairItem<S>>& dst) {
    for (const auto& id : ids) {
      const SceneRecord& scene = find_scene(scenes, id);
      auto pairs = build_pairs(scene, cfg.pairs_per_scene, cfg.seed, cfg.ranges);
      if (pairs.empty()) {
        out.skipped.push_back(scene.scene_id);
        if (log)
          *log << "[latentview] pairing: scene " << scene.scene_id
               << " too short for the configured ranges, skipping\n";
        continue;
      }
      for (const auto& pr : pairs) {
        PairItem<S> item;
        item.ref = latent_of(scene, pr.ref_index);
        item.tar = latent_of(scene, pr.tar_index);
        item.cam_ref = scene.frame(pr.ref_index).camera;
        item.cam_tar = scene.frame(pr.tar_index).camera;
        item.class_id = scene.class_id;
        item.scene_id = scene.scene_id;
        item.ref_index = pr.ref_index;
        item.tar_index = pr.tar_index;
        dst.push_back(std::move(item));
      }
    }
  };
  add_split(split.train, out.train);
  add_split(split.val, out.val);
  return out;
}

// ---------------------------------------------------------------------------
// Loss and steps. The objective is elementwise MSE between the translated
// mean and the target's inverted mean, averaged over the batch.

// Forward (and backward when grad_scale != 0) for one pair. The gradient
// contribution is grad_scale * 2 * (out - tar) / numel, so grad_scale = 1/B
// accumulates the batch-mean loss gradient.
template <class S>
inline double pair_loss_grad(const TUNet<S>& model, nn::ParameterStore<S>& ps,
                             const PairItem<S>& item, int class_id, int t_star,
                             double grad_scale) {
  typename TUNet<S>::Cache cache;
  Tensor<S> out = model.forward(ps, item.ref->mu, item.cam_ref, item.cam_tar, class_id, class_id,
                                t_star, grad_scale != 0.0 ? &cache : nullptr);
  Tensor<S> diff = sub(out, item.tar->mu);
  const double numel = static_cast<double>(diff.numel());
  const double mse = squared_norm(diff) / numel;
  if (grad_scale != 0.0) {
    Tensor<S> dy = diff;
    const S c = static_cast<S>(2.0 * grad_scale / numel);
    for (std::size_t i = 0; i < dy.numel(); ++i) dy[i] *= c;
    model.backward(ps, dy, cache);
  }
  return mse;
}

template <class S>
struct BatchSample {
  const PairItem<S>* item = nullptr;
  int class_id = 0;  // after any generic substitution
};

template <class S>
inline double batch_loss(const TUNet<S>& model, nn::ParameterStore<S>& ps,
                         const std::vector<BatchSample<S>>& batch, int t_star) {
  double loss = 0.0;
  for (const auto& s : batch) loss += pair_loss_grad(model, ps, *s.item, s.class_id, t_star, 0.0);
  return loss / static_cast<double>(batch.size());
}

template <class S>
inline double parameter_norm(const nn::ParameterStore<S>& ps) {
  double acc = 0.0;
  for (int h = 0; h < ps.size(); ++h) acc += squared_norm(ps.value(h));
  return std::sqrt(acc);
}

// One optimizer update on a batch; returns the batch loss. Non-finite loss
// aborts with the offending pair ids and the parameter norm.
template <class S>
inline double train_step(const TUNet<S>& model, nn::ParameterStore<S>& ps, Adam<S>& opt,
                         const std::vector<BatchSample<S>>& batch, int t_star, double lr) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  ps.zero_grads();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& s : batch)
    loss += inv_b * pair_loss_grad(model, ps, *s.item, s.class_id, t_star, inv_b);
  if (!std::isfinite(loss)) {
    std::string ids;
    for (const auto& s : batch) {
      if (!ids.empty()) ids += ", ";
      ids += s.item->scene_id + ":" + std::to_string(s.item->ref_index) + "->" +
             std::to_string(s.item->tar_index);
    }
    throw NumericalError("train_step: non-finite loss on batch [" + ids +
                         "], parameter norm = " + std::to_string(parameter_norm(ps)));
  }
  opt.step(ps, lr);
  return loss;
}

template <class S>
inline double val_mse(const TUNet<S>& model, nn::ParameterStore<S>& ps,
                      const std::vector<PairItem<S>>& items, int t_star) {
  if (items.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (const auto& item : items)
    acc += pair_loss_grad(model, ps, item, item.class_id, t_star, 0.0);
  return acc / static_cast<double>(items.size());
}

// Baseline that predicts the target mean as the reference mean unchanged.
template <class S>
inline double identity_baseline_mse(const std::vector<PairItem<S>>& items) {
  if (items.empty()) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (const auto& item : items)
    acc += mean_squared_error(item.ref->mu, item.tar->mu);
  return acc / static_cast<double>(items.size());
}

// ---------------------------------------------------------------------------
// Checkpoints: one archive holding the model parameters, Adam moments
// (opt.m.<name> / opt.v.<name>), and a metadata header.

template <class S>
inline void save_train_checkpoint(const std::string& path, const TUNet<S>& model,
                                  const nn::ParameterStore<S>& ps, const Adam<S>& opt,
                                  const TrainConfig& cfg, int epoch, long global_step,
                                  double best_val, const std::vector<std::string>& class_vocab) {
  nlohmann::json meta;
  meta["kind"] = "tunet_train";
  meta["epoch"] = epoch;
  meta["global_step"] = global_step;
  meta["best_val"] = best_val;
  meta["adam_step"] = opt.step_count();
  meta["camera_layout_version"] = kCameraVectorLayoutVersion;
  meta["train"] = train_config_to_json(cfg);
  meta["model"] = tunet_config_to_json(model.config());
  meta["classes"] = class_vocab;

  std::vector<std::pair<std::string, const Tensor<S>*>> tensors;
  for (int h = 0; h < ps.size(); ++h) tensors.emplace_back(ps.name(h), &ps.value(h));
  for (int h = 0; h < ps.size(); ++h)
    tensors.emplace_back("opt.m." + ps.name(h), &opt.first_moments()[static_cast<std::size_t>(h)]);
  for (int h = 0; h < ps.size(); ++h)
    tensors.emplace_back("opt.v." + ps.name(h), &opt.second_moments()[static_cast<std::size_t>(h)]);

  const std::string tmp = path + ".tmp";
  write_file(tmp, serialize_archive(meta, tensors));
  std::filesystem::rename(tmp, path);
}

struct ResumeState {
  int epoch = -1;  // last completed epoch
  long global_step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  nlohmann::json meta;
};

template <class S>
inline ResumeState load_train_checkpoint(const std::string& path, const TUNet<S>& model,
                                         nn::ParameterStore<S>& ps, Adam<S>& opt) {
  nlohmann::json meta;
  std::map<std::string, Tensor<S>> tensors;
  try {
    std::tie(meta, tensors) = deserialize_archive<S>(read_file(path));
    if (meta.at("kind").get<std::string>() != "tunet_train")
      throw DataError("archive kind is not tunet_train");
    const TUNetConfig stored = tunet_config_from_json(meta.at("model"));
    const nlohmann::json a = tunet_config_to_json(stored);
    const nlohmann::json b = tunet_config_to_json(model.config());
    if (a != b) throw DataError("checkpoint model config does not match the instantiated model");
    load_into_store(tensors, ps);
    for (int h = 0; h < ps.size(); ++h) {
      opt.first_moments()[static_cast<std::size_t>(h)] = tensors.at("opt.m." + ps.name(h));
      opt.second_moments()[static_cast<std::size_t>(h)] = tensors.at("opt.v." + ps.name(h));
    }
    opt.set_step_count(meta.at("adam_step").get<long>());
  } catch (const std::exception& e) {
    throw DataError("refusing to resume from '" + path + "': " + e.what());
  }
  ResumeState st;
  st.epoch = meta.at("epoch").get<int>();
  st.global_step = meta.at("global_step").get<long>();
  st.best_val = meta.at("best_val").get<double>();
  st.meta = meta;
  return st;
}

// ---------------------------------------------------------------------------
// The loop.

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double val = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<EpochStats> epochs;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::string best_path, last_path;
};

// Deterministic epoch order: a fresh engine from (seed, epoch) shuffles the
// pair indices; class substitution draws come from (seed, epoch, step).
inline std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  auto eng = make_engine(mix_seed(seed, 0xe50cULL, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), eng);
  return order;
}

template <class S>
inline TrainResult train_loop(const TrainConfig& cfg, const TUNet<S>& model,
                              nn::ParameterStore<S>& ps, const PairDataset<S>& data,
                              std::ostream* log = nullptr, const std::string& resume_path = "") {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train_loop: no training pairs");
  for (const auto& item : data.train)
    if (item.class_id < 0 || item.class_id >= model.config().cond.num_classes)
      throw ConfigError("train_loop: class id " + std::to_string(item.class_id) +
                        " outside the model's class table");

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  Adam<S> opt(ps);

  int start_epoch = 0;
  long gstep = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool resumed = false;
  if (!resume_path.empty()) {
    const ResumeState st = load_train_checkpoint(resume_path, model, ps, opt);
    start_epoch = st.epoch + 1;
    gstep = st.global_step;
    best_val = st.best_val;
    resumed = true;
    if (log) *log << "[latentview] resuming after epoch " << st.epoch << "\n";
  }

  const std::string csv_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  std::ofstream csv(csv_path, resumed ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("cannot open metrics csv: " + csv_path);
  if (!resumed) csv << "epoch,step,loss,lr,wall_time\n";

  {
    nlohmann::json run;
    run["train"] = train_config_to_json(cfg);
    run["model"] = tunet_config_to_json(model.config());
    run["skipped_scenes"] = data.skipped;
    run["train_pairs"] = data.train.size();
    run["val_pairs"] = data.val.size();
    write_file((fs::path(cfg.out_dir) / "run.json").string(), run.dump(2) + "\n");
  }

  TrainResult result;
  result.best_val = best_val;
  result.best_path = (fs::path(cfg.out_dir) / "best.tunc").string();
  result.last_path = (fs::path(cfg.out_dir) / "last.tunc").string();
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = cyclic_lr(cfg.learning_rate, epoch, cfg.epochs);
    const std::vector<int> order = epoch_order(data.train.size(), cfg.seed, epoch);

    double epoch_loss = 0.0;
    int epoch_steps = 0;
    for (std::size_t base = 0; base < order.size(); base += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), base + static_cast<std::size_t>(cfg.batch_size));
      auto sub_eng = make_engine(mix_seed(cfg.seed, 0xc1a5ULL,
                                          (static_cast<std::uint64_t>(epoch) << 32) |
                                              static_cast<std::uint64_t>(epoch_steps)));
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      std::vector<BatchSample<S>> batch;
      for (std::size_t i = base; i < end; ++i) {
        const PairItem<S>& item = data.train[static_cast<std::size_t>(order[i])];
        const int cls = u01(sub_eng) < cfg.generic_substitution ? 0 : item.class_id;
        batch.push_back({&item, cls});
      }
      const double loss = train_step(model, ps, opt, batch, cfg.t_star, lr);
      ++gstep;
      ++epoch_steps;
      epoch_loss += loss;
      result.step_losses.push_back(loss);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      csv << epoch << "," << gstep << "," << loss << "," << lr << "," << wall << "\n";
    }
    csv.flush();

    const double val = val_mse(model, ps, data.val, cfg.t_star);
    EpochStats es;
    es.epoch = epoch;
    es.mean_loss = epoch_loss / std::max(1, epoch_steps);
    es.val = val;
    es.lr = lr;
    result.epochs.push_back(es);
    if (log)
      *log << "[latentview] epoch " << epoch << "  loss " << es.mean_loss << "  val " << val
           << "  lr " << lr << "\n";

    const double val_for_best = std::isnan(val) ? es.mean_loss : val;
    if (val_for_best < result.best_val) {
      result.best_val = val_for_best;
      result.best_epoch = epoch;
      save_train_checkpoint(result.best_path, model, ps, opt, cfg, epoch, gstep, result.best_val,
                            data.class_vocab);
    }
    if ((epoch + 1) % std::max(1, cfg.checkpoint_every) == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.tunc", epoch);
      save_train_checkpoint((fs::path(cfg.out_dir) / name).string(), model, ps, opt, cfg, epoch,
                            gstep, result.best_val, data.class_vocab);
    }
    save_train_checkpoint(result.last_path, model, ps, opt, cfg, epoch, gstep, result.best_val,
                          data.class_vocab);
  }
  return result;
}

// Mean over a trailing window; the desk run's smoothed loss curve is checked
// to be non-increasing with this smoothing.
inline std::vector<double> smoothed_losses(const std::vector<double>& losses, int window = 10) {
  std::vector<double> out;
  if (window < 1) throw std::invalid_argument("smoothed_losses: window must be >= 1");
  double acc = 0.0;
  std::deque<double> buf;
  for (double v : losses) {
    buf.push_back(v);
    acc += v;
    if (static_cast<int>(buf.size()) > window) {
      acc -= buf.front();
      buf.pop_front();
    }
    out.push_back(acc / static_cast<double>(buf.size()));
  }
  return out;
}

}  // namespace latentview
