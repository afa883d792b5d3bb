// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Concrete diffusion priors: a small trainable conv net for desk-scale work
// and a file-backed adapter standing in for an external pretrained backbone.
// Both sit behind the DiffusionPrior interface; nothing downstream knows the
// difference.

#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentview/checkpoint.hpp"
#include "latentview/common.hpp"
#include "latentview/engine.hpp"
#include "latentview/optim.hpp"
#include "latentview/schedule.hpp"
#include "latentview/tunet.hpp"

namespace latentview {

struct ToyPriorConfig {
  std::array<int, 3> latent_shape = {4, 16, 16};
  int width = 48;
  int depth = 2;
  int d_time = 64;
  int num_train_steps = 1000;  // schedule length the prior was trained against
  // Training knobs.
  int train_steps = 2000;
  int batch_size = 16;
  double lr = 2e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (latent_shape[0] < 1 || latent_shape[1] < 1 || latent_shape[2] < 1)
      throw std::invalid_argument("toy prior: bad latent shape");
    if (width < 1 || depth < 1 || d_time < 2 || d_time % 2 != 0)
      throw std::invalid_argument("toy prior: bad net dims");
    if (train_steps < 1 || batch_size < 1 || lr <= 0)
      throw std::invalid_argument("toy prior: bad training config");
  }

  nlohmann::json to_json() const {
    return {{"latent_shape", latent_shape}, {"width", width},        {"depth", depth},
            {"d_time", d_time},            {"num_train_steps", num_train_steps},
            {"train_steps", train_steps},  {"batch_size", batch_size},
            {"lr", lr},                    {"seed", seed}};
  }

  static ToyPriorConfig from_json(const nlohmann::json& j) {
    ToyPriorConfig c;
    const auto shape = j.at("latent_shape").get<std::vector<int>>();
    if (shape.size() != 3) throw DataError("toy prior: bad latent shape in header");
    c.latent_shape = {shape[0], shape[1], shape[2]};
    c.width = j.at("width").get<int>();
    c.depth = j.at("depth").get<int>();
    c.d_time = j.at("d_time").get<int>();
    c.num_train_steps = j.at("num_train_steps").get<int>();
    c.train_steps = j.value("train_steps", c.train_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
  }
};

// Epsilon-predictor: conv stem, `depth` time-conditioned residual blocks, and
// a zero-initialized output conv (so the untrained prior predicts zero noise).
template <class S>
class ToyPrior : public DiffusionPrior<S> {
 public:
  explicit ToyPrior(const ToyPriorConfig& cfg, std::uint64_t init_seed = 1)
      : cfg_(cfg), ps_(init_seed) {
    cfg_.validate();
    build();
    refresh_id();
  }

  LatentGrid<S> predict_noise(const LatentGrid<S>& z, int t) const override {
    check_input(z, t);
    Tensor<S> gamma = time_embedding<S>(t, cfg_.d_time);
    Tensor<S> x = stem_.forward(ps_, z);
    for (const auto& blk : blocks_) x = blk.forward(ps_, x, gamma);
    x = out_gn_.forward(ps_, x);
    x = nn::SiLU<S>::forward(x);
    return out_conv_.forward(ps_, x);
  }

  std::array<int, 3> latent_shape() const override { return cfg_.latent_shape; }
  int num_train_steps() const override { return cfg_.num_train_steps; }
  std::string id() const override { return id_; }

  const ToyPriorConfig& config() const { return cfg_; }
  nn::ParameterStore<S>& params() { return ps_; }
  const nn::ParameterStore<S>& params() const { return ps_; }

  // One training forward/backward on a single sample; returns the per-sample
  // MSE. Gradients accumulate in the store.
  double accumulate_loss_grad(const LatentGrid<S>& x_t, int t, const LatentGrid<S>& eps_target,
                              double grad_scale) {
    check_input(x_t, t);
    Tensor<S> gamma = time_embedding<S>(t, cfg_.d_time);
    typename nn::Conv2d<S>::Cache stem_c, out_c;
    typename nn::GroupNorm<S>::Cache gn_c;
    typename nn::SiLU<S>::Cache silu_c;
    std::vector<typename detail::CondResBlock<S>::Cache> blk_c(blocks_.size());

    Tensor<S> x = stem_.forward(ps_, x_t, &stem_c);
    for (std::size_t b = 0; b < blocks_.size(); ++b) x = blocks_[b].forward(ps_, x, gamma, &blk_c[b]);
    x = out_gn_.forward(ps_, x, &gn_c);
    x = nn::SiLU<S>::forward(x, &silu_c);
    Tensor<S> pred = out_conv_.forward(ps_, x, &out_c);

    const double mse = mean_squared_error(pred, eps_target);
    Tensor<S> d(pred.shape());
    const double k = 2.0 * grad_scale / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < d.numel(); ++i)
      d[i] = static_cast<S>(k * (static_cast<double>(pred[i]) - static_cast<double>(eps_target[i])));

    d = out_conv_.backward(ps_, d, out_c);
    d = nn::SiLU<S>::backward(d, silu_c);
    d = out_gn_.backward(ps_, d, gn_c);
    Tensor<S> dgamma({cfg_.d_time});
    for (std::size_t b = blocks_.size(); b-- > 0;)
      d = blocks_[b].backward(ps_, d, blk_c[b], dgamma);
    stem_.backward(ps_, d, stem_c);
    return mse;
  }

  void refresh_id() { id_ = "toy:" + sha256_hex(serialize()).substr(0, 12); }

  std::string serialize() const {
    nlohmann::json meta;
    meta["kind"] = "toy_prior";
    meta["config"] = cfg_.to_json();
    std::vector<std::pair<std::string, const Tensor<S>*>> tensors;
    for (int h = 0; h < ps_.size(); ++h) tensors.emplace_back(ps_.name(h), &ps_.value(h));
    return serialize_archive<S>(meta, tensors);
  }

  void save(const std::string& path) const { write_file(path, serialize()); }

  static std::unique_ptr<ToyPrior<S>> load(const std::string& path) {
    auto [meta, tensors] = deserialize_archive<S>(read_file(path));
    if (meta.value("kind", "") != "toy_prior") throw DataError("toy prior: wrong artifact kind");
    auto prior = std::make_unique<ToyPrior<S>>(ToyPriorConfig::from_json(meta.at("config")));
    load_into_store(tensors, prior->ps_);
    prior->refresh_id();
    return prior;
  }

 private:
  void build() {
    const int c = cfg_.latent_shape[0];
    stem_ = nn::Conv2d<S>(ps_, "stem", c, cfg_.width, 3);
    for (int b = 0; b < cfg_.depth; ++b)
      blocks_.emplace_back(ps_, "block." + std::to_string(b), cfg_.width, cfg_.width, cfg_.d_time);
    out_gn_ = nn::GroupNorm<S>(ps_, "out.gn", cfg_.width);
    out_conv_ = nn::Conv2d<S>(ps_, "out.conv", cfg_.width, c, 3, 1, nn::Init::kZero);
  }

  void check_input(const LatentGrid<S>& z, int t) const {
    if (z.rank() != 3 || z.dim(0) != cfg_.latent_shape[0] || z.dim(1) != cfg_.latent_shape[1] ||
        z.dim(2) != cfg_.latent_shape[2])
      throw std::invalid_argument("toy prior: latent shape mismatch");
    if (t < 0 || t > cfg_.num_train_steps)
      throw std::invalid_argument("toy prior: timestep out of range");
  }

  ToyPriorConfig cfg_;
  nn::ParameterStore<S> ps_;
  nn::Conv2d<S> stem_;
  std::vector<detail::CondResBlock<S>> blocks_;
  nn::GroupNorm<S> out_gn_;
  nn::Conv2d<S> out_conv_;
  std::string id_;
};

// Standard denoising objective: corrupt clean latents with scheduled noise at
// a random timestep and regress the noise. Divergence aborts with the full
// seed/config dump so the run can be reproduced.
template <class S>
std::unique_ptr<ToyPrior<S>> train_toy_prior(const ToyPriorConfig& cfg,
                                             const std::vector<LatentGrid<S>>& latents,
                                             const NoiseSchedule& schedule,
                                             double* final_loss = nullptr) {
  cfg.validate();
  if (latents.size() < 100)
    throw std::invalid_argument("train_toy_prior: need at least 100 latent samples, got " +
                                std::to_string(latents.size()));
  if (schedule.num_train_steps() != cfg.num_train_steps)
    throw std::invalid_argument("train_toy_prior: schedule length does not match config");

  auto prior = std::make_unique<ToyPrior<S>>(cfg, mix_seed(cfg.seed, 0x701'F00D));
  Adam<S> opt(prior->params(), AdamConfig{});

  double loss = 0;
  for (int step = 0; step < cfg.train_steps; ++step) {
    auto eng = make_engine(mix_seed(cfg.seed, 0x7071, static_cast<std::uint64_t>(step)));
    std::uniform_int_distribution<std::size_t> pick(0, latents.size() - 1);
    std::uniform_int_distribution<int> pick_t(1, schedule.num_train_steps() - 1);

    prior->params().zero_grads();
    loss = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const LatentGrid<S>& z0 = latents[pick(eng)];
      const int t = pick_t(eng);
      LatentGrid<S> eps = LatentGrid<S>::randn(z0.shape(), eng);
      LatentGrid<S> x_t = forward_diffuse(z0, t, eps, schedule);
      loss += prior->accumulate_loss_grad(x_t, t, eps, 1.0 / cfg.batch_size);
    }
    loss /= cfg.batch_size;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "train_toy_prior: loss diverged at step " << step << "; seed=" << cfg.seed
          << " config=" << cfg.to_json().dump();
      throw NumericalError(msg.str());
    }
    opt.step(prior->params(), cfg.lr);
  }
  prior->refresh_id();
  if (final_loss) *final_loss = loss;
  return prior;
}

// ---------------------------------------------------------------------------
// External backbone adapter. The backbone ships as a local artifact in the
// same archive format with kind "backbone"; the adapter exposes it through
// DiffusionPrior with null text conditioning and never touches its weights.

template <class S>
class ExternalPriorAdapter : public DiffusionPrior<S> {
 public:
  explicit ExternalPriorAdapter(const std::string& locator) {
    std::string bytes;
    try {
      bytes = read_file(locator);
    } catch (const DataError&) {
      throw ConfigError(
          "external prior: backbone artifact not found at '" + locator +
          "'. Place the backbone archive there (no network retrieval is performed); "
          "desk-scale runs can use a saved toy prior re-tagged as kind=backbone.");
    }
    auto [meta, tensors] = deserialize_archive<S>(bytes);
    const std::string kind = meta.value("kind", "");
    if (kind != "backbone" && kind != "toy_prior")
      throw ConfigError("external prior: artifact at '" + locator + "' has kind '" + kind +
                        "', expected a backbone archive");
    inner_ = std::make_unique<ToyPrior<S>>(ToyPriorConfig::from_json(meta.at("config")));
    load_into_store(tensors, inner_->params());
    inner_->refresh_id();
    backbone_id_ = meta.value("backbone_id", std::string("local"));
    id_ = "external:" + backbone_id_ + ":" + sha256_hex(bytes).substr(0, 12);
  }

  LatentGrid<S> predict_noise(const LatentGrid<S>& z, int t) const override {
    return inner_->predict_noise(z, t);
  }
  std::array<int, 3> latent_shape() const override { return inner_->latent_shape(); }
  int num_train_steps() const override { return inner_->num_train_steps(); }
  std::string id() const override { return id_; }
  const std::string& backbone_id() const { return backbone_id_; }

 private:
  std::unique_ptr<ToyPrior<S>> inner_;
  std::string backbone_id_;
  std::string id_;
};

// Writes a backbone-format artifact (used by tests and by desk-scale runs
// that want to exercise the adapter path).
template <class S>
void write_backbone_artifact(const std::string& path, const ToyPrior<S>& prior,
                             const std::string& backbone_id) {
  nlohmann::json meta;
  meta["kind"] = "backbone";
  meta["config"] = prior.config().to_json();
  meta["backbone_id"] = backbone_id;
  std::vector<std::pair<std::string, const Tensor<S>*>> tensors;
  const auto& ps = prior.params();
  for (int h = 0; h < ps.size(); ++h) tensors.emplace_back(ps.name(h), &ps.value(h));
  write_file(path, serialize_archive<S>(meta, tensors));
}

}  // namespace latentview
