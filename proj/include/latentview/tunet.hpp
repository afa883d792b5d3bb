// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Translation U-Net: maps a reference view's inverted-latent mean to the
// target view's, conditioned on cameras, class ids, rays, and the timestep.
// Down blocks see only reference conditioning, the mid block sees both views,
// up blocks see only target conditioning; cross-attention against the
// reference latent runs in the mid block and once per up stage.

#pragma once

#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "latentview/camera.hpp"
#include "latentview/conditioning.hpp"
#include "latentview/nn.hpp"
#include "latentview/tensor.hpp"

namespace latentview {

struct TUNetConfig {
  int in_channels = 4;
  int latent_grid = 64;
  int base_width = 192;
  std::vector<int> channel_mult = {1, 2, 3, 4};
  int res_blocks_per_stage = 2;
  int attn_dim = 768;
  int head_dim = 64;
  ConditioningConfig cond;
  enum class HeadInit { kZero, kRandom };
  HeadInit head_init = HeadInit::kZero;

  int num_stages() const { return static_cast<int>(channel_mult.size()); }
  int width(int stage) const { return base_width * channel_mult[static_cast<std::size_t>(stage)]; }
  int grid_at(int stage) const { return latent_grid >> stage; }

  // Largest model: tuned so the total parameter count sits near the 148M
  // budget. Multipliers started at (1,2,4,4) and were reduced to fit.
  static TUNetConfig paper_preset() {
    TUNetConfig c;
    c.in_channels = 4;
    c.latent_grid = 64;
    c.base_width = 192;
    c.channel_mult = {1, 2, 3, 4};
    c.res_blocks_per_stage = 2;
    c.attn_dim = 768;
    c.head_dim = 64;
    return c;
  }

  // Small CPU-trainable model.
  static TUNetConfig desk_preset() {
    TUNetConfig c;
    c.in_channels = 4;
    c.latent_grid = 16;
    c.base_width = 64;
    c.channel_mult = {1, 2};
    c.res_blocks_per_stage = 1;
    c.attn_dim = 128;
    c.head_dim = 32;
    return c;
  }

  void validate() const {
    cond.validate();
    if (in_channels <= 0 || latent_grid <= 0 || base_width <= 0 || res_blocks_per_stage <= 0)
      throw std::invalid_argument("tunet config: dims must be positive");
    if (channel_mult.empty()) throw std::invalid_argument("tunet config: need at least one stage");
    if (attn_dim % head_dim != 0)
      throw std::invalid_argument("tunet config: attn_dim not divisible by head_dim");
    const int heads = attn_dim / head_dim;
    for (int i = 0; i < num_stages(); ++i) {
      if (width(i) % heads != 0)
        throw std::invalid_argument("tunet config: stage width not divisible by head count");
      if ((latent_grid >> i) << i != latent_grid || (latent_grid >> i) < 1)
        throw std::invalid_argument("tunet config: latent grid too small for stage count");
    }
  }
};

namespace detail {

// GroupNorm -> SiLU -> conv3x3, twice, with an identity (or 1x1 conv)
// shortcut. Width changes are carried by conv1 and the shortcut.
template <class S>
struct ResBlock {
  int cin = 0, cout = 0;
  nn::GroupNorm<S> gn1, gn2;
  nn::Conv2d<S> conv1, conv2;
  bool has_shortcut = false;
  nn::Conv2d<S> shortcut;

  ResBlock() = default;
  ResBlock(nn::ParameterStore<S>& ps, const std::string& prefix, int in_ch, int out_ch)
      : cin(in_ch), cout(out_ch),
        gn1(ps, prefix + ".gn1", in_ch),
        gn2(ps, prefix + ".gn2", out_ch),
        conv1(ps, prefix + ".conv1", in_ch, out_ch, 3),
        conv2(ps, prefix + ".conv2", out_ch, out_ch, 3),
        has_shortcut(in_ch != out_ch) {
    if (has_shortcut) shortcut = nn::Conv2d<S>(ps, prefix + ".shortcut", in_ch, out_ch, 1);
  }

  struct Cache {
    typename nn::GroupNorm<S>::Cache gn1c, gn2c;
    typename nn::SiLU<S>::Cache s1c, s2c;
    typename nn::Conv2d<S>::Cache c1c, c2c, shc;
  };

  Tensor<S> forward(const nn::ParameterStore<S>& ps, const Tensor<S>& x,
                    Cache* cache = nullptr) const {
    Tensor<S> h = gn1.forward(ps, x, cache ? &cache->gn1c : nullptr);
    h = nn::SiLU<S>::forward(h, cache ? &cache->s1c : nullptr);
    h = conv1.forward(ps, h, cache ? &cache->c1c : nullptr);
    h = gn2.forward(ps, h, cache ? &cache->gn2c : nullptr);
    h = nn::SiLU<S>::forward(h, cache ? &cache->s2c : nullptr);
    h = conv2.forward(ps, h, cache ? &cache->c2c : nullptr);
    Tensor<S> sc = has_shortcut ? shortcut.forward(ps, x, cache ? &cache->shc : nullptr) : x;
    axpy(S(1), sc, h);
    return h;
  }

  Tensor<S> backward(nn::ParameterStore<S>& ps, const Tensor<S>& dy, const Cache& cache) const {
    Tensor<S> d = conv2.backward(ps, dy, cache.c2c);
    d = nn::SiLU<S>::backward(d, cache.s2c);
    d = gn2.backward(ps, d, cache.gn2c);
    d = conv1.backward(ps, d, cache.c1c);
    d = nn::SiLU<S>::backward(d, cache.s1c);
    d = gn1.backward(ps, d, cache.gn1c);
    Tensor<S> dsc = has_shortcut ? shortcut.backward(ps, dy, cache.shc) : dy;
    axpy(S(1), dsc, d);
    return d;
  }
};

// Residual block with the stage conditioning vector broadcast-added to its
// input through a learnable projection.
template <class S>
struct CondResBlock {
  StageProjection<S> proj;
  ResBlock<S> res;

  CondResBlock() = default;
  CondResBlock(nn::ParameterStore<S>& ps, const std::string& prefix, int in_ch, int out_ch,
               int cond_width)
      : proj(ps, prefix + ".proj", cond_width, in_ch), res(ps, prefix, in_ch, out_ch) {}

  struct Cache {
    typename StageProjection<S>::Cache pc;
    typename ResBlock<S>::Cache rc;
  };

  Tensor<S> forward(const nn::ParameterStore<S>& ps, const Tensor<S>& x, const Tensor<S>& cond,
                    Cache* cache = nullptr) const {
    Tensor<S> h = proj.inject(ps, x, cond, cache ? &cache->pc : nullptr);
    return res.forward(ps, h, cache ? &cache->rc : nullptr);
  }

  // Returns dx; the conditioning gradient is accumulated into dcond.
  Tensor<S> backward(nn::ParameterStore<S>& ps, const Tensor<S>& dy, const Cache& cache,
                     Tensor<S>& dcond) const {
    Tensor<S> dh = res.backward(ps, dy, cache.rc);
    Tensor<S> dc = proj.backward_cond(ps, dh, cache.pc);
    axpy(S(1), dc, dcond);
    return dh;
  }
};

}  // namespace detail

template <class S>
class TUNet {
 public:
  TUNet(nn::ParameterStore<S>& ps, const TUNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int n = cfg_.num_stages();
    const int rb = cfg_.res_blocks_per_stage;
    const int dw = stage_cond_width(Stage::kDown, cfg_.cond);
    const int mw = stage_cond_width(Stage::kMid, cfg_.cond);
    const int uw = stage_cond_width(Stage::kUp, cfg_.cond);

    embedder_ = ConditioningEmbedder<S>(ps, cfg_.cond);
    stem_ = nn::Conv2d<S>(ps, "stem", cfg_.in_channels, cfg_.width(0), 3);

    for (int i = 0; i < n; ++i) {
      if (i > 0)
        trans_.emplace_back(ps, "trans." + std::to_string(i - 1), cfg_.width(i - 1), cfg_.width(i),
                            3, 2);
      for (int b = 0; b < rb; ++b)
        down_.emplace_back(ps, "down." + std::to_string(i) + "." + std::to_string(b), cfg_.width(i),
                           cfg_.width(i), dw);
    }

    const int wm = cfg_.width(n - 1);
    mid1_ = detail::CondResBlock<S>(ps, "mid.res0", wm, wm, mw);
    mid_attn_ = nn::CrossAttention<S>(ps, "mid.attn", wm, cfg_.in_channels, cfg_.attn_dim,
                                      cfg_.head_dim);
    mid2_ = detail::CondResBlock<S>(ps, "mid.res1", wm, wm, mw);

    upconv_.resize(static_cast<std::size_t>(n > 1 ? n - 1 : 0));
    for (int j = n - 1; j >= 0; --j) {
      for (int b = 0; b < rb; ++b) {
        const int cur = (b == 0) ? entry_width(j) : cfg_.width(j);
        up_.emplace_back(ps, "up." + std::to_string(j) + "." + std::to_string(b),
                         cur + cfg_.width(j), cfg_.width(j), uw);
      }
      up_attn_.emplace_back(ps, "up." + std::to_string(j) + ".attn", cfg_.width(j),
                            cfg_.in_channels, cfg_.attn_dim, cfg_.head_dim);
      if (j > 0)
        upconv_[static_cast<std::size_t>(j - 1)] =
            nn::Conv2d<S>(ps, "upconv." + std::to_string(j - 1), cfg_.width(j), cfg_.width(j), 3);
    }

    head_gn_ = nn::GroupNorm<S>(ps, "head.gn", cfg_.width(0));
    head_conv_ = nn::Conv2d<S>(
        ps, "head.out", cfg_.width(0), cfg_.in_channels, 3, 1,
        cfg_.head_init == TUNetConfig::HeadInit::kZero ? nn::Init::kZero : nn::Init::kFanInNormal);
  }

  const TUNetConfig& config() const { return cfg_; }
  const ConditioningEmbedder<S>& embedder() const { return embedder_; }

  struct Cache {
    int class_ref = 0, class_tar = 0;
    typename ConditioningEmbedder<S>::CameraCache cam_ref_c, cam_tar_c;
    Tensor<S> down_cond, mid_cond, up_cond;
    typename nn::Conv2d<S>::Cache stem_c;
    std::vector<typename detail::CondResBlock<S>::Cache> down_c;
    std::vector<typename nn::Conv2d<S>::Cache> trans_c;
    typename detail::CondResBlock<S>::Cache mid1_c, mid2_c;
    typename nn::CrossAttention<S>::Cache mid_attn_c;
    std::vector<typename nn::Conv2d<S>::Cache> upconv_c;  // indexed by stage j
    std::vector<typename detail::CondResBlock<S>::Cache> up_c;  // execution order
    std::vector<int> up_cur_width;                              // per up block, for the split
    std::vector<typename nn::CrossAttention<S>::Cache> up_attn_c;  // execution order
    typename nn::GroupNorm<S>::Cache head_gn_c;
    typename nn::SiLU<S>::Cache head_silu_c;
    typename nn::Conv2d<S>::Cache head_conv_c;
    std::vector<Tensor<S>> down_outputs;  // per down block, for invariance checks
  };

  Tensor<S> forward(const nn::ParameterStore<S>& ps, const Tensor<S>& z_ref_mu,
                    const Camera& cam_ref, const Camera& cam_tar, int class_ref, int class_tar,
                    int t, Cache* cache = nullptr) const {
    if (z_ref_mu.rank() != 3 || z_ref_mu.dim(0) != cfg_.in_channels ||
        z_ref_mu.dim(1) != cfg_.latent_grid || z_ref_mu.dim(2) != cfg_.latent_grid)
      throw std::invalid_argument("tunet: latent shape does not match config");
    cam_ref.validate();
    cam_tar.validate();

    const int n = cfg_.num_stages();
    const int rb = cfg_.res_blocks_per_stage;

    Tensor<S> gamma = embedder_.embed_time(t);
    Tensor<S> e_cam_ref =
        embedder_.embed_camera(ps, vectorize_camera(cam_ref), cache ? &cache->cam_ref_c : nullptr);
    Tensor<S> e_cam_tar =
        embedder_.embed_camera(ps, vectorize_camera(cam_tar), cache ? &cache->cam_tar_c : nullptr);
    Tensor<S> e_cls_ref = embedder_.embed_class(ps, class_ref);
    Tensor<S> e_cls_tar = embedder_.embed_class(ps, class_tar);

    Tensor<S> down_cond = concat_vecs<S>({&gamma, &e_cam_ref, &e_cls_ref});
    Tensor<S> mid_cond = concat_vecs<S>({&gamma, &e_cam_ref, &e_cam_tar, &e_cls_tar});
    Tensor<S> up_cond = concat_vecs<S>({&gamma, &e_cam_tar, &e_cls_tar});

    if (cache) {
      cache->class_ref = class_ref;
      cache->class_tar = class_tar;
      cache->down_cond = down_cond;
      cache->mid_cond = mid_cond;
      cache->up_cond = up_cond;
      cache->down_c.resize(down_.size());
      cache->trans_c.resize(trans_.size());
      cache->upconv_c.resize(upconv_.size());
      cache->up_c.resize(up_.size());
      cache->up_cur_width.assign(up_.size(), 0);
      cache->up_attn_c.resize(up_attn_.size());
      cache->down_outputs.clear();
    }

    Tensor<S> x = stem_.forward(ps, z_ref_mu, cache ? &cache->stem_c : nullptr);
    std::vector<Tensor<S>> skips;
    skips.reserve(down_.size());
    int k = 0;
    for (int i = 0; i < n; ++i) {
      if (i > 0)
        x = trans_[static_cast<std::size_t>(i - 1)].forward(
            ps, x, cache ? &cache->trans_c[static_cast<std::size_t>(i - 1)] : nullptr);
      for (int b = 0; b < rb; ++b, ++k) {
        x = down_[static_cast<std::size_t>(k)].forward(
            ps, x, down_cond, cache ? &cache->down_c[static_cast<std::size_t>(k)] : nullptr);
        skips.push_back(x);
        if (cache) cache->down_outputs.push_back(x);
      }
    }

    x = mid1_.forward(ps, x, mid_cond, cache ? &cache->mid1_c : nullptr);
    {
      const int g = cfg_.grid_at(n - 1);
      auto [r_tar, r_ref, z_kv] = attention_inputs(z_ref_mu, cam_ref, cam_tar, g);
      x = mid_attn_.forward(ps, x, r_tar, r_ref, z_kv, cache ? &cache->mid_attn_c : nullptr);
    }
    x = mid2_.forward(ps, x, mid_cond, cache ? &cache->mid2_c : nullptr);

    int u = 0;
    for (int j = n - 1; j >= 0; --j) {
      if (j < n - 1) {
        x = nn::upsample_nearest2x(x);
        x = upconv_[static_cast<std::size_t>(j)].forward(
            ps, x, cache ? &cache->upconv_c[static_cast<std::size_t>(j)] : nullptr);
      }
      for (int b = 0; b < rb; ++b, ++u) {
        const int cur = x.dim(0);
        Tensor<S> cat = nn::concat_channels(x, skips.back());
        skips.pop_back();
        x = up_[static_cast<std::size_t>(u)].forward(
            ps, cat, up_cond, cache ? &cache->up_c[static_cast<std::size_t>(u)] : nullptr);
        if (cache) cache->up_cur_width[static_cast<std::size_t>(u)] = cur;
      }
      {
        const int g = cfg_.grid_at(j);
        auto [r_tar, r_ref, z_kv] = attention_inputs(z_ref_mu, cam_ref, cam_tar, g);
        x = up_attn_[static_cast<std::size_t>(n - 1 - j)].forward(
            ps, x, r_tar, r_ref, z_kv,
            cache ? &cache->up_attn_c[static_cast<std::size_t>(n - 1 - j)] : nullptr);
      }
    }

    Tensor<S> h = head_gn_.forward(ps, x, cache ? &cache->head_gn_c : nullptr);
    h = nn::SiLU<S>::forward(h, cache ? &cache->head_silu_c : nullptr);
    h = head_conv_.forward(ps, h, cache ? &cache->head_conv_c : nullptr);
    axpy(S(1), z_ref_mu, h);
    return h;
  }

  // Accumulates parameter gradients for d(loss)/d(output) = d_out. The input
  // latent is data, so its gradient is not returned.
  void backward(nn::ParameterStore<S>& ps, const Tensor<S>& d_out, const Cache& cache) const {
    const int n = cfg_.num_stages();
    const int rb = cfg_.res_blocks_per_stage;

    Tensor<S> d = head_conv_.backward(ps, d_out, cache.head_conv_c);
    d = nn::SiLU<S>::backward(d, cache.head_silu_c);
    d = head_gn_.backward(ps, d, cache.head_gn_c);

    Tensor<S> d_down_cond(cache.down_cond.shape());
    Tensor<S> d_mid_cond(cache.mid_cond.shape());
    Tensor<S> d_up_cond(cache.up_cond.shape());
    std::vector<Tensor<S>> dskips(down_.size());

    // Up path, reverse execution order: stage 0 first.
    for (int j = 0; j < n; ++j) {
      d = up_attn_[static_cast<std::size_t>(n - 1 - j)].backward(
          ps, d, cache.up_attn_c[static_cast<std::size_t>(n - 1 - j)]);
      for (int b = rb - 1; b >= 0; --b) {
        const int u = (n - 1 - j) * rb + b;
        Tensor<S> d_cat = up_[static_cast<std::size_t>(u)].backward(
            ps, d, cache.up_c[static_cast<std::size_t>(u)], d_up_cond);
        auto [d_cur, d_skip] =
            nn::split_channels(d_cat, cache.up_cur_width[static_cast<std::size_t>(u)]);
        d = std::move(d_cur);
        // Up block u consumed skip id j*rb + (rb-1-b).
        dskips[static_cast<std::size_t>(j * rb + (rb - 1 - b))] = std::move(d_skip);
      }
      if (j < n - 1) {
        d = upconv_[static_cast<std::size_t>(j)].backward(
            ps, d, cache.upconv_c[static_cast<std::size_t>(j)]);
        d = nn::upsample_nearest2x_backward(d);
      }
    }

    d = mid2_.backward(ps, d, cache.mid2_c, d_mid_cond);
    d = mid_attn_.backward(ps, d, cache.mid_attn_c);
    d = mid1_.backward(ps, d, cache.mid1_c, d_mid_cond);

    // Down path reversed; each block's output also fed its skip.
    for (int i = n - 1; i >= 0; --i) {
      for (int b = rb - 1; b >= 0; --b) {
        const int k = i * rb + b;
        axpy(S(1), dskips[static_cast<std::size_t>(k)], d);
        d = down_[static_cast<std::size_t>(k)].backward(
            ps, d, cache.down_c[static_cast<std::size_t>(k)], d_down_cond);
      }
      if (i > 0)
        d = trans_[static_cast<std::size_t>(i - 1)].backward(
            ps, d, cache.trans_c[static_cast<std::size_t>(i - 1)]);
    }
    stem_.backward(ps, d, cache.stem_c);

    // Route stage conditioning gradients back to the shared embedders.
    const auto& cc = cfg_.cond;
    Tensor<S> d_cam_ref({cc.d_cam}), d_cam_tar({cc.d_cam});
    Tensor<S> d_cls_ref({cc.d_cls}), d_cls_tar({cc.d_cls});
    slice_add(d_down_cond, cc.d_time, d_cam_ref);
    slice_add(d_down_cond, cc.d_time + cc.d_cam, d_cls_ref);
    slice_add(d_mid_cond, cc.d_time, d_cam_ref);
    slice_add(d_mid_cond, cc.d_time + cc.d_cam, d_cam_tar);
    slice_add(d_mid_cond, cc.d_time + 2 * cc.d_cam, d_cls_tar);
    slice_add(d_up_cond, cc.d_time, d_cam_tar);
    slice_add(d_up_cond, cc.d_time + cc.d_cam, d_cls_tar);
    embedder_.embed_camera_backward(ps, d_cam_ref, cache.cam_ref_c);
    embedder_.embed_camera_backward(ps, d_cam_tar, cache.cam_tar_c);
    embedder_.embed_class_backward(ps, cache.class_ref, d_cls_ref);
    embedder_.embed_class_backward(ps, cache.class_tar, d_cls_tar);
  }

  // Parameter count for a config without allocating any tensors.
  static std::size_t parameter_count(const TUNetConfig& cfg) {
    nn::ParameterStore<S> ps(0, /*allocate=*/false);
    TUNet<S> net(ps, cfg);
    return ps.parameter_count();
  }

 private:
  int entry_width(int j) const {
    return j == cfg_.num_stages() - 1 ? cfg_.width(j) : cfg_.width(j + 1);
  }

  std::tuple<Tensor<S>, Tensor<S>, Tensor<S>> attention_inputs(const Tensor<S>& z_ref_mu,
                                                               const Camera& cam_ref,
                                                               const Camera& cam_tar,
                                                               int grid) const {
    Tensor<S> r_tar = embed_rays<S>(compute_rays(cam_tar, grid, grid));
    Tensor<S> r_ref = embed_rays<S>(compute_rays(cam_ref, grid, grid));
    const int factor = cfg_.latent_grid / grid;
    Tensor<S> z_kv = factor == 1 ? z_ref_mu : nn::avg_pool(z_ref_mu, factor);
    return {std::move(r_tar), std::move(r_ref), std::move(z_kv)};
  }

  static void slice_add(const Tensor<S>& src, int offset, Tensor<S>& dst) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[static_cast<std::size_t>(offset) + i];
  }

  TUNetConfig cfg_;
  ConditioningEmbedder<S> embedder_;
  nn::Conv2d<S> stem_;
  std::vector<nn::Conv2d<S>> trans_;
  std::vector<detail::CondResBlock<S>> down_;
  detail::CondResBlock<S> mid1_, mid2_;
  nn::CrossAttention<S> mid_attn_;
  std::vector<nn::Conv2d<S>> upconv_;
  std::vector<detail::CondResBlock<S>> up_;      // execution order: last stage first
  std::vector<nn::CrossAttention<S>> up_attn_;   // execution order
  nn::GroupNorm<S> head_gn_;
  nn::Conv2d<S> head_conv_;
};

}  // namespace latentview
