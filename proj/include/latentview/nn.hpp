// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal neural-net layer library with hand-written backward passes.
// Layers are lightweight descriptors holding parameter handles into a
// ParameterStore; forward is const over the store so concurrent inference is
// safe, and every layer keeps its per-call state in an explicit Cache.

#pragma once

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latentview/tensor.hpp"

namespace latentview::nn {

enum class Init { kZero, kOne, kFanInNormal, kNormal02 };

template <class S>
struct Param {
  std::string name;
  std::vector<int> shape;
  Tensor<S> value;
  Tensor<S> grad;
};

// Owns every parameter tensor of a model plus its gradient buffer. In
// layout-only mode shapes are recorded but nothing is allocated, which is how
// parameter budgets are checked without building a full model.
template <class S>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, bool allocate = true)
      : allocate_(allocate), eng_(make_engine(seed)) {}

  int add(std::string name, std::vector<int> shape, Init init, int fan_in = 1) {
    Param<S> p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    if (allocate_) {
      p.value = Tensor<S>(p.shape);
      p.grad = Tensor<S>(p.shape);
      init_values(p.value, init, fan_in);
    }
    params_.push_back(std::move(p));
    return static_cast<int>(params_.size()) - 1;
  }

  Tensor<S>& value(int h) { return params_[static_cast<std::size_t>(h)].value; }
  const Tensor<S>& value(int h) const { return params_[static_cast<std::size_t>(h)].value; }
  Tensor<S>& grad(int h) { return params_[static_cast<std::size_t>(h)].grad; }
  const std::string& name(int h) const { return params_[static_cast<std::size_t>(h)].name; }
  const std::vector<int>& shape(int h) const { return params_[static_cast<std::size_t>(h)].shape; }

  int size() const { return static_cast<int>(params_.size()); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += Tensor<S>::numel_of(p.shape);
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(S(0));
  }

  double grad_squared_norm() const {
    double acc = 0;
    for (const auto& p : params_) acc += squared_norm(p.grad);
    return acc;
  }

  void scale_grads(S s) {
    for (auto& p : params_)
      for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] *= s;
  }

 private:
  void init_values(Tensor<S>& v, Init init, int fan_in) {
    switch (init) {
      case Init::kZero:
        v.fill(S(0));
        break;
      case Init::kOne:
        v.fill(S(1));
        break;
      case Init::kFanInNormal: {
        std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / std::max(1, fan_in)));
        for (std::size_t i = 0; i < v.numel(); ++i) v[i] = static_cast<S>(dist(eng_));
        break;
      }
      case Init::kNormal02: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (std::size_t i = 0; i < v.numel(); ++i) v[i] = static_cast<S>(dist(eng_));
        break;
      }
    }
  }

  bool allocate_;
  std::mt19937_64 eng_;
  std::vector<Param<S>> params_;
};

// ---------------------------------------------------------------------------
// Shape utilities.

template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: incompatible shapes");
  Tensor<S> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::memcpy(out.data(), a.data(), a.numel() * sizeof(S));
  std::memcpy(out.data() + a.numel(), b.data(), b.numel() * sizeof(S));
  return out;
}

template <class S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& x, int c_first) {
  Tensor<S> a({c_first, x.dim(1), x.dim(2)});
  Tensor<S> b({x.dim(0) - c_first, x.dim(1), x.dim(2)});
  std::memcpy(a.data(), x.data(), a.numel() * sizeof(S));
  std::memcpy(b.data(), x.data() + a.numel(), b.numel() * sizeof(S));
  return {std::move(a), std::move(b)};
}

// Average-pool a CHW tensor by an integer factor.
template <class S>
Tensor<S> avg_pool(const Tensor<S>& x, int factor) {
  if (factor < 1 || x.dim(1) % factor != 0 || x.dim(2) % factor != 0)
    throw std::invalid_argument("avg_pool: grid not divisible by factor");
  const int c = x.dim(0), ho = x.dim(1) / factor, wo = x.dim(2) / factor;
  Tensor<S> out({c, ho, wo});
  const S inv = S(1) / static_cast<S>(factor * factor);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        S acc = 0;
        for (int di = 0; di < factor; ++di)
          for (int dj = 0; dj < factor; ++dj) acc += x.at(ch, i * factor + di, j * factor + dj);
        out.at(ch, i, j) = acc * inv;
      }
  return out;
}

template <class S>
Tensor<S> upsample_nearest2x(const Tensor<S>& x) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<S> out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j) out.at(ch, i, j) = x.at(ch, i / 2, j / 2);
  return out;
}

template <class S>
Tensor<S> upsample_nearest2x_backward(const Tensor<S>& dy) {
  const int c = dy.dim(0), h = dy.dim(1) / 2, w = dy.dim(2) / 2;
  Tensor<S> dx({c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j) dx.at(ch, i / 2, j / 2) += dy.at(ch, i, j);
  return dx;
}

// ---------------------------------------------------------------------------
// Linear: y = x W^T (+ b), x is [n, in].

template <class S>
struct Linear {
  int in = 0, out = 0;
  int w = -1, b = -1;
  bool has_bias = true;

  Linear() = default;
  Linear(ParameterStore<S>& ps, const std::string& prefix, int in_dim, int out_dim,
         bool bias = true, Init init = Init::kFanInNormal)
      : in(in_dim), out(out_dim), has_bias(bias) {
    w = ps.add(prefix + ".weight", {out, in}, init, in);
    if (bias) b = ps.add(prefix + ".bias", {out}, Init::kZero);
  }

  struct Cache {
    Tensor<S> x;
  };

  Tensor<S> forward(const ParameterStore<S>& ps, const Tensor<S>& x, Cache* cache = nullptr) const {
    if (x.rank() != 2 || x.dim(1) != in) throw std::invalid_argument("linear: bad input shape");
    const int n = x.dim(0);
    Tensor<S> y({n, out});
    as_matrix(y, n, out).noalias() = as_matrix(x, n, in) * as_matrix(ps.value(w), out, in).transpose();
    if (has_bias) {
      const Tensor<S>& bv = ps.value(b);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < out; ++c) y[static_cast<std::size_t>(r) * out + c] += bv[static_cast<std::size_t>(c)];
    }
    if (cache) cache->x = x;
    return y;
  }

  Tensor<S> backward(ParameterStore<S>& ps, const Tensor<S>& dy, const Cache& cache) const {
    const int n = dy.dim(0);
    as_matrix(ps.grad(w), out, in).noalias() +=
        as_matrix(dy, n, out).transpose() * as_matrix(cache.x, n, in);
    if (has_bias) {
      Tensor<S>& gb = ps.grad(b);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < out; ++c) gb[static_cast<std::size_t>(c)] += dy[static_cast<std::size_t>(r) * out + c];
    }
    Tensor<S> dx({n, in});
    as_matrix(dx, n, in).noalias() = as_matrix(dy, n, out) * as_matrix(ps.value(w), out, in);
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Conv2d over CHW tensors, implemented as im2col + GEMM.

template <class S>
struct Conv2d {
  int cin = 0, cout = 0, ksize = 3, stride = 1, pad = 1;
  int w = -1, b = -1;

  Conv2d() = default;
  Conv2d(ParameterStore<S>& ps, const std::string& prefix, int in_ch, int out_ch, int k,
         int stride_ = 1, Init init = Init::kFanInNormal)
      : cin(in_ch), cout(out_ch), ksize(k), stride(stride_), pad(k / 2) {
    w = ps.add(prefix + ".weight", {out_ch, in_ch, k, k}, init, in_ch * k * k);
    b = ps.add(prefix + ".bias", {out_ch}, Init::kZero);
  }

  int out_extent(int n) const { return (n + 2 * pad - ksize) / stride + 1; }

  struct Cache {
    Tensor<S> col;  // [ho*wo, cin*k*k]
    int h_in = 0, w_in = 0;
  };

  Tensor<S> forward(const ParameterStore<S>& ps, const Tensor<S>& x, Cache* cache = nullptr) const {
    if (x.rank() != 3 || x.dim(0) != cin) throw std::invalid_argument("conv2d: bad input shape");
    const int h = x.dim(1), wdt = x.dim(2);
    const int ho = out_extent(h), wo = out_extent(wdt);
    Tensor<S> col = im2col(x, ho, wo);

    const int n = ho * wo, kk = cin * ksize * ksize;
    Tensor<S> y_mat({n, cout});
    as_matrix(y_mat, n, cout).noalias() =
        as_matrix(col, n, kk) * as_matrix(ps.value(w), cout, kk).transpose();

    Tensor<S> y({cout, ho, wo});
    const Tensor<S>& bv = ps.value(b);
    for (int c = 0; c < cout; ++c) {
      const S bias = bv[static_cast<std::size_t>(c)];
      for (int p = 0; p < n; ++p) y[static_cast<std::size_t>(c) * n + p] = y_mat[static_cast<std::size_t>(p) * cout + c] + bias;
    }
    if (cache) {
      cache->col = std::move(col);
      cache->h_in = h;
      cache->w_in = wdt;
    }
    return y;
  }

  Tensor<S> backward(ParameterStore<S>& ps, const Tensor<S>& dy, const Cache& cache) const {
    const int ho = dy.dim(1), wo = dy.dim(2);
    const int n = ho * wo, kk = cin * ksize * ksize;

    // dy into [n, cout] token-major order.
    Tensor<S> dy_mat({n, cout});
    for (int c = 0; c < cout; ++c)
      for (int p = 0; p < n; ++p) dy_mat[static_cast<std::size_t>(p) * cout + c] = dy[static_cast<std::size_t>(c) * n + p];

    as_matrix(ps.grad(w), cout, kk).noalias() +=
        as_matrix(dy_mat, n, cout).transpose() * as_matrix(cache.col, n, kk);
    Tensor<S>& gb = ps.grad(b);
    for (int c = 0; c < cout; ++c) {
      S acc = 0;
      for (int p = 0; p < n; ++p) acc += dy_mat[static_cast<std::size_t>(p) * cout + c];
      gb[static_cast<std::size_t>(c)] += acc;
    }

    Tensor<S> dcol({n, kk});
    as_matrix(dcol, n, kk).noalias() = as_matrix(dy_mat, n, cout) * as_matrix(ps.value(w), cout, kk);
    return col2im(dcol, cache.h_in, cache.w_in, ho, wo);
  }

 private:
  Tensor<S> im2col(const Tensor<S>& x, int ho, int wo) const {
    const int h = x.dim(1), wdt = x.dim(2);
    Tensor<S> col({ho * wo, cin * ksize * ksize});
    std::size_t idx = 0;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        for (int c = 0; c < cin; ++c) {
          for (int ki = 0; ki < ksize; ++ki) {
            const int src_i = i * stride + ki - pad;
            for (int kj = 0; kj < ksize; ++kj) {
              const int src_j = j * stride + kj - pad;
              col[idx++] = (src_i >= 0 && src_i < h && src_j >= 0 && src_j < wdt)
                               ? x.at(c, src_i, src_j)
                               : S(0);
            }
          }
        }
      }
    }
    return col;
  }

  Tensor<S> col2im(const Tensor<S>& dcol, int h, int wdt, int ho, int wo) const {
    Tensor<S> dx({cin, h, wdt});
    std::size_t idx = 0;
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        for (int c = 0; c < cin; ++c) {
          for (int ki = 0; ki < ksize; ++ki) {
            const int src_i = i * stride + ki - pad;
            for (int kj = 0; kj < ksize; ++kj) {
              const int src_j = j * stride + kj - pad;
              if (src_i >= 0 && src_i < h && src_j >= 0 && src_j < wdt)
                dx.at(c, src_i, src_j) += dcol[idx];
              ++idx;
            }
          }
        }
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// GroupNorm with per-channel affine.

template <class S>
struct GroupNorm {
  int channels = 0, groups = 1;
  double eps = 1e-5;
  int gamma = -1, beta = -1;

  GroupNorm() = default;
  GroupNorm(ParameterStore<S>& ps, const std::string& prefix, int ch)
      : channels(ch), groups(pick_groups(ch)) {
    gamma = ps.add(prefix + ".scale", {ch}, Init::kOne);
    beta = ps.add(prefix + ".shift", {ch}, Init::kZero);
  }

  static int pick_groups(int ch) {
    for (int g : {32, 16, 8, 4, 2, 1})
      if (ch % g == 0) return g;
    return 1;
  }

  struct Cache {
    Tensor<S> x_hat;
    std::vector<S> inv_std;
  };

  Tensor<S> forward(const ParameterStore<S>& ps, const Tensor<S>& x, Cache* cache = nullptr) const {
    if (x.rank() != 3 || x.dim(0) != channels) throw std::invalid_argument("groupnorm: bad input shape");
    const int hw = x.dim(1) * x.dim(2);
    const int cpg = channels / groups;
    const std::size_t m = static_cast<std::size_t>(cpg) * hw;

    Tensor<S> x_hat(x.shape());
    std::vector<S> inv_std(static_cast<std::size_t>(groups));
    const Tensor<S>& g = ps.value(gamma);
    const Tensor<S>& be = ps.value(beta);
    Tensor<S> y(x.shape());
    for (int grp = 0; grp < groups; ++grp) {
      const std::size_t base = static_cast<std::size_t>(grp) * m;
      double mean = 0;
      for (std::size_t i = 0; i < m; ++i) mean += static_cast<double>(x[base + i]);
      mean /= static_cast<double>(m);
      double var = 0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(x[base + i]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const S r = static_cast<S>(1.0 / std::sqrt(var + eps));
      inv_std[static_cast<std::size_t>(grp)] = r;
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = grp * cpg + cc;
        const S gc = g[static_cast<std::size_t>(c)];
        const S bc = be[static_cast<std::size_t>(c)];
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = base + static_cast<std::size_t>(cc) * hw + p;
          const S xh = (x[i] - static_cast<S>(mean)) * r;
          x_hat[i] = xh;
          y[i] = gc * xh + bc;
        }
      }
    }
    if (cache) {
      cache->x_hat = std::move(x_hat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Tensor<S> backward(ParameterStore<S>& ps, const Tensor<S>& dy, const Cache& cache) const {
    const int hw = dy.dim(1) * dy.dim(2);
    const int cpg = channels / groups;
    const std::size_t m = static_cast<std::size_t>(cpg) * hw;
    const Tensor<S>& g = ps.value(gamma);
    Tensor<S>& dgamma = ps.grad(gamma);
    Tensor<S>& dbeta = ps.grad(beta);

    Tensor<S> dx(dy.shape());
    for (int grp = 0; grp < groups; ++grp) {
      const std::size_t base = static_cast<std::size_t>(grp) * m;
      double sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = grp * cpg + cc;
        const S gc = g[static_cast<std::size_t>(c)];
        double dgc = 0, dbc = 0;
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = base + static_cast<std::size_t>(cc) * hw + p;
          const double dxh = static_cast<double>(dy[i]) * static_cast<double>(gc);
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * static_cast<double>(cache.x_hat[i]);
          dgc += static_cast<double>(dy[i]) * static_cast<double>(cache.x_hat[i]);
          dbc += static_cast<double>(dy[i]);
        }
        dgamma[static_cast<std::size_t>(c)] += static_cast<S>(dgc);
        dbeta[static_cast<std::size_t>(c)] += static_cast<S>(dbc);
      }
      const double inv_m = 1.0 / static_cast<double>(m);
      const S r = cache.inv_std[static_cast<std::size_t>(grp)];
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = grp * cpg + cc;
        const S gc = g[static_cast<std::size_t>(c)];
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = base + static_cast<std::size_t>(cc) * hw + p;
          const double dxh = static_cast<double>(dy[i]) * static_cast<double>(gc);
          dx[i] = static_cast<S>(static_cast<double>(r) *
                                 (dxh - inv_m * sum_dxhat -
                                  static_cast<double>(cache.x_hat[i]) * inv_m * sum_dxhat_xhat));
        }
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// SiLU activation, x * sigmoid(x).

template <class S>
struct SiLU {
  struct Cache {
    Tensor<S> x;
  };

  static Tensor<S> forward(const Tensor<S>& x, Cache* cache = nullptr) {
    Tensor<S> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y[i] = x[i] * sigmoid(x[i]);
    if (cache) cache->x = x;
    return y;
  }

  static Tensor<S> backward(const Tensor<S>& dy, const Cache& cache) {
    Tensor<S> dx(dy.shape());
    for (std::size_t i = 0; i < dy.numel(); ++i) {
      const S s = sigmoid(cache.x[i]);
      dx[i] = dy[i] * (s * (S(1) + cache.x[i] * (S(1) - s)));
    }
    return dx;
  }

  static S sigmoid(S v) { return S(1) / (S(1) + std::exp(-v)); }
};

// ---------------------------------------------------------------------------
// Embedding table lookup.

template <class S>
struct Embedding {
  int count = 0, dim = 0;
  int table = -1;

  Embedding() = default;
  Embedding(ParameterStore<S>& ps, const std::string& prefix, int n, int d) : count(n), dim(d) {
    table = ps.add(prefix + ".table", {n, d}, Init::kNormal02);
  }

  Tensor<S> forward(const ParameterStore<S>& ps, int id) const {
    if (id < 0 || id >= count) throw std::invalid_argument("embedding: id out of range");
    Tensor<S> out({dim});
    std::memcpy(out.data(), ps.value(table).data() + static_cast<std::size_t>(id) * dim,
                static_cast<std::size_t>(dim) * sizeof(S));
    return out;
  }

  void backward(ParameterStore<S>& ps, int id, const Tensor<S>& dy) const {
    S* row = ps.grad(table).data() + static_cast<std::size_t>(id) * dim;
    for (int i = 0; i < dim; ++i) row[static_cast<std::size_t>(i)] += dy[static_cast<std::size_t>(i)];
  }
};

// ---------------------------------------------------------------------------
// Cross-attention between a target feature map and a reference latent.
//   Q = W_Q [r_tar || f_tar],  K = W_K [r_ref || z_ref],  V = W_V z_ref
// Multi-head softmax(Q K^T / sqrt(d_head)) V, residual-added onto f_tar.
// Value rows live directly in the feature channel space, so no output
// projection is needed and the residual add is exact.

template <class S>
struct CrossAttention {
  int f_channels = 0;   // target feature channels; also the V/output width
  int kv_channels = 0;  // reference latent channels
  int ray_channels = 6;
  int attn_dim = 0, head_dim = 0, heads = 0;
  int wq = -1, wk = -1, wv = -1;

  CrossAttention() = default;
  CrossAttention(ParameterStore<S>& ps, const std::string& prefix, int f_ch, int kv_ch,
                 int attn_dim_, int head_dim_)
      : f_channels(f_ch), kv_channels(kv_ch), attn_dim(attn_dim_), head_dim(head_dim_) {
    if (attn_dim % head_dim != 0) throw std::invalid_argument("attention: attn_dim % head_dim != 0");
    heads = attn_dim / head_dim;
    if (f_channels % heads != 0)
      throw std::invalid_argument("attention: feature channels not divisible by head count");
    wq = ps.add(prefix + ".wq", {attn_dim, ray_channels + f_channels}, Init::kFanInNormal,
                ray_channels + f_channels);
    wk = ps.add(prefix + ".wk", {attn_dim, ray_channels + kv_channels}, Init::kFanInNormal,
                ray_channels + kv_channels);
    wv = ps.add(prefix + ".wv", {f_channels, kv_channels}, Init::kFanInNormal, kv_channels);
  }

  struct Cache {
    Tensor<S> xq, xk, xv;    // token-major inputs
    Tensor<S> q, k, v;       // projected
    Tensor<S> attn;          // [heads, n, n] softmax rows
    int n = 0;
  };

  // f_tar [C,g,g]; r_tar/r_ref [6,g,g]; z_ref [kv,g,g]; all on the same grid.
  Tensor<S> forward(const ParameterStore<S>& ps, const Tensor<S>& f_tar, const Tensor<S>& r_tar,
                    const Tensor<S>& r_ref, const Tensor<S>& z_ref, Cache* cache = nullptr) const {
    check_grids(f_tar, r_tar, r_ref, z_ref);
    const int n = f_tar.dim(1) * f_tar.dim(2);

    Tensor<S> xq = tokens(r_tar, f_tar);
    Tensor<S> xk = tokens(r_ref, z_ref);
    Tensor<S> xv = tokens(z_ref);

    Tensor<S> q({n, attn_dim}), k({n, attn_dim}), v({n, f_channels});
    as_matrix(q, n, attn_dim).noalias() =
        as_matrix(xq, n, ray_channels + f_channels) *
        as_matrix(ps.value(wq), attn_dim, ray_channels + f_channels).transpose();
    as_matrix(k, n, attn_dim).noalias() =
        as_matrix(xk, n, ray_channels + kv_channels) *
        as_matrix(ps.value(wk), attn_dim, ray_channels + kv_channels).transpose();
    as_matrix(v, n, f_channels).noalias() =
        as_matrix(xv, n, kv_channels) * as_matrix(ps.value(wv), f_channels, kv_channels).transpose();

    Tensor<S> attn({heads, n, n});
    Tensor<S> out_tokens({n, f_channels});
    const int dv = f_channels / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(head_dim));
    RowMat<S> logits(n, n), probs(n, n);
    for (int h = 0; h < heads; ++h) {
      auto qh = as_matrix(q, n, attn_dim).middleCols(h * head_dim, head_dim);
      auto kh = as_matrix(k, n, attn_dim).middleCols(h * head_dim, head_dim);
      logits.noalias() = (qh * kh.transpose()) * static_cast<S>(scl);
      for (int r = 0; r < n; ++r) {
        const S mx = logits.row(r).maxCoeff();
        probs.row(r) = (logits.row(r).array() - mx).exp();
        probs.row(r) /= probs.row(r).sum();
      }
      std::memcpy(attn.data() + static_cast<std::size_t>(h) * n * n, probs.data(),
                  static_cast<std::size_t>(n) * n * sizeof(S));
      auto vh = as_matrix(v, n, f_channels).middleCols(h * dv, dv);
      as_matrix(out_tokens, n, f_channels).middleCols(h * dv, dv).noalias() = probs * vh;
    }

    Tensor<S> y = f_tar;
    add_tokens_to_chw(out_tokens, y);
    if (cache) {
      cache->xq = std::move(xq);
      cache->xk = std::move(xk);
      cache->xv = std::move(xv);
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->attn = std::move(attn);
      cache->n = n;
    }
    return y;
  }

  // Returns d f_tar. Gradients flow to W_Q/W_K/W_V; the reference latent and
  // ray maps are pure inputs, so their gradients are not materialized.
  Tensor<S> backward(ParameterStore<S>& ps, const Tensor<S>& dy, const Cache& cache) const {
    const int n = cache.n;
    const int dv = f_channels / heads;
    const double scl = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor<S> d_out_tokens = chw_to_tokens(dy);
    Tensor<S> dq({n, attn_dim}), dk({n, attn_dim}), dvp({n, f_channels});

    RowMat<S> d_probs(n, n), d_logits(n, n);
    for (int h = 0; h < heads; ++h) {
      Eigen::Map<const RowMat<S>> probs(cache.attn.data() + static_cast<std::size_t>(h) * n * n, n, n);
      auto doh = as_matrix(d_out_tokens, n, f_channels).middleCols(h * dv, dv);
      auto vh = as_matrix(cache.v, n, f_channels).middleCols(h * dv, dv);

      d_probs.noalias() = doh * vh.transpose();
      as_matrix(dvp, n, f_channels).middleCols(h * dv, dv).noalias() = probs.transpose() * doh;

      // softmax rows: dL = P o (dP - rowsum(dP o P))
      for (int r = 0; r < n; ++r) {
        const S dot = (d_probs.row(r).array() * probs.row(r).array()).sum();
        d_logits.row(r) = probs.row(r).array() * (d_probs.row(r).array() - dot);
      }
      auto qh = as_matrix(cache.q, n, attn_dim).middleCols(h * head_dim, head_dim);
      auto kh = as_matrix(cache.k, n, attn_dim).middleCols(h * head_dim, head_dim);
      as_matrix(dq, n, attn_dim).middleCols(h * head_dim, head_dim).noalias() =
          (d_logits * kh) * static_cast<S>(scl);
      as_matrix(dk, n, attn_dim).middleCols(h * head_dim, head_dim).noalias() =
          (d_logits.transpose() * qh) * static_cast<S>(scl);
    }

    as_matrix(ps.grad(wq), attn_dim, ray_channels + f_channels).noalias() +=
        as_matrix(dq, n, attn_dim).transpose() * as_matrix(cache.xq, n, ray_channels + f_channels);
    as_matrix(ps.grad(wk), attn_dim, ray_channels + kv_channels).noalias() +=
        as_matrix(dk, n, attn_dim).transpose() * as_matrix(cache.xk, n, ray_channels + kv_channels);
    as_matrix(ps.grad(wv), f_channels, kv_channels).noalias() +=
        as_matrix(dvp, n, f_channels).transpose() * as_matrix(cache.xv, n, kv_channels);

    // d f_tar = residual passthrough + query-path contribution.
    Tensor<S> dxq({n, ray_channels + f_channels});
    as_matrix(dxq, n, ray_channels + f_channels).noalias() =
        as_matrix(dq, n, attn_dim) * as_matrix(ps.value(wq), attn_dim, ray_channels + f_channels);
    Tensor<S> dx = dy;
    for (int c = 0; c < f_channels; ++c)
      for (int p = 0; p < n; ++p)
        dx[static_cast<std::size_t>(c) * n + p] +=
            dxq[static_cast<std::size_t>(p) * (ray_channels + f_channels) + ray_channels + c];
    return dx;
  }

 private:
  void check_grids(const Tensor<S>& f_tar, const Tensor<S>& r_tar, const Tensor<S>& r_ref,
                   const Tensor<S>& z_ref) const {
    const int gh = f_tar.dim(1), gw = f_tar.dim(2);
    auto same = [&](const Tensor<S>& t) { return t.dim(1) == gh && t.dim(2) == gw; };
    if (f_tar.dim(0) != f_channels || r_tar.dim(0) != ray_channels ||
        r_ref.dim(0) != ray_channels || z_ref.dim(0) != kv_channels || !same(r_tar) ||
        !same(r_ref) || !same(z_ref))
      throw std::logic_error("attention: internal grid mismatch");
  }

  // Token-major [n, channels] view of one or two CHW tensors.
  static Tensor<S> tokens(const Tensor<S>& a) {
    const int c = a.dim(0), n = a.dim(1) * a.dim(2);
    Tensor<S> out({n, c});
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < n; ++p) out[static_cast<std::size_t>(p) * c + ch] = a[static_cast<std::size_t>(ch) * n + p];
    return out;
  }

  static Tensor<S> tokens(const Tensor<S>& a, const Tensor<S>& b) {
    const int ca = a.dim(0), cb = b.dim(0), n = a.dim(1) * a.dim(2);
    Tensor<S> out({n, ca + cb});
    for (int ch = 0; ch < ca; ++ch)
      for (int p = 0; p < n; ++p) out[static_cast<std::size_t>(p) * (ca + cb) + ch] = a[static_cast<std::size_t>(ch) * n + p];
    for (int ch = 0; ch < cb; ++ch)
      for (int p = 0; p < n; ++p)
        out[static_cast<std::size_t>(p) * (ca + cb) + ca + ch] = b[static_cast<std::size_t>(ch) * n + p];
    return out;
  }

  Tensor<S> chw_to_tokens(const Tensor<S>& x) const {
    const int n = x.dim(1) * x.dim(2);
    Tensor<S> out({n, f_channels});
    for (int c = 0; c < f_channels; ++c)
      for (int p = 0; p < n; ++p) out[static_cast<std::size_t>(p) * f_channels + c] = x[static_cast<std::size_t>(c) * n + p];
    return out;
  }

  void add_tokens_to_chw(const Tensor<S>& tok, Tensor<S>& y) const {
    const int n = y.dim(1) * y.dim(2);
    for (int c = 0; c < f_channels; ++c)
      for (int p = 0; p < n; ++p) y[static_cast<std::size_t>(c) * n + p] += tok[static_cast<std::size_t>(p) * f_channels + c];
  }
};

}  // namespace latentview::nn
