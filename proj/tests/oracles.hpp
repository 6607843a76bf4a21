// Copyright 2026 The tilelink-sim Authors. All rights reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Naive double-precision oracles written directly from the operator
// definitions. They share nothing with the library's reference kernels.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "tilelink/dispatch.hpp"

namespace tilelink::test {

using Out = std::vector<std::vector<float>>;

inline Out oracle_ag_gemm(const KernelConfig& c, const GemmInputs<float>& in) {
  std::vector<double> a;
  for (const auto& s : in.a) a.insert(a.end(), s.begin(), s.end());
  Out out;
  for (int r = 0; r < c.world_size; ++r) {
    std::vector<float> y(c.m * c.n);
    for (std::size_t i = 0; i < c.m; ++i)
      for (std::size_t j = 0; j < c.n; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < c.k; ++k) acc += a[i * c.k + k] * in.b[r][k * c.n + j];
        y[i * c.n + j] = static_cast<float>(acc);
      }
    out.push_back(y);
  }
  return out;
}

inline Out oracle_gemm_rs(const KernelConfig& c, const GemmInputs<float>& in) {
  std::vector<double> sum(c.m * c.n, 0.0);
  for (int r = 0; r < c.world_size; ++r)
    for (std::size_t i = 0; i < c.m; ++i)
      for (std::size_t j = 0; j < c.n; ++j)
        for (std::size_t k = 0; k < c.k; ++k) sum[i * c.n + j] += double(in.a[r][i * c.k + k]) * in.b[r][k * c.n + j];
  const std::size_t shard = c.m / static_cast<std::size_t>(c.world_size);
  Out out;
  for (int r = 0; r < c.world_size; ++r) {
    out.emplace_back(sum.begin() + static_cast<std::ptrdiff_t>(r * shard * c.n),
                     sum.begin() + static_cast<std::ptrdiff_t>((r + 1) * shard * c.n));
  }
  return out;
}

struct MoeDims {
  std::size_t S, H, I, slice, shard;
  int R, E, k;
};

inline MoeDims moe_dims(const KernelConfig& c) {
  const auto R = static_cast<std::size_t>(c.world_size);
  return {c.tokens, c.hidden, c.intermediate, c.intermediate / R, c.tokens / R, c.world_size, c.experts, c.topk};
}

// First expert GEMM of token s routed through slot j, on rank r's slice.
inline std::vector<double> moe_hidden(const MoeDims& d, const MoeInputs<float>& in, const RoutingTable& rt,
                                      std::size_t s, int j, int r) {
  const int e = rt.topk_ids[s * static_cast<std::size_t>(d.k) + static_cast<std::size_t>(j)];
  const auto& x = in.x[s / d.shard];
  const std::size_t xo = (s % d.shard) * d.H;
  std::vector<double> h(d.slice, 0.0);
  for (std::size_t c = 0; c < d.slice; ++c)
    for (std::size_t t = 0; t < d.H; ++t) h[c] += double(x[xo + t]) * in.w1[r][(e * d.H + t) * d.slice + c];
  return h;
}

// Per rank: (S*k) x I/R rows in (token, slot) order.
inline Out oracle_moe_first_half(const KernelConfig& c, const MoeInputs<float>& in, const RoutingTable& rt) {
  const MoeDims d = moe_dims(c);
  Out out(static_cast<std::size_t>(d.R));
  for (int r = 0; r < d.R; ++r)
    for (std::size_t s = 0; s < d.S; ++s)
      for (int j = 0; j < d.k; ++j)
        for (double v : moe_hidden(d, in, rt, s, j, r)) out[r].push_back(static_cast<float>(v));
  return out;
}

// Second expert GEMM, uniform top-k combine, and the reduce over ranks.
// `hidden(s, j, r)` yields the first-half activations.
template <class Hidden>
Out oracle_moe_second_half(const KernelConfig& c, const MoeInputs<float>& in, const RoutingTable& rt, Hidden hidden) {
  const MoeDims d = moe_dims(c);
  std::vector<double> y(d.S * d.H, 0.0);
  for (std::size_t s = 0; s < d.S; ++s)
    for (int j = 0; j < d.k; ++j) {
      const int e = rt.topk_ids[s * static_cast<std::size_t>(d.k) + static_cast<std::size_t>(j)];
      for (int r = 0; r < d.R; ++r) {
        const std::vector<double> h = hidden(s, j, r);
        for (std::size_t o = 0; o < d.H; ++o)
          for (std::size_t cc = 0; cc < d.slice; ++cc) y[s * d.H + o] += h[cc] * in.w2[r][(e * d.slice + cc) * d.H + o];
      }
    }
  Out out;
  for (int r = 0; r < d.R; ++r) {
    std::vector<float> shard;
    for (std::size_t i = r * d.shard * d.H; i < (r + 1) * d.shard * d.H; ++i) shard.push_back(float(y[i] / d.k));
    out.push_back(shard);
  }
  return out;
}

inline Out oracle_moe(const KernelConfig& c, const MoeInputs<float>& in, const RoutingTable& rt) {
  const MoeDims d = moe_dims(c);
  return oracle_moe_second_half(c, in, rt, [&](std::size_t s, int j, int r) { return moe_hidden(d, in, rt, s, j, r); });
}

inline Out oracle_attention(const KernelConfig& c, const AttentionInputs<float>& in) {
  const std::size_t local = c.seq / static_cast<std::size_t>(c.world_size), w = c.heads * c.head_dim;
  auto kv = [&](const std::vector<std::vector<float>>& src, std::size_t row, std::size_t col) {
    return double(src[row / local][(row % local) * w + col]);
  };
  Out out;
  for (int r = 0; r < c.world_size; ++r) {
    std::vector<float> o(local * w);
    for (std::size_t i = 0; i < local; ++i)
      for (std::size_t h = 0; h < c.heads; ++h) {
        std::vector<double> score(c.seq);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < c.seq; ++j) {
          double dot = 0;
          for (std::size_t t = 0; t < c.head_dim; ++t) dot += in.q[r][i * w + h * c.head_dim + t] * kv(in.k, j, h * c.head_dim + t);
          score[j] = dot / std::sqrt(double(c.head_dim));
          mx = std::max(mx, score[j]);
        }
        double z = 0;
        for (double& s : score) z += (s = std::exp(s - mx));
        for (std::size_t t = 0; t < c.head_dim; ++t) {
          double acc = 0;
          for (std::size_t j = 0; j < c.seq; ++j) acc += score[j] * kv(in.v, j, h * c.head_dim + t);
          o[i * w + h * c.head_dim + t] = static_cast<float>(acc / z);
        }
      }
    out.push_back(o);
  }
  return out;
}

inline Out oracle(const Problem& p) {
  switch (p.cfg.kind) {
    case KernelKind::ag_gemm: return oracle_ag_gemm(p.cfg, p.gemm);
    case KernelKind::gemm_rs: return oracle_gemm_rs(p.cfg, p.gemm);
    case KernelKind::ag_moe: return oracle_moe_first_half(p.cfg, p.moe, p.routing);
    case KernelKind::moe: return oracle_moe(p.cfg, p.moe, p.routing);
    case KernelKind::ag_kv_attention: return oracle_attention(p.cfg, p.attention);
  }
  return {};
}

// Small desk-scale problem of each kind that is valid for R in {1,2,4,8}
// and uses different communication and computation tile rows.
inline KernelConfig small_config(KernelKind kind, int R, std::uint64_t seed = 1) {
  KernelConfig c;
  c.kind = kind;
  c.world_size = R;
  c.seed = seed;
  switch (kind) {
    case KernelKind::ag_gemm:
    case KernelKind::gemm_rs:
      c.m = 64, c.n = 12, c.k = 8;
      c.tm_comm = 4, c.tm_comp = 6, c.tn_comp = 5, c.tk_comp = 3;
      break;
    case KernelKind::ag_moe:
    case KernelKind::moe:
      c.tokens = 16, c.hidden = 6, c.intermediate = 8, c.experts = 4, c.topk = 2;
      c.tm_comm = 2, c.tm_comp = 3, c.tn_comp = 4, c.tk_comp = 2;
      break;
    case KernelKind::ag_kv_attention:
      c.seq = 32, c.heads = 2, c.head_dim = 4;
      c.tm_comm = 4, c.tm_comp = 2, c.tn_comp = 3, c.tk_comp = 1;
      break;
  }
  return c;
}

}  // namespace tilelink::test
