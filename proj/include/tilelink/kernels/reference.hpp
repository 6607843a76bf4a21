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

#pragma once

#include <cmath>
#include <limits>
#include <cstddef>
#include <vector>

#include "tilelink/kernels/common.hpp"
#include "tilelink/kernels/gemm.hpp"
#include "tilelink/kernels/attention.hpp"
#include "tilelink/kernels/moe.hpp"

// Sequential, phase-separated oracles: the whole collective first, then
// the whole computation, summing in ascending rank and index order.
namespace tilelink {

namespace detail {

template <class T>
std::vector<T> matmul(const std::vector<T>& a, const std::vector<T>& b, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> c(m * n, T{});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = a[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[kk * n + j];
    }
  }
  return c;
}

template <class T>
std::vector<T> rows_of(const std::vector<T>& full, std::size_t lo, std::size_t hi, std::size_t width) {
  return std::vector<T>(full.begin() + static_cast<std::ptrdiff_t>(lo * width),
                        full.begin() + static_cast<std::ptrdiff_t>(hi * width));
}

}  // namespace detail

template <class T>
std::vector<std::vector<T>> reference_ag_gemm(const KernelConfig& cfg, const GemmInputs<T>& in) {
  std::vector<T> a;
  for (const auto& shard : in.a) a.insert(a.end(), shard.begin(), shard.end());
  if (a.size() != cfg.m * cfg.k) throw DomainError("reference_ag_gemm: shards do not cover M x K");
  std::vector<std::vector<T>> out;
  for (const auto& b : in.b) out.push_back(detail::matmul(a, b, cfg.m, cfg.k, cfg.n));
  return out;
}

template <class T>
std::vector<std::vector<T>> reference_gemm_rs(const KernelConfig& cfg, const GemmInputs<T>& in) {
  std::vector<T> sum(cfg.m * cfg.n, T{});
  for (std::size_t r = 0; r < in.a.size(); ++r) {
    const auto p = detail::matmul(in.a[r], in.b[r], cfg.m, cfg.k, cfg.n);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p[i];
  }
  const StaticMapping map(cfg.m, cfg.world_size, cfg.channels, cfg.tm_comm);
  std::vector<std::vector<T>> out;
  for (RankId r = 0; r < cfg.world_size; ++r) {
    const ShapeRange rows = map.rank_rows(r);
    out.push_back(detail::rows_of(sum, rows.lo, rows.hi, cfg.n));
  }
  return out;
}

// Per rank, in (token, slot) order: x[token] * W1_r[expert(token, slot)].
template <class T>
std::vector<std::vector<T>> reference_moe_first_half(const KernelConfig& cfg, const MoeInputs<T>& in,
                                                     const RoutingTable& routing) {
  const std::size_t H = cfg.hidden;
  const std::size_t I = cfg.intermediate / static_cast<std::size_t>(cfg.world_size);
  std::vector<T> x;
  for (const auto& shard : in.x) x.insert(x.end(), shard.begin(), shard.end());
  std::vector<std::vector<T>> out;
  for (RankId r = 0; r < cfg.world_size; ++r) {
    std::vector<T> h;
    for (std::size_t s = 0; s < routing.num_tokens(); ++s) {
      for (int j = 0; j < routing.topk; ++j) {
        const auto e = static_cast<std::size_t>(routing.expert(s, j));
        const std::vector<T> xs = detail::rows_of(x, s, s + 1, H);
        const std::vector<T> w = detail::rows_of(in.w1[r], e * H, (e + 1) * H, I);
        const auto row = detail::matmul(xs, w, 1, H, I);
        h.insert(h.end(), row.begin(), row.end());
      }
    }
    out.push_back(std::move(h));
  }
  return out;
}

// hidden: per rank, in (token, slot) order. Returns each rank's output shard.
template <class T>
std::vector<std::vector<T>> reference_moe_second_half(const KernelConfig& cfg,
                                                      const std::vector<std::vector<T>>& hidden,
                                                      const std::vector<std::vector<T>>& w2,
                                                      const RoutingTable& routing) {
  const std::size_t H = cfg.hidden;
  const std::size_t I = cfg.intermediate / static_cast<std::size_t>(cfg.world_size);
  const std::size_t S = routing.num_tokens();
  const auto k = static_cast<std::size_t>(routing.topk);
  std::vector<T> sum(S * H, T{});
  for (RankId r = 0; r < cfg.world_size; ++r) {
    std::vector<T> z(S * H, T{});
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t j = 0; j < k; ++j) {
        const auto e = static_cast<std::size_t>(routing.expert(s, static_cast<int>(j)));
        const std::vector<T> hs = detail::rows_of(hidden[r], s * k + j, s * k + j + 1, I);
        const std::vector<T> w = detail::rows_of(w2[r], e * I, (e + 1) * I, H);
        const auto y = detail::matmul(hs, w, 1, I, H);
        for (std::size_t c = 0; c < H; ++c) z[s * H + c] += y[c];
      }
      const T scale = T(1) / static_cast<T>(k);
      for (std::size_t c = 0; c < H; ++c) z[s * H + c] *= scale;
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += z[i];
  }
  const std::size_t shard = S / static_cast<std::size_t>(cfg.world_size);
  std::vector<std::vector<T>> out;
  for (RankId r = 0; r < cfg.world_size; ++r) {
    out.push_back(detail::rows_of(sum, static_cast<std::size_t>(r) * shard, (static_cast<std::size_t>(r) + 1) * shard, H));
  }
  return out;
}

template <class T>
std::vector<std::vector<T>> reference_moe(const KernelConfig& cfg, const MoeInputs<T>& in,
                                          const RoutingTable& routing) {
  return reference_moe_second_half(cfg, reference_moe_first_half(cfg, in, routing), in.w2, routing);
}

// Naive softmax attention in double precision over the full sequence.
template <class T>
std::vector<std::vector<T>> reference_attention(const KernelConfig& cfg, const AttentionInputs<T>& in) {
  const std::size_t hd = cfg.head_dim;
  const std::size_t width = cfg.heads * hd;
  std::vector<T> k, v;
  for (const auto& s : in.k) k.insert(k.end(), s.begin(), s.end());
  for (const auto& s : in.v) v.insert(v.end(), s.begin(), s.end());
  const std::size_t seq = k.size() / width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<std::vector<T>> out;
  std::vector<double> score(seq);
  for (const auto& q : in.q) {
    const std::size_t nq = q.size() / width;
    std::vector<T> o(q.size());
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        const std::size_t col = h * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          double dot = 0;
          for (std::size_t d = 0; d < hd; ++d) {
            dot += static_cast<double>(q[i * width + col + d]) * static_cast<double>(k[j * width + col + d]);
          }
          score[j] = dot * scale;
          mx = std::max(mx, score[j]);
        }
        double denom = 0;
        for (std::size_t j = 0; j < seq; ++j) {
          score[j] = std::exp(score[j] - mx);
          denom += score[j];
        }
        for (std::size_t d = 0; d < hd; ++d) {
          double acc = 0;
          for (std::size_t j = 0; j < seq; ++j) acc += score[j] * static_cast<double>(v[j * width + col + d]);
          o[i * width + col + d] = static_cast<T>(acc / denom);
        }
      }
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace tilelink
