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

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "tilelink/errors.hpp"
#include "tilelink/kernels/common.hpp"

namespace tilelink {

// A kernel config plus run options, as read from a single JSON document.
// The design-space fields (order, binding, mode, tile sizes) may hold
// lists; expand() yields their Cartesian product.
struct RunConfig {
  KernelConfig kernel;
  bool integer_inputs = true;

  int repeat = 5;
  std::optional<std::string> trace;
  std::optional<std::string> report;
  bool race_check = false;
  std::int64_t comm_delay_us = 0;
  std::int64_t timeout_ms = 10000;
  bool sabotage_drop_notify = false;

  std::vector<TileOrder> orders;
  std::vector<ResourceBinding> bindings;
  std::vector<TransferMode> modes;
  std::vector<std::size_t> tm_comms, tm_comps, tn_comps, tk_comps;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  bool is_sweep() const {
    return orders.size() > 1 || bindings.size() > 1 || modes.size() > 1 || tm_comms.size() > 1 ||
           tm_comps.size() > 1 || tn_comps.size() > 1 || tk_comps.size() > 1;
  }

  std::vector<RunConfig> expand() const {
    std::vector<RunConfig> out;
    for (TileOrder o : orders)
      for (ResourceBinding b : bindings)
        for (TransferMode m : modes)
          for (std::size_t a : tm_comms)
            for (std::size_t c : tm_comps)
              for (std::size_t n : tn_comps)
                for (std::size_t k : tk_comps) {
                  RunConfig p = *this;
                  p.kernel.order = o;
                  p.kernel.binding = b;
                  p.kernel.mode = m;
                  p.kernel.tm_comm = a;
                  p.kernel.tm_comp = c;
                  p.kernel.tn_comp = n;
                  p.kernel.tk_comp = k;
                  p.orders = {o};
                  p.bindings = {b};
                  p.modes = {m};
                  p.tm_comms = {a};
                  p.tm_comps = {c};
                  p.tn_comps = {n};
                  p.tk_comps = {k};
                  out.push_back(std::move(p));
                }
    return out;
  }

  void validate() const {
    if (repeat < 1) throw ConfigError("repeat must be >= 1");
    if (comm_delay_us < 0) throw ConfigError("comm_delay_us must be >= 0");
    if (timeout_ms < 1) throw ConfigError("timeout_ms must be >= 1");
    for (const RunConfig& p : expand()) p.kernel.validate();
  }
};

namespace detail {

template <class T, class Parse>
std::vector<T> scalar_or_list(const nlohmann::json& j, const char* key, Parse parse) {
  std::vector<T> out;
  if (j.is_array()) {
    if (j.empty()) throw ConfigError(std::string("'") + key + "' must not be an empty list");
    for (const auto& e : j) out.push_back(parse(e));
  } else {
    out.push_back(parse(j));
  }
  return out;
}

inline std::size_t as_extent(const nlohmann::json& j, const char* key) {
  if (!j.is_number_integer() || j.get<long long>() < 1) {
    throw ConfigError(std::string("'") + key + "' must be an integer >= 1");
  }
  return j.get<std::size_t>();
}

inline int as_int(const nlohmann::json& j, const char* key) {
  if (!j.is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer");
  return j.get<int>();
}

inline std::string as_string(const nlohmann::json& j, const char* key) {
  if (!j.is_string()) throw ConfigError(std::string("'") + key + "' must be a string");
  return j.get<std::string>();
}

inline bool as_bool(const nlohmann::json& j, const char* key) {
  if (!j.is_boolean()) throw ConfigError(std::string("'") + key + "' must be a boolean");
  return j.get<bool>();
}

template <class T>
nlohmann::json list_or_scalar(const std::vector<T>& v, auto convert) {
  if (v.size() == 1) return convert(v.front());
  nlohmann::json a = nlohmann::json::array();
  for (const T& e : v) a.push_back(convert(e));
  return a;
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "kernel", "world_size", "channels", "m", "n", "k", "tokens", "hidden", "intermediate", "experts", "topk",
      "heads", "head_dim", "seq", "tm_comm", "tm_comp", "tn_comp", "tk_comp", "order", "binding", "mode",
      "comm_workers", "comp_workers", "seed", "integer_inputs", "repeat", "trace", "report", "race_check",
      "comm_delay_us", "timeout_ms", "sabotage_drop_notify"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  if (!j.contains("kernel")) throw ConfigError("config needs a 'kernel' field");

  RunConfig c;
  KernelConfig& k = c.kernel;
  k.kind = parse_kernel_kind(detail::as_string(j["kernel"], "kernel"));
  auto extent = [&](const char* key, std::size_t& field) {
    if (j.contains(key)) field = detail::as_extent(j[key], key);
  };
  auto integer = [&](const char* key, int& field) {
    if (j.contains(key)) field = detail::as_int(j[key], key);
  };
  integer("world_size", k.world_size);
  integer("channels", k.channels);
  extent("m", k.m);
  extent("n", k.n);
  extent("k", k.k);
  extent("tokens", k.tokens);
  extent("hidden", k.hidden);
  extent("intermediate", k.intermediate);
  integer("experts", k.experts);
  integer("topk", k.topk);
  extent("heads", k.heads);
  extent("head_dim", k.head_dim);
  extent("seq", k.seq);
  integer("comm_workers", k.comm_workers);
  integer("comp_workers", k.comp_workers);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0)) {
      throw ConfigError("'seed' must be a non-negative integer");
    }
    k.seed = j["seed"].get<std::uint64_t>();
  }

  auto extents = [&](const char* key, std::vector<std::size_t>& out, std::size_t fallback) {
    out = j.contains(key) ? detail::scalar_or_list<std::size_t>(j[key], key,
                                                                [&](const nlohmann::json& e) { return detail::as_extent(e, key); })
                          : std::vector<std::size_t>{fallback};
  };
  extents("tm_comm", c.tm_comms, 1);
  extents("tm_comp", c.tm_comps, 1);
  extents("tn_comp", c.tn_comps, 1);
  extents("tk_comp", c.tk_comps, 1);
  c.orders = j.contains("order") ? detail::scalar_or_list<TileOrder>(j["order"], "order", [](const nlohmann::json& e) {
    return parse_tile_order(detail::as_string(e, "order"));
  })
                                 : std::vector<TileOrder>{TileOrder::ring};
  c.bindings = j.contains("binding")
                   ? detail::scalar_or_list<ResourceBinding>(
                         j["binding"], "binding",
                         [](const nlohmann::json& e) { return parse_binding(detail::as_string(e, "binding")); })
                   : std::vector<ResourceBinding>{ResourceBinding::core};
  c.modes = j.contains("mode") ? detail::scalar_or_list<TransferMode>(j["mode"], "mode", [](const nlohmann::json& e) {
    return parse_transfer_mode(detail::as_string(e, "mode"));
  })
                               : std::vector<TransferMode>{TransferMode::pull};
  k.order = c.orders.front();
  k.binding = c.bindings.front();
  k.mode = c.modes.front();
  k.tm_comm = c.tm_comms.front();
  k.tm_comp = c.tm_comps.front();
  k.tn_comp = c.tn_comps.front();
  k.tk_comp = c.tk_comps.front();

  if (j.contains("integer_inputs")) c.integer_inputs = detail::as_bool(j["integer_inputs"], "integer_inputs");
  integer("repeat", c.repeat);
  auto path = [&](const char* key, std::optional<std::string>& out) {
    if (j.contains(key) && !j[key].is_null()) out = detail::as_string(j[key], key);
  };
  path("trace", c.trace);
  path("report", c.report);
  if (j.contains("race_check")) c.race_check = detail::as_bool(j["race_check"], "race_check");
  if (j.contains("comm_delay_us")) c.comm_delay_us = detail::as_int(j["comm_delay_us"], "comm_delay_us");
  if (j.contains("timeout_ms")) c.timeout_ms = detail::as_int(j["timeout_ms"], "timeout_ms");
  if (j.contains("sabotage_drop_notify")) {
    c.sabotage_drop_notify = detail::as_bool(j["sabotage_drop_notify"], "sabotage_drop_notify");
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const RunConfig& c) {
  const KernelConfig& k = c.kernel;
  nlohmann::json j = {{"kernel", std::string(to_string(k.kind))},
                      {"world_size", k.world_size},
                      {"channels", k.channels},
                      {"m", k.m},
                      {"n", k.n},
                      {"k", k.k},
                      {"tokens", k.tokens},
                      {"hidden", k.hidden},
                      {"intermediate", k.intermediate},
                      {"experts", k.experts},
                      {"topk", k.topk},
                      {"heads", k.heads},
                      {"head_dim", k.head_dim},
                      {"seq", k.seq},
                      {"comm_workers", k.comm_workers},
                      {"comp_workers", k.comp_workers},
                      {"seed", k.seed},
                      {"integer_inputs", c.integer_inputs},
                      {"repeat", c.repeat},
                      {"race_check", c.race_check},
                      {"comm_delay_us", c.comm_delay_us},
                      {"timeout_ms", c.timeout_ms},
                      {"sabotage_drop_notify", c.sabotage_drop_notify}};
  auto id = [](std::size_t v) { return nlohmann::json(v); };
  j["tm_comm"] = detail::list_or_scalar(c.tm_comms, id);
  j["tm_comp"] = detail::list_or_scalar(c.tm_comps, id);
  j["tn_comp"] = detail::list_or_scalar(c.tn_comps, id);
  j["tk_comp"] = detail::list_or_scalar(c.tk_comps, id);
  j["order"] = detail::list_or_scalar(c.orders, [](TileOrder o) { return nlohmann::json(std::string(to_string(o))); });
  j["binding"] =
      detail::list_or_scalar(c.bindings, [](ResourceBinding b) { return nlohmann::json(std::string(to_string(b))); });
  j["mode"] = detail::list_or_scalar(c.modes, [](TransferMode m) { return nlohmann::json(std::string(to_string(m))); });
  j["trace"] = c.trace ? nlohmann::json(*c.trace) : nlohmann::json(nullptr);
  j["report"] = c.report ? nlohmann::json(*c.report) : nlohmann::json(nullptr);
  return j;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tilelink
