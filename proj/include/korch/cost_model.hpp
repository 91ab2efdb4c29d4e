#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <variant>

#include "korch/kernel_identifier.hpp"
#include "korch/rewrite.hpp"
#include "korch/serialize.hpp"

namespace korch {

struct CostModelConfig {
  double launch_overhead = 5.0;      // µs
  double mem_bandwidth = 900e3;      // bytes/µs
  double flop_throughput = 15e6;     // flops/µs
  double bytes_per_element = 8.0;
  double reduce_penalty = 1.3;
  bool single_output_only = true;
};

inline CostModelConfig cost_config_from_json(const Json& j) {
  CostModelConfig c;
  using detail::get_or;
  c.launch_overhead = get_or<double>(j, "launch_overhead", c.launch_overhead, "$");
  c.mem_bandwidth = get_or<double>(j, "mem_bandwidth", c.mem_bandwidth, "$");
  c.flop_throughput = get_or<double>(j, "flop_throughput", c.flop_throughput, "$");
  c.bytes_per_element = get_or<double>(j, "bytes_per_element", c.bytes_per_element, "$");
  c.reduce_penalty = get_or<double>(j, "reduce_penalty", c.reduce_penalty, "$");
  c.single_output_only = get_or<bool>(j, "single_output_only", c.single_output_only, "$");
  if (c.launch_overhead < 0 || c.mem_bandwidth <= 0 || c.flop_throughput <= 0 || c.bytes_per_element <= 0)
    throw ParseError("$: cost model rates must be positive");
  if (c.reduce_penalty < 1) throw ParseError("$.reduce_penalty: must be >= 1");
  return c;
}

// Signature -> measured latency in µs.
using ProfileTable = std::map<std::string, double>;

inline ProfileTable profile_from_json(const Json& j) {
  ProfileTable t;
  const auto& entries = detail::field(j, "entries", "$");
  if (!entries.is_array()) throw ParseError("$.entries: expected an array");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::string p = "$.entries[" + std::to_string(i) + "]";
    auto sig = detail::get<std::string>(entries[i], "signature", p);
    auto lat = detail::get<double>(entries[i], "latency_us", p);
    if (!(lat > 0)) throw ParseError(p + ".latency_us: must be positive");
    t[sig] = lat;
  }
  return t;
}

enum class KernelClass { memory, compute };

inline const char* class_tag(KernelClass c) { return c == KernelClass::memory ? "mem" : "compute"; }

struct Rejected {
  std::string reason;
};

using Classification = std::variant<KernelClass, Rejected>;

inline Classification classify(const PrimitiveGraph& g, const Dag& dag, const CandidateKernel& k,
                               const CostModelConfig& cfg = {}) {
  int linear = 0, opaque = 0;
  k.members.for_each([&](std::size_t p) {
    const auto& kind = g.at(dag.ids[p]).kind;
    linear += is_linear(kind);
    opaque += is_opaque(kind);
  });
  if (linear >= 2) return Rejected{"multiple linear transforms"};
  if (opaque > 0 && k.members.count() > 1) return Rejected{"opaque mixed with other primitives"};
  if (cfg.single_output_only && k.outputs.count() > 1) return Rejected{"multiple outputs"};
  return linear == 1 ? KernelClass::compute : KernelClass::memory;
}

// Id-independent description of a kernel: member kinds and shapes in
// topological order, operands as member-local or external references, and
// which members are materialized.
inline std::string kernel_signature_text(const PrimitiveGraph& g, const Dag& dag, const CandidateKernel& k) {
  std::map<std::size_t, int> local;
  std::map<std::string, int> external;
  std::string text;
  k.members.for_each([&](std::size_t p) {
    const auto& n = g.at(dag.ids[p]);
    int idx = static_cast<int>(local.size());
    local[p] = idx;
    text += "m" + std::to_string(idx) + "=" + describe(n.kind) + shape_str(*n.shape) + "(";
    for (auto& v : n.operands()) {
      if (!v.is_input()) {
        auto q = static_cast<std::size_t>(dag.position(v.node));
        if (k.members.test(q)) {
          text += "m" + std::to_string(local.at(q)) + ",";
          continue;
        }
      }
      std::string key = v.is_input() ? "@" + v.input : "#" + std::to_string(v.node);
      auto [it, fresh] = external.emplace(key, static_cast<int>(external.size()));
      (void)fresh;
      text += "x" + std::to_string(it->second) + shape_str(shape_of(g, v)) + ",";
    }
    text += ")";
    if (k.outputs.test(p)) text += "*";
    text += ";";
  });
  return text;
}

inline std::string kernel_signature(const PrimitiveGraph& g, const Dag& dag, const CandidateKernel& k) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "k%016llx", static_cast<unsigned long long>(fnv1a(kernel_signature_text(g, dag, k))));
  return buf;
}

inline double primitive_flops(const PrimitiveKind& kind, std::span<const Shape> in, const Shape& out) {
  switch (category(kind)) {
    case Category::elementwise: return static_cast<double>(numel(out));
    case Category::reduce: return static_cast<double>(numel(in[0]));
    case Category::opaque: return in.empty() ? static_cast<double>(numel(out)) : static_cast<double>(numel(in[0]));
    case Category::linear: {
      const auto& lin = std::get<Linear>(kind);
      if (lin.kind == LinearKind::conv2d) {
        const Shape& w = in[1];
        return 2.0 * static_cast<double>(numel(out)) * static_cast<double>(w[1] * w[2] * w[3]);
      }
      // [.., m, k] x [.., k, n]: 2 flops per multiply-add over every output element.
      return 2.0 * static_cast<double>(numel(out)) * static_cast<double>(in[0].back());
    }
    default: return 0.0;
  }
}

struct KernelTraffic {
  double bytes = 0;
  double flops = 0;
  int reduces = 0;
};

inline KernelTraffic kernel_traffic(const PrimitiveGraph& g, const Dag& dag, const CandidateKernel& k,
                                    const CostModelConfig& cfg) {
  KernelTraffic t;
  double elements = 0;
  k.inputs.for_each([&](std::size_t p) { elements += static_cast<double>(numel(*g.at(dag.ids[p]).shape)); });
  for (auto& name : k.graph_inputs) elements += static_cast<double>(numel(g.find_input(name)->shape));
  k.outputs.for_each([&](std::size_t p) { elements += static_cast<double>(numel(*g.at(dag.ids[p]).shape)); });
  t.bytes = cfg.bytes_per_element * elements;
  k.members.for_each([&](std::size_t p) {
    const auto& n = g.at(dag.ids[p]);
    std::vector<Shape> in;
    for (auto& v : n.operands()) in.push_back(shape_of(g, v));
    t.flops += primitive_flops(n.kind, in, *n.shape);
    if (category(n.kind) == Category::reduce) ++t.reduces;
  });
  return t;
}

struct CostEstimate {
  KernelClass cls = KernelClass::memory;
  double latency_us = 0;
  bool from_table = false;
  std::string signature;
};

using CostResult = std::variant<CostEstimate, Rejected>;

// Table entries win over the analytic model. `g` must carry inferred shapes.
inline CostResult estimate_cost(const PrimitiveGraph& g, const Dag& dag, const CandidateKernel& k,
                                const CostModelConfig& cfg = {}, const ProfileTable* table = nullptr) {
  auto cls = classify(g, dag, k, cfg);
  if (auto r = std::get_if<Rejected>(&cls)) return *r;
  CostEstimate e;
  e.cls = std::get<KernelClass>(cls);
  e.signature = kernel_signature(g, dag, k);
  if (table) {
    if (auto it = table->find(e.signature); it != table->end()) {
      e.latency_us = it->second;
      e.from_table = true;
      return e;
    }
  }
  auto t = kernel_traffic(g, dag, k, cfg);
  e.latency_us = cfg.launch_overhead + std::pow(cfg.reduce_penalty, t.reduces) * t.bytes / cfg.mem_bandwidth +
                 t.flops / cfg.flop_throughput;
  return e;
}

// Latencies are summed as integer picoseconds so that objective values are
// exact and ties are decided deterministically.
inline int64_t to_picoseconds(double us) { return std::max<int64_t>(1, std::llround(us * 1e6)); }
inline double to_microseconds(int64_t ps) { return static_cast<double>(ps) / 1e6; }

}  // namespace korch
