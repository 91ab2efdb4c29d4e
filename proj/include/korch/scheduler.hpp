#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "korch/interpreter.hpp"
#include "korch/orchestrator.hpp"
#include "korch/serialize.hpp"

namespace korch {

struct InputBinding {
  int prim = -1;            // producing primitive id, or -1 for a graph input
  std::string graph_input;  // set when prim < 0
  int from_kernel = -1;     // -1: the tensor comes from the graph inputs
};

struct ScheduledKernel {
  int id = 0;
  std::vector<int> primitives;  // node ids in topological order
  std::vector<InputBinding> inputs;
  std::vector<int> outputs;
  KernelClass cls = KernelClass::memory;
  int64_t cost_ps = 0;
  std::string signature;

  double cost_us() const { return to_microseconds(cost_ps); }
};

struct Schedule {
  PrimitiveGraph graph;
  std::vector<ScheduledKernel> kernels;
  int64_t total_ps = 0;

  double total_cost_us() const { return to_microseconds(total_ps); }
};

struct Stuck {
  std::vector<int> kernels;
};

inline ScheduledKernel describe_kernel(const Dag& dag, const PricedKernel& k, int id) {
  ScheduledKernel s;
  s.id = id;
  s.primitives = dag.to_ids(k.kernel.members);
  s.outputs = dag.to_ids(k.kernel.outputs);
  s.cls = k.estimate.cls;
  s.cost_ps = k.cost_ps;
  s.signature = k.estimate.signature;
  return s;
}

// Ready-list ordering of the selected kernels. Among ready kernels the
// lowest index fires first; a tensor produced by several kernels is bound
// to the one that fired first.
inline std::variant<Schedule, Stuck> order_kernels(const PrimitiveGraph& g, const Dag& dag,
                                                   const std::vector<PricedKernel>& kernels,
                                                   const std::vector<int>& selected) {
  Schedule sched;
  sched.graph = g;
  std::map<std::size_t, int> producer;  // position -> kernel that first produced it
  std::vector<int> pending = selected;
  std::sort(pending.begin(), pending.end());
  for (bool progress = true; progress && !pending.empty();) {
    progress = false;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const auto& k = kernels.at(static_cast<std::size_t>(pending[i]));
      bool ready = true;
      k.kernel.inputs.for_each([&](std::size_t p) { ready = ready && producer.count(p); });
      if (!ready) continue;
      ScheduledKernel s = describe_kernel(dag, k, pending[i]);
      k.kernel.inputs.for_each([&](std::size_t p) { s.inputs.push_back({dag.ids[p], {}, producer.at(p)}); });
      for (auto& name : k.kernel.graph_inputs) s.inputs.push_back({-1, name, -1});
      k.kernel.outputs.for_each([&](std::size_t p) { producer.emplace(p, pending[i]); });
      sched.total_ps += s.cost_ps;
      sched.kernels.push_back(std::move(s));
      pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
      progress = true;
      break;
    }
  }
  if (!pending.empty()) return Stuck{pending};
  return sched;
}

// Runs the kernels in order. Only each kernel's outputs survive it, so a
// kernel can see nothing but graph inputs and tensors bound to earlier
// kernels' outputs.
inline NodeValues execute_schedule(const Schedule& s, const TensorMap& inputs) {
  const PrimitiveGraph& g = s.graph;
  std::map<std::pair<int, int>, DenseTensor> materialized;  // (kernel, prim) -> value
  for (auto& k : s.kernels) {
    std::map<int, int> bound;
    for (auto& b : k.inputs)
      if (b.prim >= 0) bound[b.prim] = b.from_kernel;
    std::map<int, DenseTensor> local;
    for (int id : k.primitives) {
      const auto& n = g.at(id);
      std::vector<DenseTensor> args;
      for (auto& v : n.operands()) {
        if (v.is_input()) {
          auto it = inputs.find(v.input);
          if (it == inputs.end()) throw MissingInput("missing input '" + v.input + "'");
          args.push_back(it->second);
        } else if (auto it = local.find(v.node); it != local.end()) {
          args.push_back(it->second);
        } else {
          auto b = bound.find(v.node);
          if (b == bound.end()) throw Error("kernel " + std::to_string(k.id) + " reads unbound primitive " + std::to_string(v.node));
          args.push_back(materialized.at({b->second, v.node}));
        }
      }
      local[id] = eval_primitive(n.kind, args);
    }
    for (int o : k.outputs) materialized[{k.id, o}] = local.at(o);
  }
  NodeValues out;
  for (int o : g.outputs) {
    for (auto& k : s.kernels)
      if (std::find(k.outputs.begin(), k.outputs.end(), o) != k.outputs.end()) {
        out[o] = materialized.at({k.id, o});
        break;
      }
    if (!out.count(o)) throw Error("graph output " + std::to_string(o) + " is not produced by the schedule");
  }
  return out;
}

// Bytes moved between kernels: every materialized output once per kernel.
inline double materialized_bytes(const Schedule& s, double bytes_per_element = 8.0) {
  PrimitiveGraph g = infer_shapes(s.graph);
  double total = 0;
  for (auto& k : s.kernels)
    for (int o : k.outputs) total += bytes_per_element * static_cast<double>(numel(*g.at(o).shape));
  return total;
}

namespace detail {

inline std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

inline std::string fmt_us(double us) {
  std::ostringstream os;
  os.precision(6);
  os << us;
  return os.str();
}

}  // namespace detail

inline std::string emit_dot(const PrimitiveGraph& g) {
  std::ostringstream os;
  os << "digraph primitives {\n";
  for (auto& in : g.inputs) os << "  \"in_" << detail::dot_escape(in.name) << "\" [shape=box,label=\"" << detail::dot_escape(in.name) << "\"];\n";
  for (int id : topo_sort(g)) {
    const auto& n = g.at(id);
    os << "  \"p" << id << "\" [label=\"" << id << ": " << detail::dot_escape(kind_name(n.kind)) << "\""
       << (g.is_output(id) ? ",peripheries=2" : "") << "];\n";
  }
  for (int id : topo_sort(g))
    for (auto& v : g.at(id).operands())
      os << "  \"" << (v.is_input() ? "in_" + detail::dot_escape(v.input) : "p" + std::to_string(v.node)) << "\" -> \"p" << id
         << "\";\n";
  os << "}\n";
  return os.str();
}

// Kernels become clusters; a primitive computed by several kernels appears
// once per kernel.
inline std::string emit_dot(const Schedule& s) {
  std::ostringstream os;
  const PrimitiveGraph& g = s.graph;
  os << "digraph schedule {\n";
  std::set<std::string> used_inputs;
  for (auto& k : s.kernels)
    for (auto& b : k.inputs)
      if (b.prim < 0) used_inputs.insert(b.graph_input);
  for (auto& name : used_inputs)
    os << "  \"in_" << detail::dot_escape(name) << "\" [shape=box,label=\"" << detail::dot_escape(name) << "\"];\n";
  for (auto& k : s.kernels) {
    os << "  subgraph cluster_k" << k.id << " {\n";
    os << "    label=\"K" << k.id << " " << class_tag(k.cls) << " " << detail::fmt_us(k.cost_us()) << " us\";\n";
    for (int p : k.primitives) {
      bool is_out = std::find(k.outputs.begin(), k.outputs.end(), p) != k.outputs.end();
      os << "    \"k" << k.id << "_p" << p << "\" [label=\"" << p << ": " << detail::dot_escape(kind_name(g.at(p).kind)) << "\""
         << (is_out ? ",peripheries=2" : "") << "];\n";
    }
    os << "  }\n";
  }
  for (auto& k : s.kernels) {
    std::map<int, int> bound;
    for (auto& b : k.inputs)
      if (b.prim >= 0) bound[b.prim] = b.from_kernel;
    for (int p : k.primitives)
      for (auto& v : g.at(p).operands()) {
        std::string src;
        if (v.is_input()) src = "in_" + detail::dot_escape(v.input);
        else if (std::find(k.primitives.begin(), k.primitives.end(), v.node) != k.primitives.end())
          src = "k" + std::to_string(k.id) + "_p" + std::to_string(v.node);
        else src = "k" + std::to_string(bound.at(v.node)) + "_p" + std::to_string(v.node);
        os << "  \"" << src << "\" -> \"k" << k.id << "_p" << p << "\";\n";
      }
  }
  os << "}\n";
  return os.str();
}

inline Json schedule_to_json(const Schedule& s) {
  Json j;
  j["kernels"] = Json::array();
  for (auto& k : s.kernels) {
    Json kj;
    kj["id"] = k.id;
    kj["primitives"] = k.primitives;
    kj["inputs"] = Json::array();
    for (auto& b : k.inputs) {
      Json bj;
      if (b.prim >= 0) bj["prim"] = b.prim;
      else bj["input"] = b.graph_input;
      if (b.from_kernel >= 0) bj["from_kernel"] = b.from_kernel;
      else bj["from_kernel"] = "graph";
      kj["inputs"].push_back(std::move(bj));
    }
    kj["outputs"] = k.outputs;
    kj["class"] = class_tag(k.cls);
    kj["cost_us"] = k.cost_us();
    kj["signature"] = k.signature;
    j["kernels"].push_back(std::move(kj));
  }
  j["total_cost_us"] = s.total_cost_us();
  j["graph"] = to_json(s.graph);
  return j;
}

inline Schedule schedule_from_json(const Json& j) {
  using namespace detail;
  Schedule s;
  s.graph = from_json<PrimitiveKind>(field(j, "graph", "$"));
  const auto& ks = field(j, "kernels", "$");
  if (!ks.is_array()) throw ParseError("$.kernels: expected an array");
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::string p = "$.kernels[" + std::to_string(i) + "]";
    ScheduledKernel k;
    k.id = get<int>(ks[i], "id", p);
    k.primitives = get<std::vector<int>>(ks[i], "primitives", p);
    k.outputs = get<std::vector<int>>(ks[i], "outputs", p);
    auto cls = get<std::string>(ks[i], "class", p);
    if (cls != "mem" && cls != "compute") throw ParseError(p + ".class: expected \"mem\" or \"compute\"");
    k.cls = cls == "mem" ? KernelClass::memory : KernelClass::compute;
    k.cost_ps = to_picoseconds(get<double>(ks[i], "cost_us", p));
    k.signature = get_or<std::string>(ks[i], "signature", "", p);
    const auto& ins = field(ks[i], "inputs", p);
    for (std::size_t b = 0; b < ins.size(); ++b) {
      std::string bp = p + ".inputs[" + std::to_string(b) + "]";
      InputBinding ib;
      if (ins[b].contains("prim")) ib.prim = get<int>(ins[b], "prim", bp);
      else ib.graph_input = get<std::string>(ins[b], "input", bp);
      const auto& from = field(ins[b], "from_kernel", bp);
      ib.from_kernel = from.is_number_integer() ? from.get<int>() : -1;
      k.inputs.push_back(std::move(ib));
    }
    s.total_ps += k.cost_ps;
    s.kernels.push_back(std::move(k));
  }
  return s;
}

inline Json strategy_to_json(const Strategy& s, const Dag& dag, const std::vector<int>& kernel_ids) {
  Json j;
  j["selected"] = kernel_ids;
  j["total_cost_us"] = s.total_cost_us();
  Json counts = Json::object();
  for (std::size_t p = 0; p < s.execution_counts.size(); ++p) counts[std::to_string(dag.ids[p])] = s.execution_counts[p];
  j["execution_counts"] = counts;
  j["optimal"] = s.optimal;
  j["cuts_applied"] = s.cuts_applied;
  return j;
}

}  // namespace korch
