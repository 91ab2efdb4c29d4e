#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "korch/error.hpp"
#include "korch/node_set.hpp"
#include "korch/operator.hpp"
#include "korch/primitive.hpp"
#include "korch/tensor.hpp"

namespace korch {

// Where an operand comes from: another node's output or a named graph input.
struct ValueRef {
  int node = -1;
  std::string input;

  static ValueRef of_node(int id) { return ValueRef{id, {}}; }
  static ValueRef of_input(std::string name) { return ValueRef{-1, std::move(name)}; }
  bool is_input() const { return node < 0; }

  friend bool operator==(const ValueRef&, const ValueRef&) = default;
};

struct Operand {
  ValueRef src;
  int slot = 0;
  friend bool operator==(const Operand&, const Operand&) = default;
};

template <class Kind>
struct Node {
  int id = 0;
  Kind kind;
  std::vector<Operand> inputs;
  std::optional<Shape> shape;  // output shape, filled by infer_shapes

  // Operands ordered by slot. Only valid on a validated graph.
  std::vector<ValueRef> operands() const {
    std::vector<Operand> sorted = inputs;
    std::sort(sorted.begin(), sorted.end(), [](const Operand& a, const Operand& b) { return a.slot < b.slot; });
    std::vector<ValueRef> out;
    out.reserve(sorted.size());
    for (auto& o : sorted) out.push_back(o.src);
    return out;
  }

  // Structural equality; inferred shapes are not compared.
  friend bool operator==(const Node& a, const Node& b) {
    return a.id == b.id && a.kind == b.kind && a.inputs == b.inputs;
  }
};

// One graph type serves both levels: operators (OperatorKind) and
// primitives (PrimitiveKind).
template <class Kind>
struct Graph {
  std::vector<TensorSpec> inputs;
  std::vector<Node<Kind>> nodes;
  std::vector<int> outputs;

  const Node<Kind>* find(int id) const {
    for (auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
  Node<Kind>* find(int id) {
    for (auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
  const Node<Kind>& at(int id) const {
    auto n = find(id);
    if (!n) throw Error("no node with id " + std::to_string(id));
    return *n;
  }

  const TensorSpec* find_input(const std::string& name) const {
    for (auto& t : inputs)
      if (t.name == name) return &t;
    return nullptr;
  }

  int next_id() const {
    int m = -1;
    for (auto& n : nodes) m = std::max(m, n.id);
    return m + 1;
  }

  std::unordered_map<int, std::size_t> id_index() const {
    std::unordered_map<int, std::size_t> idx;
    idx.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) idx.emplace(nodes[i].id, i);
    return idx;
  }

  // Node ids consuming the output of `id`, with multiplicity per operand.
  std::vector<int> consumers(int id) const {
    std::vector<int> out;
    for (auto& n : nodes)
      for (auto& op : n.inputs)
        if (op.src.node == id) out.push_back(n.id);
    return out;
  }

  bool is_output(int id) const { return std::find(outputs.begin(), outputs.end(), id) != outputs.end(); }

  friend bool operator==(const Graph&, const Graph&) = default;
};

using PrimitiveGraph = Graph<PrimitiveKind>;
using ComputationGraph = Graph<OperatorKind>;

template <class Kind>
Node<Kind> make_node(int id, Kind kind, std::vector<ValueRef> operands) {
  Node<Kind> n{id, std::move(kind), {}, std::nullopt};
  for (std::size_t i = 0; i < operands.size(); ++i)
    n.inputs.push_back(Operand{std::move(operands[i]), static_cast<int>(i)});
  return n;
}

// Deterministic topological order: Kahn's algorithm with the frontier
// resolved by ascending node id.
template <class Kind>
std::vector<int> topo_sort(const Graph<Kind>& g) {
  auto idx = g.id_index();
  std::vector<int> indeg(g.nodes.size(), 0);
  std::vector<std::vector<std::size_t>> succ(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (auto& op : g.nodes[i].inputs) {
      if (op.src.is_input()) continue;
      auto it = idx.find(op.src.node);
      if (it == idx.end()) continue;
      succ[it->second].push_back(i);
      ++indeg[i];
    }
  }
  std::priority_queue<std::pair<int, std::size_t>, std::vector<std::pair<int, std::size_t>>, std::greater<>> ready;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (indeg[i] == 0) ready.emplace(g.nodes[i].id, i);
  std::vector<int> order;
  order.reserve(g.nodes.size());
  while (!ready.empty()) {
    auto [id, i] = ready.top();
    ready.pop();
    order.push_back(id);
    for (auto s : succ[i])
      if (--indeg[s] == 0) ready.emplace(g.nodes[s].id, s);
  }
  if (order.size() != g.nodes.size()) {
    std::string ids;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
      if (indeg[i] > 0) ids += (ids.empty() ? "" : ",") + std::to_string(g.nodes[i].id);
    throw CycleError("graph has a cycle among nodes {" + ids + "}");
  }
  return order;
}

struct Violation {
  std::string code;  // cycle, dangling_slot, duplicate_slot, dangling_edge, unknown_input, shape, ...
  std::string message;
  std::optional<int> node;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::unordered_map<int, Shape> shapes;  // inferred output shapes when structurally sound

  bool ok() const { return violations.empty(); }
  std::string to_string() const {
    if (ok()) return "ok";
    std::string s;
    for (auto& v : violations) s += v.code + ": " + v.message + "\n";
    return s;
  }
};

namespace detail {

// Nodes lying on a directed cycle, grouped by strongly connected component.
template <class Kind>
std::vector<std::vector<int>> cycle_groups(const Graph<Kind>& g) {
  auto idx = g.id_index();
  std::size_t n = g.nodes.size();
  std::vector<std::vector<std::size_t>> succ(n);
  for (std::size_t i = 0; i < n; ++i)
    for (auto& op : g.nodes[i].inputs)
      if (!op.src.is_input())
        if (auto it = idx.find(op.src.node); it != idx.end()) succ[it->second].push_back(i);
  std::vector<NodeSet> reach(n, NodeSet(n));
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::size_t> stack(succ[s].begin(), succ[s].end());
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      if (reach[s].test(v)) continue;
      reach[s].set(v);
      for (auto w : succ[v]) stack.push_back(w);
    }
  }
  std::vector<std::vector<int>> groups;
  NodeSet done(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (done.test(i) || !reach[i].test(i)) continue;
    std::vector<int> group;
    for (std::size_t j = 0; j < n; ++j)
      if (reach[i].test(j) && reach[j].test(i)) {
        group.push_back(g.nodes[j].id);
        done.set(j);
      }
    std::sort(group.begin(), group.end());
    groups.push_back(std::move(group));
  }
  return groups;
}

}  // namespace detail

// Collects every structural and shape violation; never throws.
template <class Kind>
ValidationReport validate(const Graph<Kind>& g) {
  ValidationReport report;
  auto add = [&](std::string code, std::string msg, std::optional<int> node = std::nullopt) {
    report.violations.push_back(Violation{std::move(code), std::move(msg), node});
  };

  std::set<std::string> input_names;
  for (auto& in : g.inputs) {
    if (!input_names.insert(in.name).second) add("duplicate_input", "duplicate graph input '" + in.name + "'");
    if (in.shape.empty()) add("bad_shape", "graph input '" + in.name + "' has an empty shape");
    for (auto e : in.shape)
      if (e < 1) add("bad_shape", "graph input '" + in.name + "' has extent " + std::to_string(e));
  }

  std::set<int> ids;
  for (auto& n : g.nodes)
    if (!ids.insert(n.id).second) add("duplicate_id", "duplicate node id " + std::to_string(n.id), n.id);

  bool structural_ok = report.ok();
  for (auto& n : g.nodes) {
    int want = arity(n.kind);
    std::vector<int> seen(static_cast<std::size_t>(std::max(want, 0)), 0);
    for (auto& op : n.inputs) {
      if (op.slot < 0 || op.slot >= want) {
        add("extra_slot", "node " + std::to_string(n.id) + " has operand on slot " + std::to_string(op.slot) +
                              " but " + kind_name(n.kind) + " takes " + std::to_string(want),
            n.id);
        structural_ok = false;
        continue;
      }
      ++seen[static_cast<std::size_t>(op.slot)];
      if (op.src.is_input()) {
        if (!input_names.count(op.src.input)) {
          add("unknown_input", "node " + std::to_string(n.id) + " reads unknown graph input '" + op.src.input + "'",
              n.id);
          structural_ok = false;
        }
      } else if (!ids.count(op.src.node)) {
        add("dangling_edge",
            "node " + std::to_string(n.id) + " reads missing node " + std::to_string(op.src.node), n.id);
        structural_ok = false;
      }
    }
    for (int s = 0; s < want; ++s) {
      if (seen[static_cast<std::size_t>(s)] == 0) {
        add("dangling_slot", "node " + std::to_string(n.id) + " slot " + std::to_string(s) + " is unconnected",
            n.id);
        structural_ok = false;
      } else if (seen[static_cast<std::size_t>(s)] > 1) {
        add("duplicate_slot", "node " + std::to_string(n.id) + " slot " + std::to_string(s) + " connected twice",
            n.id);
        structural_ok = false;
      }
    }
  }

  if (g.outputs.empty()) add("no_outputs", "graph declares no outputs");
  for (int o : g.outputs)
    if (!ids.count(o)) {
      add("unknown_output", "output " + std::to_string(o) + " is not a node", o);
      structural_ok = false;
    }

  auto cycles = detail::cycle_groups(g);
  for (auto& grp : cycles) {
    std::string s;
    for (auto id : grp) s += (s.empty() ? "" : ",") + std::to_string(id);
    add("cycle", "cycle through {" + s + "}", grp.front());
  }
  if (!cycles.empty() || !structural_ok) return report;

  // Shape propagation; downstream nodes of a failing node are skipped.
  auto order = topo_sort(g);
  std::unordered_map<int, Shape> shapes;
  for (int id : order) {
    const auto& n = g.at(id);
    std::vector<Shape> in;
    bool ready = true;
    for (auto& src : n.operands()) {
      if (src.is_input()) {
        in.push_back(g.find_input(src.input)->shape);
      } else if (auto it = shapes.find(src.node); it != shapes.end()) {
        in.push_back(it->second);
      } else {
        ready = false;
      }
    }
    if (!ready) continue;
    try {
      shapes[id] = infer_shape(n.kind, in);
    } catch (const ShapeError& e) {
      add("shape", "node " + std::to_string(id) + " (" + kind_name(n.kind) + "): " + e.what(), id);
    }
  }
  if (report.ok()) report.shapes = std::move(shapes);
  return report;
}

// Forward shape propagation in topological order. Idempotent.
template <class Kind>
Graph<Kind> infer_shapes(Graph<Kind> g) {
  auto order = topo_sort(g);
  auto idx = g.id_index();
  for (int id : order) {
    auto& n = g.nodes[idx.at(id)];
    std::vector<Shape> in;
    for (auto& src : n.operands()) {
      if (src.is_input()) {
        auto t = g.find_input(src.input);
        if (!t) throw ShapeError("node " + std::to_string(id) + " reads unknown input '" + src.input + "'");
        in.push_back(t->shape);
      } else {
        auto it = idx.find(src.node);
        if (it == idx.end() || !g.nodes[it->second].shape)
          throw ShapeError("node " + std::to_string(id) + " reads unresolved node " + std::to_string(src.node));
        in.push_back(*g.nodes[it->second].shape);
      }
    }
    try {
      n.shape = infer_shape(n.kind, in);
    } catch (const ShapeError& e) {
      throw ShapeError("node " + std::to_string(id) + " (" + kind_name(n.kind) + "): " + e.what());
    }
  }
  return g;
}

template <class Kind>
const Shape& shape_of(const Graph<Kind>& g, const ValueRef& v) {
  if (v.is_input()) {
    auto t = g.find_input(v.input);
    if (!t) throw ShapeError("unknown input '" + v.input + "'");
    return t->shape;
  }
  const auto& n = g.at(v.node);
  if (!n.shape) throw ShapeError("shape of node " + std::to_string(v.node) + " not inferred");
  return *n.shape;
}

// Drops nodes that do not reach a graph output, and graph inputs no longer read.
template <class Kind>
Graph<Kind> eliminate_dead_code(Graph<Kind> g) {
  auto idx = g.id_index();
  std::vector<char> live(g.nodes.size(), 0);
  std::vector<std::size_t> stack;
  for (int o : g.outputs)
    if (auto it = idx.find(o); it != idx.end()) stack.push_back(it->second);
  while (!stack.empty()) {
    auto i = stack.back();
    stack.pop_back();
    if (live[i]) continue;
    live[i] = 1;
    for (auto& op : g.nodes[i].inputs)
      if (!op.src.is_input())
        if (auto it = idx.find(op.src.node); it != idx.end()) stack.push_back(it->second);
  }
  std::vector<Node<Kind>> kept;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (live[i]) kept.push_back(std::move(g.nodes[i]));
  g.nodes = std::move(kept);
  std::set<std::string> used;
  for (auto& n : g.nodes)
    for (auto& op : n.inputs)
      if (op.src.is_input()) used.insert(op.src.input);
  std::erase_if(g.inputs, [&](const TensorSpec& t) { return !used.count(t.name); });
  return g;
}

// Index-based analysis view of a validated graph. Position i is the i-th
// node of the deterministic topological order, so every edge goes from a
// lower to a higher position.
struct Dag {
  std::vector<int> ids;
  std::unordered_map<int, int> pos;
  std::vector<std::vector<int>> preds;  // deduplicated, ascending
  std::vector<std::vector<int>> succs;  // deduplicated, ascending
  NodeSet outputs;

  std::size_t size() const { return ids.size(); }
  int position(int id) const { return pos.at(id); }

  NodeSet to_set(const std::vector<int>& node_ids) const {
    NodeSet s(size());
    for (int id : node_ids) s.set(static_cast<std::size_t>(position(id)));
    return s;
  }
  std::vector<int> to_ids(const NodeSet& s) const {
    std::vector<int> out;
    s.for_each([&](std::size_t i) { out.push_back(ids[i]); });
    return out;
  }

  // Strict descendants of every node.
  std::vector<NodeSet> descendants() const {
    std::vector<NodeSet> d(size(), NodeSet(size()));
    for (std::size_t i = size(); i-- > 0;)
      for (int s : succs[i]) {
        d[i].set(static_cast<std::size_t>(s));
        d[i] |= d[static_cast<std::size_t>(s)];
      }
    return d;
  }
  std::vector<NodeSet> ancestors() const {
    std::vector<NodeSet> a(size(), NodeSet(size()));
    for (std::size_t i = 0; i < size(); ++i)
      for (int p : preds[i]) {
        a[i].set(static_cast<std::size_t>(p));
        a[i] |= a[static_cast<std::size_t>(p)];
      }
    return a;
  }
};

template <class Kind>
Dag make_dag(const Graph<Kind>& g) {
  Dag d;
  d.ids = topo_sort(g);
  for (std::size_t i = 0; i < d.ids.size(); ++i) d.pos[d.ids[i]] = static_cast<int>(i);
  d.preds.assign(d.ids.size(), {});
  d.succs.assign(d.ids.size(), {});
  for (auto& n : g.nodes) {
    int c = d.pos.at(n.id);
    for (auto& op : n.inputs) {
      if (op.src.is_input()) continue;
      int p = d.pos.at(op.src.node);
      d.preds[static_cast<std::size_t>(c)].push_back(p);
      d.succs[static_cast<std::size_t>(p)].push_back(c);
    }
  }
  for (auto* lists : {&d.preds, &d.succs})
    for (auto& l : *lists) {
      std::sort(l.begin(), l.end());
      l.erase(std::unique(l.begin(), l.end()), l.end());
    }
  d.outputs = NodeSet(d.size());
  for (int o : g.outputs) d.outputs.set(static_cast<std::size_t>(d.pos.at(o)));
  return d;
}

}  // namespace korch
