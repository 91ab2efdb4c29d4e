#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "korch/graph.hpp"

namespace korch {

// Graph input name standing for the tensor produced by node `id` in an
// earlier part.
inline std::string cut_input_name(int id) { return "%" + std::to_string(id); }

inline std::optional<int> parse_cut_input(const std::string& name) {
  if (name.size() < 2 || name[0] != '%') return std::nullopt;
  try {
    std::size_t used = 0;
    int id = std::stoi(name.substr(1), &used);
    if (used + 1 != name.size()) return std::nullopt;
    return id;
  } catch (...) {
    return std::nullopt;
  }
}

struct CutEdge {
  int producer;
  int consumer;
  friend bool operator==(const CutEdge&, const CutEdge&) = default;
  friend auto operator<=>(const CutEdge&, const CutEdge&) = default;
};

// Edges p->c where p has no other outgoing edge and removing the edge
// disconnects p from c in the undirected node graph.
template <class Kind>
std::vector<CutEdge> legal_cut_edges(const Graph<Kind>& g) {
  auto idx = g.id_index();
  std::size_t n = g.nodes.size();
  struct E {
    std::size_t a, b;
  };
  std::vector<E> edges;
  std::vector<int> outdeg(n, 0);
  for (std::size_t c = 0; c < n; ++c)
    for (auto& op : g.nodes[c].inputs)
      if (!op.src.is_input()) {
        auto p = idx.at(op.src.node);
        edges.push_back({p, c});
        ++outdeg[p];
      }
  std::vector<CutEdge> cuts;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    auto [p, c] = edges[e];
    if (outdeg[p] != 1) continue;
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t f = 0; f < edges.size(); ++f) {
      if (f == e) continue;
      adj[edges[f].a].push_back(edges[f].b);
      adj[edges[f].b].push_back(edges[f].a);
    }
    std::vector<char> seen(n, 0);
    std::vector<std::size_t> stack{p};
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      if (seen[v]) continue;
      seen[v] = 1;
      for (auto w : adj[v]) stack.push_back(w);
    }
    if (!seen[c]) cuts.push_back({g.nodes[p].id, g.nodes[c].id});
  }
  std::sort(cuts.begin(), cuts.end());
  return cuts;
}

// Splits a validated graph at legal cut edges into parts of at most
// `max_nodes` nodes where possible. Parts come back in dataflow order; a
// tensor crossing a cut becomes graph input cut_input_name(producer) of the
// consuming part and an output of the producing part.
template <class Kind>
std::vector<Graph<Kind>> partition(const Graph<Kind>& graph, int max_nodes) {
  Graph<Kind> g = infer_shapes(graph);
  if (g.nodes.empty()) return {g};
  auto cuts = legal_cut_edges(g);
  std::set<std::pair<int, int>> cut_set;
  for (auto& c : cuts) cut_set.insert({c.producer, c.consumer});

  // Atoms: undirected components once all legal cut edges are removed.
  auto idx = g.id_index();
  std::size_t n = g.nodes.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t c = 0; c < n; ++c)
    for (auto& op : g.nodes[c].inputs) {
      if (op.src.is_input() || cut_set.count({op.src.node, g.nodes[c].id})) continue;
      parent[root(idx.at(op.src.node))] = root(c);
    }

  auto order = topo_sort(g);
  std::map<std::size_t, int> atom_of_root;
  std::vector<std::vector<int>> atoms;  // node ids in topological order
  for (int id : order) {
    auto r = root(idx.at(id));
    auto [it, fresh] = atom_of_root.emplace(r, static_cast<int>(atoms.size()));
    if (fresh) atoms.emplace_back();
    atoms[static_cast<std::size_t>(it->second)].push_back(id);
  }
  std::vector<int> atom_of(n);
  for (std::size_t a = 0; a < atoms.size(); ++a)
    for (int id : atoms[a]) atom_of[idx.at(id)] = static_cast<int>(a);

  // Topological order over atoms, ties by first appearance in the node order.
  std::vector<std::set<int>> atom_succ(atoms.size());
  std::vector<int> atom_indeg(atoms.size(), 0);
  for (auto& c : cuts) {
    int a = atom_of[idx.at(c.producer)], b = atom_of[idx.at(c.consumer)];
    if (atom_succ[static_cast<std::size_t>(a)].insert(b).second) ++atom_indeg[static_cast<std::size_t>(b)];
  }
  std::set<int> ready;
  for (std::size_t a = 0; a < atoms.size(); ++a)
    if (atom_indeg[a] == 0) ready.insert(static_cast<int>(a));
  std::vector<int> atom_order;
  while (!ready.empty()) {
    int a = *ready.begin();
    ready.erase(ready.begin());
    atom_order.push_back(a);
    for (int b : atom_succ[static_cast<std::size_t>(a)])
      if (--atom_indeg[static_cast<std::size_t>(b)] == 0) ready.insert(b);
  }

  std::vector<std::vector<int>> groups;
  std::size_t current = 0;
  for (int a : atom_order) {
    auto sz = atoms[static_cast<std::size_t>(a)].size();
    if (!groups.empty() && current + sz <= static_cast<std::size_t>(std::max(max_nodes, 1))) {
      groups.back().push_back(a);
      current += sz;
    } else {
      groups.push_back({a});
      current = sz;
    }
  }

  std::vector<int> part_of(n);
  for (std::size_t p = 0; p < groups.size(); ++p)
    for (int a : groups[p])
      for (int id : atoms[static_cast<std::size_t>(a)]) part_of[idx.at(id)] = static_cast<int>(p);

  std::vector<Graph<Kind>> parts(groups.size());
  for (std::size_t p = 0; p < groups.size(); ++p) {
    auto& part = parts[p];
    std::set<std::string> used_inputs;
    std::set<int> cut_in;
    for (std::size_t i = 0; i < n; ++i) {
      if (part_of[i] != static_cast<int>(p)) continue;
      Node<Kind> node = g.nodes[i];
      node.shape.reset();
      for (auto& op : node.inputs) {
        if (op.src.is_input()) {
          used_inputs.insert(op.src.input);
        } else if (part_of[idx.at(op.src.node)] != static_cast<int>(p)) {
          cut_in.insert(op.src.node);
          op.src = ValueRef::of_input(cut_input_name(op.src.node));
        }
      }
      part.nodes.push_back(std::move(node));
    }
    for (auto& in : g.inputs)
      if (used_inputs.count(in.name)) part.inputs.push_back(in);
    for (int id : cut_in) part.inputs.push_back(TensorSpec{cut_input_name(id), *g.nodes[idx.at(id)].shape, "f64"});

    for (int o : g.outputs)
      if (part_of[idx.at(o)] == static_cast<int>(p)) part.outputs.push_back(o);
    std::set<int> exported;
    for (auto& c : cuts)
      if (part_of[idx.at(c.producer)] == static_cast<int>(p) && part_of[idx.at(c.consumer)] != static_cast<int>(p))
        exported.insert(c.producer);
    for (int id : exported)
      if (!part.is_output(id)) part.outputs.push_back(id);
  }
  return parts;
}

// Inverse of partition: reconnects cut inputs to their producers.
template <class Kind>
Graph<Kind> merge_parts(const std::vector<Graph<Kind>>& parts, const std::vector<int>& outputs) {
  Graph<Kind> g;
  std::set<std::string> seen_inputs;
  for (auto& part : parts) {
    for (auto& in : part.inputs)
      if (!parse_cut_input(in.name) && seen_inputs.insert(in.name).second) g.inputs.push_back(in);
    for (auto node : part.nodes) {
      for (auto& op : node.inputs)
        if (op.src.is_input())
          if (auto id = parse_cut_input(op.src.input)) op.src = ValueRef::of_node(*id);
      node.shape.reset();
      g.nodes.push_back(std::move(node));
    }
  }
  g.outputs = outputs;
  return g;
}

}  // namespace korch
