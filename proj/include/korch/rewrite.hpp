#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "korch/graph.hpp"
#include "korch/interpreter.hpp"

namespace korch {

// Returns the rewritten graph, or nullopt when the pattern does not match
// at the anchor.
using RewriteFn = std::function<std::optional<PrimitiveGraph>(const PrimitiveGraph&, int anchor)>;

struct RewriteRule {
  std::string name;
  RewriteFn apply;
};

namespace detail {

inline const Node<PrimitiveKind>* node_of(const PrimitiveGraph& g, const ValueRef& v) {
  return v.is_input() ? nullptr : g.find(v.node);
}

inline bool is_plain_matmul(const Node<PrimitiveKind>& n) {
  auto l = std::get_if<Linear>(&n.kind);
  return l && l->kind == LinearKind::matmul;
}

inline bool is_ones(const PrimitiveGraph& g, const ValueRef& v) {
  auto n = node_of(g, v);
  if (!n) return false;
  auto c = std::get_if<Constant>(&n->kind);
  return c && c->fill == Fill::ones;
}

// Finishes a rewrite: drops dead nodes and rejects results that no longer
// form a valid graph.
inline std::optional<PrimitiveGraph> finish_rewrite(PrimitiveGraph g) {
  g = eliminate_dead_code(std::move(g));
  for (auto& n : g.nodes) n.shape.reset();
  if (!validate(g).ok()) return std::nullopt;
  return infer_shapes(std::move(g));
}

// Reduce(sum) over the last axis of an [m,k] tensor becomes a MatMul with
// a [k,1] ones constant followed by a Reshape to [m].
inline std::optional<PrimitiveGraph> reduce_to_matmul(const PrimitiveGraph& in, int anchor) {
  PrimitiveGraph g = infer_shapes(in);
  auto n = g.find(anchor);
  if (!n) return std::nullopt;
  auto r = std::get_if<Reduce>(&n->kind);
  if (!r || r->agg != Aggregator::sum) return std::nullopt;
  auto x = n->operands()[0];
  const Shape s = shape_of(g, x);
  if (s.size() != 2 || normalize_axis(r->axis, 2, "reduce") != 1) return std::nullopt;
  int ones = g.next_id(), mm = ones + 1;
  g.nodes.push_back(make_node<PrimitiveKind>(ones, Constant{{s[1], 1}, Fill::ones, {}}, {}));
  g.nodes.push_back(make_node<PrimitiveKind>(mm, Linear{}, {x, ValueRef::of_node(ones)}));
  auto target = g.find(anchor);
  *target = make_node<PrimitiveKind>(anchor, Reshape{{s[0]}}, {ValueRef::of_node(mm)});
  return finish_rewrite(std::move(g));
}

// (A / Broadcast(s, axis 1)) . B  ->  (A . B) / Broadcast(s, axis 1). The
// anchor is the MatMul; the Div must have no other consumer.
inline std::optional<PrimitiveGraph> div_matmul_swap(const PrimitiveGraph& in, int anchor) {
  PrimitiveGraph g = infer_shapes(in);
  auto n = g.find(anchor);
  if (!n || !is_plain_matmul(*n)) return std::nullopt;
  auto ops = n->operands();
  auto div = node_of(g, ops[0]);
  if (!div) return std::nullopt;
  auto e = std::get_if<Elementwise>(&div->kind);
  if (!e || e->fn != EwFn::div) return std::nullopt;
  if (g.consumers(div->id).size() != 1 || g.is_output(div->id)) return std::nullopt;
  auto dops = div->operands();
  auto bc = node_of(g, dops[1]);
  if (!bc) return std::nullopt;
  auto b = std::get_if<Broadcast>(&bc->kind);
  if (!b || normalize_axis(b->axis, 2, "broadcast") != 1) return std::nullopt;
  auto s = bc->operands()[0];
  const Shape out = *n->shape;
  int mm = g.next_id(), nb = mm + 1;
  int div_id = div->id;
  ValueRef a = dops[0], rhs = ops[1];
  g.nodes.push_back(make_node<PrimitiveKind>(mm, Linear{}, {a, rhs}));
  g.nodes.push_back(make_node<PrimitiveKind>(nb, Broadcast{1, out[1]}, {s}));
  *g.find(anchor) = make_node<PrimitiveKind>(anchor, Elementwise{EwFn::div}, {ValueRef::of_node(mm), ValueRef::of_node(nb)});
  std::erase_if(g.nodes, [&](const auto& x) { return x.id == div_id; });
  return finish_rewrite(std::move(g));
}

// A.B1 and A.B2 (rank 2, shared left operand) become one MatMul against
// [B1 | B2] followed by two Splits that keep the original ids. A ones
// operand is folded into a Pad with fill value 1.
inline std::optional<PrimitiveGraph> matmul_merge(const PrimitiveGraph& in, int anchor) {
  PrimitiveGraph g = infer_shapes(in);
  auto n1 = g.find(anchor);
  if (!n1 || !is_plain_matmul(*n1)) return std::nullopt;
  auto ops1 = n1->operands();
  const Node<PrimitiveKind>* n2 = nullptr;
  for (int id : topo_sort(g)) {
    auto& c = g.at(id);
    if (id != anchor && is_plain_matmul(c) && c.operands()[0] == ops1[0]) {
      n2 = &c;
      break;
    }
  }
  if (!n2) return std::nullopt;
  auto ops2 = n2->operands();
  const Shape b1 = shape_of(g, ops1[1]);
  const Shape b2 = shape_of(g, ops2[1]);
  int id1 = anchor, id2 = n2->id;
  int cat = g.next_id(), mm = cat + 1;
  if (is_ones(g, ops2[1]))
    g.nodes.push_back(make_node<PrimitiveKind>(cat, Pad{{0, 0}, {0, b2[1]}, 1.0}, {ops1[1]}));
  else if (is_ones(g, ops1[1]))
    g.nodes.push_back(make_node<PrimitiveKind>(cat, Pad{{0, b1[1]}, {0, 0}, 1.0}, {ops2[1]}));
  else
    g.nodes.push_back(make_node<PrimitiveKind>(cat, Concat{1, 2}, {ops1[1], ops2[1]}));
  g.nodes.push_back(make_node<PrimitiveKind>(mm, Linear{}, {ops1[0], ValueRef::of_node(cat)}));
  std::vector<int64_t> sizes{b1[1], b2[1]};
  *g.find(id1) = make_node<PrimitiveKind>(id1, Split{1, sizes, 0}, {ValueRef::of_node(mm)});
  *g.find(id2) = make_node<PrimitiveKind>(id2, Split{1, sizes, 1}, {ValueRef::of_node(mm)});
  return finish_rewrite(std::move(g));
}

}  // namespace detail

inline std::vector<RewriteRule> builtin_rewrite_rules() {
  return {
      {"reduce_to_matmul", detail::reduce_to_matmul},
      {"div_matmul_swap", detail::div_matmul_swap},
      {"matmul_merge", detail::matmul_merge},
  };
}

inline std::optional<PrimitiveGraph> apply_rule(const PrimitiveGraph& g, const RewriteRule& rule, int anchor) {
  try {
    return rule.apply(g, anchor);
  } catch (const ShapeError&) {
    return std::nullopt;
  } catch (const CycleError&) {
    return std::nullopt;
  }
}

// Id-independent text form: nodes numbered in post-order discovery from the
// outputs, graph inputs by name.
inline std::string canonical_form(const PrimitiveGraph& g) {
  std::unordered_map<int, int> number;
  int next = 0;
  std::string text;
  std::function<void(int)> visit = [&](int id) {
    if (number.count(id)) return;
    number[id] = -1;
    const auto& n = g.at(id);
    auto ops = n.operands();
    for (auto& v : ops)
      if (!v.is_input()) visit(v.node);
    int k = next++;
    std::string line = "n" + std::to_string(k) + "=" + describe(n.kind) + "(";
    for (auto& v : ops) line += (v.is_input() ? "@" + v.input : "n" + std::to_string(number.at(v.node))) + ",";
    text += line + ");";
    number[id] = k;
  };
  for (int o : g.outputs) visit(o);
  text += "out(";
  for (int o : g.outputs) text += "n" + std::to_string(number.at(o)) + ",";
  return text + ")";
}

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t canonical_hash(const PrimitiveGraph& g) { return fnv1a(canonical_form(g)); }

// True when both graphs agree on `probes` random inputs.
inline bool probe_equivalent(const PrimitiveGraph& a, const PrimitiveGraph& b, int probes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  double tol = std::max(oracle_tolerance(a), oracle_tolerance(b));
  for (int i = 0; i < probes; ++i) {
    auto in = random_inputs(a, rng);
    if (!compare(eval_graph(a, in), eval_graph(b, in), tol, tol).equal) return false;
  }
  return true;
}

struct SearchOptions {
  int max_depth = 3;
  int beam = 32;
  int probes = 20;
  uint64_t seed = 0;
};

struct SearchResult {
  std::vector<PrimitiveGraph> graphs;  // sorted by canonical hash; includes the input
  int rejected = 0;                    // rewrites dropped by the probe check
};

// Breadth-first application of every rule at every anchor, up to
// `max_depth` rounds. Each round expands at most `beam` of the graphs it
// discovered (lowest hash first), which makes shallower results a subset of
// deeper ones.
inline SearchResult search(const PrimitiveGraph& input, const std::vector<RewriteRule>& rules, SearchOptions opt = {}) {
  PrimitiveGraph g = infer_shapes(input);
  SearchResult res;
  std::map<std::string, PrimitiveGraph> seen;
  seen.emplace(canonical_form(g), g);
  std::vector<PrimitiveGraph> frontier{g};
  for (int depth = 0; depth < opt.max_depth && !rules.empty(); ++depth) {
    std::vector<std::pair<uint64_t, std::string>> fresh;
    std::map<std::string, PrimitiveGraph> fresh_graphs;
    for (auto& f : frontier)
      for (auto& rule : rules)
        for (int anchor : topo_sort(f)) {
          auto r = apply_rule(f, rule, anchor);
          if (!r) continue;
          auto key = canonical_form(*r);
          if (seen.count(key) || fresh_graphs.count(key)) continue;
          if (!probe_equivalent(g, *r, opt.probes, opt.seed)) {
            ++res.rejected;
            continue;
          }
          fresh.emplace_back(fnv1a(key), key);
          fresh_graphs.emplace(key, std::move(*r));
        }
    std::sort(fresh.begin(), fresh.end());
    frontier.clear();
    for (auto& [h, key] : fresh) {
      auto& fg = fresh_graphs.at(key);
      if (static_cast<int>(frontier.size()) < opt.beam) frontier.push_back(fg);
      seen.emplace(key, std::move(fg));
    }
    if (frontier.empty()) break;
  }
  std::vector<std::pair<uint64_t, std::string>> order;
  for (auto& [key, _] : seen) order.emplace_back(fnv1a(key), key);
  std::sort(order.begin(), order.end());
  for (auto& [h, key] : order) res.graphs.push_back(std::move(seen.at(key)));
  return res;
}

}  // namespace korch
