#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "korch/graph.hpp"
#include "korch/node_set.hpp"

namespace korch {

// Sets are over Dag positions throughout this header.
struct CandidateKernel {
  NodeSet members;
  NodeSet inputs;                         // producers outside `members` feeding it
  std::vector<std::string> graph_inputs;  // graph inputs read by members, sorted
  NodeSet outputs;                        // materialized tensors, subset of members
};

inline bool states_less(const NodeSet& a, const NodeSet& b) {
  auto ca = a.count(), cb = b.count();
  if (ca != cb) return ca < cb;
  return lex_less(a, b);
}

// All downward-closed subsets, found by depth-first extension from the
// empty state one ready node at a time.
inline std::vector<NodeSet> enumerate_states(const Dag& dag, std::size_t cap = 100000) {
  std::size_t n = dag.size();
  std::unordered_set<NodeSet, NodeSetHash> seen;
  std::vector<NodeSet> stack{NodeSet(n)};
  seen.insert(stack.back());
  while (!stack.empty()) {
    NodeSet x = std::move(stack.back());
    stack.pop_back();
    for (std::size_t p = 0; p < n; ++p) {
      if (x.test(p)) continue;
      bool ready = true;
      for (int q : dag.preds[p])
        if (!x.test(static_cast<std::size_t>(q))) {
          ready = false;
          break;
        }
      if (!ready) continue;
      NodeSet y = x;
      y.set(p);
      if (seen.insert(y).second) {
        if (seen.size() > cap) throw StateExplosion(seen.size(), cap);
        stack.push_back(std::move(y));
      }
    }
  }
  std::vector<NodeSet> out(seen.begin(), seen.end());
  std::sort(out.begin(), out.end(), states_less);
  return out;
}

// Every difference D2 \ D1 of states with D1 a proper subset of D2.
inline std::vector<NodeSet> enumerate_candidates(const Dag& dag, const std::vector<NodeSet>& states) {
  std::unordered_set<NodeSet, NodeSetHash> found;
  std::vector<std::size_t> counts;
  for (auto& s : states) counts.push_back(s.count());
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t j = 0; j < states.size(); ++j)
      if (counts[i] < counts[j] && states[i].is_subset_of(states[j])) found.insert(states[j] - states[i]);
  (void)dag;
  std::vector<NodeSet> out(found.begin(), found.end());
  std::sort(out.begin(), out.end(), [](const NodeSet& a, const NodeSet& b) { return lex_less(a, b); });
  return out;
}

// Direct check: no outside node q lies on a path between two members.
inline bool is_convex(const Dag& dag, const NodeSet& subset, const std::vector<NodeSet>& desc) {
  NodeSet below(dag.size());  // strict descendants of the subset
  subset.for_each([&](std::size_t p) { below |= desc[p]; });
  for (std::size_t q = 0; q < dag.size(); ++q)
    if (!subset.test(q) && below.test(q) && desc[q].intersects(subset)) return false;
  return true;
}

inline bool is_convex(const Dag& dag, const NodeSet& subset) { return is_convex(dag, subset, dag.descendants()); }

struct OutputSetOptions {
  int max_optional = 6;
};

// Output sets of a convex member set: graph outputs among the members are
// always materialized; any combination of the other members that feed a
// node outside the set may be materialized too. Sets leaving a member
// unused (neither materialized nor feeding a materialized member) are
// skipped, as is the empty set.
inline std::vector<NodeSet> enumerate_output_sets(const Dag& dag, const NodeSet& members,
                                                  const std::vector<NodeSet>& anc, OutputSetOptions opt = {}) {
  NodeSet required = members & dag.outputs;
  std::vector<std::size_t> optional;
  members.for_each([&](std::size_t p) {
    if (required.test(p)) return;
    for (int s : dag.succs[p])
      if (!members.test(static_cast<std::size_t>(s))) {
        optional.push_back(p);
        return;
      }
  });
  std::vector<NodeSet> sets;
  auto emit = [&](NodeSet o) {
    if (o.empty()) return;
    NodeSet live = o;
    o.for_each([&](std::size_t p) { live |= anc[p] & members; });
    if (members.is_subset_of(live)) sets.push_back(std::move(o));
  };
  if (static_cast<int>(optional.size()) > opt.max_optional) {
    emit(required);
    NodeSet all = required;
    for (auto p : optional) all.set(p);
    emit(all);
    return sets;
  }
  for (uint64_t mask = 0; mask < (uint64_t{1} << optional.size()); ++mask) {
    NodeSet o = required;
    for (std::size_t i = 0; i < optional.size(); ++i)
      if (mask >> i & 1u) o.set(optional[i]);
    emit(std::move(o));
  }
  return sets;
}

inline std::vector<NodeSet> enumerate_output_sets(const Dag& dag, const NodeSet& members, OutputSetOptions opt = {}) {
  return enumerate_output_sets(dag, members, dag.ancestors(), opt);
}

struct IdentifyOptions {
  std::size_t state_cap = 100000;
  int max_kernel_primitives = 12;
  int max_optional_outputs = 6;
};

// Reason a member set cannot be one kernel, if any.
inline std::optional<std::string> structural_rejection(const PrimitiveGraph& g, const Dag& dag, const NodeSet& members,
                                                       int max_primitives) {
  if (static_cast<int>(members.count()) > max_primitives) return "too many primitives";
  int linear = 0, opaque = 0;
  members.for_each([&](std::size_t p) {
    const auto& k = g.at(dag.ids[p]).kind;
    linear += is_linear(k);
    opaque += is_opaque(k);
  });
  if (linear >= 2) return "multiple linear transforms";
  if (opaque > 0 && members.count() > 1) return "opaque mixed with other primitives";
  return std::nullopt;
}

struct IdentifyResult {
  Dag dag;
  std::vector<NodeSet> states;
  std::vector<NodeSet> convex_sets;
  std::size_t pruned_sets = 0;
  std::vector<CandidateKernel> candidates;
};

inline CandidateKernel make_candidate(const PrimitiveGraph& g, const Dag& dag, NodeSet members, NodeSet outputs) {
  CandidateKernel k{members, NodeSet(dag.size()), {}, std::move(outputs)};
  std::set<std::string> names;
  members.for_each([&](std::size_t p) {
    for (int q : dag.preds[p])
      if (!members.test(static_cast<std::size_t>(q))) k.inputs.set(static_cast<std::size_t>(q));
    for (auto& op : g.at(dag.ids[p]).inputs)
      if (op.src.is_input()) names.insert(op.src.input);
  });
  k.graph_inputs.assign(names.begin(), names.end());
  k.members = std::move(members);
  return k;
}

inline IdentifyResult identify(const PrimitiveGraph& graph, IdentifyOptions opt = {}) {
  PrimitiveGraph g = infer_shapes(graph);
  IdentifyResult r;
  r.dag = make_dag(g);
  r.states = enumerate_states(r.dag, opt.state_cap);
  r.convex_sets = enumerate_candidates(r.dag, r.states);
  auto anc = r.dag.ancestors();
  for (auto& members : r.convex_sets) {
    if (structural_rejection(g, r.dag, members, opt.max_kernel_primitives)) {
      ++r.pruned_sets;
      continue;
    }
    for (auto& o : enumerate_output_sets(r.dag, members, anc, {opt.max_optional_outputs}))
      r.candidates.push_back(make_candidate(g, r.dag, members, std::move(o)));
  }
  return r;
}

}  // namespace korch
