#pragma once

#include <optional>
#include <vector>

#include "korch/cost_model.hpp"
#include "korch/kernel_identifier.hpp"
#include "korch/orchestrator.hpp"

namespace korch {

struct GreedyResult {
  std::vector<PricedKernel> kernels;  // in creation order, which is a valid schedule order
  int64_t total_ps = 0;

  double total_cost_us() const { return to_microseconds(total_ps); }
};

namespace detail {

// Members that must be materialized: graph outputs and members read by a
// node outside the region.
inline NodeSet region_outputs(const Dag& dag, const NodeSet& region) {
  NodeSet out = region & dag.outputs;
  region.for_each([&](std::size_t p) {
    for (int s : dag.succs[p])
      if (!region.test(static_cast<std::size_t>(s))) out.set(p);
  });
  return out;
}

}  // namespace detail

// Fuse-until-blocked baseline. Linear and opaque primitives run alone.
// Every other unassigned node, in topological order, seeds a region that
// absorbs later nodes whose producers are all assigned or inside the region,
// as long as the region stays convex and within the size limit. Regions
// that the cost model rejects are split in topological halves until
// accepted. The result is a disjoint cover.
inline GreedyResult greedy_fuse(const PrimitiveGraph& graph, const CostModelConfig& cfg = {},
                                const ProfileTable* table = nullptr, int max_kernel_primitives = 12) {
  PrimitiveGraph g = infer_shapes(graph);
  Dag dag = make_dag(g);
  auto desc = dag.descendants();
  std::size_t n = dag.size();
  std::vector<char> assigned(n, 0);
  GreedyResult res;

  auto solo = [&](std::size_t p) {
    const auto& k = g.at(dag.ids[p]).kind;
    return is_linear(k) || is_opaque(k);
  };

  std::function<void(const NodeSet&)> emit = [&](const NodeSet& region) {
    auto k = make_candidate(g, dag, region, detail::region_outputs(dag, region));
    auto r = estimate_cost(g, dag, k, cfg, table);
    if (auto e = std::get_if<CostEstimate>(&r)) {
      int64_t ps = to_picoseconds(e->latency_us);
      res.total_ps += ps;
      res.kernels.push_back(PricedKernel{std::move(k), *e, ps});
      return;
    }
    auto members = region.members();
    if (members.size() < 2) throw Error("greedy fusion cannot place primitive " + std::to_string(dag.ids[members[0]]));
    std::size_t half = members.size() / 2;
    NodeSet a(n), b(n);
    for (std::size_t i = 0; i < members.size(); ++i) (i < half ? a : b).set(static_cast<std::size_t>(members[i]));
    emit(a);
    emit(b);
  };

  for (std::size_t v = 0; v < n; ++v) {
    if (assigned[v]) continue;
    NodeSet region(n);
    region.set(v);
    if (!solo(v)) {
      for (std::size_t w = v + 1; w < n && static_cast<int>(region.count()) < max_kernel_primitives; ++w) {
        if (assigned[w] || solo(w)) continue;
        bool touches = false, fed = true;
        for (int p : dag.preds[w]) {
          auto pu = static_cast<std::size_t>(p);
          touches = touches || region.test(pu);
          fed = fed && (region.test(pu) || assigned[pu]);
        }
        if (!touches || !fed) continue;
        NodeSet grown = region;
        grown.set(w);
        if (is_convex(dag, grown, desc)) region = std::move(grown);
      }
    }
    region.for_each([&](std::size_t p) { assigned[p] = 1; });
    emit(region);
  }
  return res;
}

// Indices of the priced kernels matching the greedy kernels (same members
// and outputs), or nullopt when some greedy kernel is not a candidate.
inline std::optional<std::vector<int>> as_selection(const GreedyResult& gr, const std::vector<PricedKernel>& kernels) {
  std::vector<int> sel;
  for (auto& gk : gr.kernels) {
    int found = -1;
    for (std::size_t i = 0; i < kernels.size(); ++i)
      if (kernels[i].kernel.members == gk.kernel.members && kernels[i].kernel.outputs == gk.kernel.outputs) {
        found = static_cast<int>(i);
        break;
      }
    if (found < 0) return std::nullopt;
    sel.push_back(found);
  }
  return sel;
}

}  // namespace korch
