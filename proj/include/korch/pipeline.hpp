#pragma once

#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "korch/cost_model.hpp"
#include "korch/fission.hpp"
#include "korch/greedy.hpp"
#include "korch/interpreter.hpp"
#include "korch/kernel_identifier.hpp"
#include "korch/orchestrator.hpp"
#include "korch/partition.hpp"
#include "korch/rewrite.hpp"
#include "korch/scheduler.hpp"

namespace korch {

struct PipelineOptions {
  CostModelConfig cost;
  std::optional<ProfileTable> profile;
  int rewrite_depth = 3;
  int beam = 32;
  int probes = 20;
  int max_kernel_primitives = 12;
  int partition_max = 64;
  std::size_t state_cap = 100000;
  SolveOptions solve;
  uint64_t seed = 0;
};

// Everything the orchestration of one primitive graph produced.
struct OrchestratedGraph {
  PrimitiveGraph graph;
  IdentifyResult identified;
  std::vector<PricedKernel> kernels;
  BlpInstance instance;
  Strategy strategy;
  Schedule schedule;
};

inline OrchestratedGraph orchestrate(const PrimitiveGraph& graph, const PipelineOptions& opt) {
  OrchestratedGraph o;
  o.graph = infer_shapes(graph);
  o.identified = identify(o.graph, {opt.state_cap, opt.max_kernel_primitives, 6});
  o.kernels = price_candidates(o.graph, o.identified, opt.cost, opt.profile ? &*opt.profile : nullptr);
  o.instance = build_blp(o.identified.dag, o.kernels);
  o.strategy = optimize(o.instance, opt.solve);
  auto ordered = order_kernels(o.graph, o.identified.dag, o.kernels, o.strategy.selected);
  if (std::holds_alternative<Stuck>(ordered)) throw Error("optimized strategy does not schedule");
  o.schedule = std::get<Schedule>(std::move(ordered));
  return o;
}

struct PartReport {
  OrchestratedGraph best;
  std::size_t variants = 0;
  int64_t greedy_ps = 0;
  std::size_t kernel_offset = 0;
};

struct PipelineResult {
  ComputationGraph input;
  PrimitiveGraph primitive_graph;  // after fission
  PrimitiveGraph optimized_graph;  // chosen rewrite of every part, merged
  std::vector<PartReport> parts;
  Schedule schedule;
  int64_t total_ps = 0;
  int64_t greedy_ps = 0;
  bool optimal = true;
  int cuts_applied = 0;

  std::size_t states() const {
    std::size_t n = 0;
    for (auto& p : parts) n += p.best.identified.states.size();
    return n;
  }
  std::size_t candidates() const {
    std::size_t n = 0;
    for (auto& p : parts) n += p.best.kernels.size();
    return n;
  }
};

namespace detail {

// Gives nodes created by a rewrite ids that are unique across all parts.
inline PrimitiveGraph renumber_new_nodes(PrimitiveGraph g, const std::set<int>& old_ids, int& next_id) {
  std::map<int, int> remap;
  for (auto& n : g.nodes)
    if (!old_ids.count(n.id)) remap[n.id] = next_id++;
  if (remap.empty()) return g;
  for (auto& n : g.nodes) {
    if (remap.count(n.id)) n.id = remap.at(n.id);
    for (auto& op : n.inputs)
      if (!op.src.is_input() && remap.count(op.src.node)) op.src.node = remap.at(op.src.node);
  }
  for (auto& o : g.outputs)
    if (remap.count(o)) o = remap.at(o);
  return g;
}

}  // namespace detail

inline PrimitiveGraph to_primitive_graph(const ComputationGraph& g) {
  auto report = validate(g);
  if (!report.ok()) throw Error("invalid graph: " + report.to_string());
  return eliminate_dead_code(apply_fission(g).graph);
}

// fission -> partition -> per part: rewrite search, identify, price, solve
// (keeping the cheapest rewrite) -> one schedule over the merged graph.
inline PipelineResult run_pipeline(const ComputationGraph& input, const PipelineOptions& opt = {}) {
  PipelineResult res;
  res.input = input;
  res.primitive_graph = infer_shapes(to_primitive_graph(input));
  int next_id = res.primitive_graph.next_id();
  auto rules = builtin_rewrite_rules();
  const ProfileTable* table = opt.profile ? &*opt.profile : nullptr;

  std::vector<PrimitiveGraph> chosen;
  for (auto& part : partition(res.primitive_graph, opt.partition_max)) {
    PartReport rep;
    std::set<int> old_ids;
    for (auto& n : part.nodes) old_ids.insert(n.id);
    auto variants = opt.rewrite_depth > 0
                        ? search(part, rules, {opt.rewrite_depth, opt.beam, opt.probes, opt.seed}).graphs
                        : std::vector<PrimitiveGraph>{infer_shapes(part)};
    rep.variants = variants.size();
    std::optional<OrchestratedGraph> best;
    std::optional<Error> last_error;
    for (auto& v : variants) {
      int id_probe = next_id;
      auto renumbered = detail::renumber_new_nodes(v, old_ids, id_probe);
      try {
        auto o = orchestrate(renumbered, opt);
        if (!best || o.strategy.total_ps < best->strategy.total_ps) {
          best = std::move(o);
          next_id = std::max(next_id, id_probe);
        }
      } catch (const Infeasible& e) {
        last_error = e;
      }
    }
    if (!best) throw Infeasible(last_error ? last_error->what() : "no feasible strategy");
    rep.greedy_ps = greedy_fuse(part, opt.cost, table, opt.max_kernel_primitives).total_ps;
    rep.kernel_offset = 0;
    for (auto& p : res.parts) rep.kernel_offset += p.best.kernels.size();
    rep.best = std::move(*best);
    res.total_ps += rep.best.strategy.total_ps;
    res.greedy_ps += rep.greedy_ps;
    res.optimal = res.optimal && rep.best.strategy.optimal;
    res.cuts_applied += rep.best.strategy.cuts_applied;
    chosen.push_back(rep.best.graph);
    res.parts.push_back(std::move(rep));
  }
  res.optimized_graph = infer_shapes(merge_parts(chosen, res.primitive_graph.outputs));

  // Merge the part schedules: kernel ids become global and tensors crossing
  // a cut are bound to the kernel that produced them.
  res.schedule.graph = res.optimized_graph;
  std::map<int, int> producer;
  for (auto& part : res.parts) {
    for (auto k : part.best.schedule.kernels) {
      k.id += static_cast<int>(part.kernel_offset);
      std::vector<InputBinding> ins;
      for (auto b : k.inputs) {
        if (b.prim >= 0) {
          b.from_kernel += static_cast<int>(part.kernel_offset);
        } else if (auto cut = parse_cut_input(b.graph_input)) {
          b.prim = *cut;
          b.graph_input.clear();
          b.from_kernel = producer.at(*cut);
        }
        ins.push_back(std::move(b));
      }
      k.inputs = std::move(ins);
      for (int o : k.outputs) producer.emplace(o, k.id);
      res.schedule.total_ps += k.cost_ps;
      res.schedule.kernels.push_back(std::move(k));
    }
  }
  return res;
}

inline Json pipeline_strategy_json(const PipelineResult& r) {
  Json j;
  std::vector<int> selected;
  std::map<int, int> counts;
  for (auto& n : r.optimized_graph.nodes) counts[n.id] = 0;
  for (auto& part : r.parts) {
    for (int k : part.best.strategy.selected) selected.push_back(k + static_cast<int>(part.kernel_offset));
    const auto& dag = part.best.identified.dag;
    for (std::size_t p = 0; p < dag.size(); ++p) counts[dag.ids[p]] += part.best.strategy.execution_counts[p];
  }
  j["selected"] = selected;
  j["total_cost_us"] = to_microseconds(r.total_ps);
  Json c = Json::object();
  for (auto& [id, n] : counts) c[std::to_string(id)] = n;
  j["execution_counts"] = c;
  j["optimal"] = r.optimal;
  j["cuts_applied"] = r.cuts_applied;
  return j;
}

struct VerifyReport {
  bool ok = true;
  double max_abs_diff = 0;
  int probes = 0;
};

// Runs the schedule and the primitive graph on random inputs.
inline VerifyReport verify_schedule(const Schedule& s, const PrimitiveGraph& reference, int probes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  VerifyReport v;
  double tol = oracle_tolerance(reference);
  for (int i = 0; i < probes; ++i) {
    auto in = random_inputs(reference, rng);
    auto c = compare(execute_schedule(s, in), eval_graph(reference, in), tol, tol);
    v.ok = v.ok && c.equal;
    v.max_abs_diff = std::max(v.max_abs_diff, c.max_abs_diff);
    ++v.probes;
  }
  return v;
}

}  // namespace korch
