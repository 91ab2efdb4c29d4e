#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace korch;
using namespace korch::testing;

namespace {

ValueRef in(const std::string& s) { return ValueRef::of_input(s); }
ValueRef nd(int id) { return ValueRef::of_node(id); }

struct Harness {
  PrimitiveGraph g;
  Dag dag;
  std::vector<PricedKernel> kernels;

  explicit Harness(PrimitiveGraph graph) : g(infer_shapes(std::move(graph))), dag(make_dag(g)) {}

  NodeSet set(std::vector<int> ids) const {
    NodeSet s(dag.size());
    for (int id : ids) s.set(static_cast<std::size_t>(dag.position(id)));
    return s;
  }
  int add(std::vector<int> members, std::vector<int> outputs, int64_t cost = 1) {
    auto k = make_candidate(g, dag, set(std::move(members)), set(std::move(outputs)));
    auto e = estimate_cost(g, dag, k, {});
    CostEstimate est;
    if (auto p = std::get_if<CostEstimate>(&e)) est = *p;
    kernels.push_back({k, est, cost});
    return static_cast<int>(kernels.size()) - 1;
  }
  Schedule order(std::vector<int> selected) const {
    auto r = order_kernels(g, dag, kernels, selected);
    return std::get<Schedule>(std::move(r));
  }
};

PrimitiveGraph softmax_primitives(Shape shape) {
  ComputationGraph sm;
  sm.inputs.push_back({"x", shape, "f64"});
  sm.nodes.push_back(make_node<OperatorKind>(0, Softmax{-1}, {in("x")}));
  sm.outputs = {0};
  return apply_fission(sm).graph;
}

DenseTensor softmax_rows(const DenseTensor& x) {
  auto out = x;
  int64_t cols = x.shape.back(), rows = numel(x.shape) / cols;
  for (int64_t r = 0; r < rows; ++r) {
    double sum = 0;
    for (int64_t c = 0; c < cols; ++c) sum += std::exp(x.data[static_cast<std::size_t>(r * cols + c)]);
    for (int64_t c = 0; c < cols; ++c)
      out.data[static_cast<std::size_t>(r * cols + c)] = std::exp(x.data[static_cast<std::size_t>(r * cols + c)]) / sum;
  }
  return out;
}

std::vector<int> topo_ids(const PrimitiveGraph& g) { return topo_sort(g); }

}  // namespace

TEST(OrderKernels, SoftmaxFourKernelsRespectDependencies) {
  Harness s(softmax_primitives({2, 8}));
  auto order = topo_ids(s.g);
  ASSERT_EQ(order.size(), 4u);
  // Register the singletons in reverse so the index order disagrees with
  // the dependency order.
  std::vector<int> sel;
  for (auto it = order.rbegin(); it != order.rend(); ++it) sel.push_back(s.add({*it}, {*it}));
  auto sched = s.order(sel);
  ASSERT_EQ(sched.kernels.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(sched.kernels[i].primitives, std::vector<int>(1, order[i]));

  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    auto x = random_inputs(s.g, rng, -3, 3);
    auto got = execute_schedule(sched, x).at(s.g.outputs[0]);
    auto c = compare(got, softmax_rows(x.at("x")), 1e-9, 1e-9);
    EXPECT_TRUE(c.equal) << c.max_abs_diff;
  }
  auto dot = emit_dot(sched);
  std::size_t clusters = 0;
  for (auto pos = dot.find("subgraph cluster_"); pos != std::string::npos; pos = dot.find("subgraph cluster_", pos + 1))
    ++clusters;
  EXPECT_EQ(clusters, 4u);
  EXPECT_EQ(dot, emit_dot(sched));
}

TEST(OrderKernels, WholeGraphKernel) {
  Harness s(softmax_primitives({3, 5}));
  std::vector<int> all;
  for (auto& n : s.g.nodes) all.push_back(n.id);
  int k = s.add(all, s.g.outputs);
  auto sched = s.order({k});
  ASSERT_EQ(sched.kernels.size(), 1u);
  EXPECT_EQ(sched.kernels[0].inputs.size(), 1u);
  EXPECT_EQ(sched.kernels[0].inputs[0].graph_input, "x");
  std::mt19937_64 rng(2);
  auto x = random_inputs(s.g, rng);
  EXPECT_TRUE(compare(execute_schedule(sched, x).at(s.g.outputs[0]), eval_graph(s.g, x).at(s.g.outputs[0])).equal);
}

TEST(OrderKernels, MutualCycleIsStuck) {
  // q -> x and r -> v; positions follow ids.
  Harness s(graph_from_edges(4, {{0, 2}, {1, 3}}));
  s.add({2, 1}, {2, 1});
  s.add({0, 3}, {0, 3});
  auto r = order_kernels(s.g, s.dag, s.kernels, {0, 1});
  ASSERT_TRUE(std::holds_alternative<Stuck>(r));
  EXPECT_EQ(std::get<Stuck>(r).kernels, (std::vector<int>{0, 1}));
}

TEST(OrderKernels, EarliestProducerIsBound) {
  // 1 -> {2, 3} as in the fan-out file.
  Harness s(load_primitive_graph("graphs/fanout.json"));
  int both = s.add({1, 2}, {1, 2});
  int single = s.add({1}, {1});
  int tail = s.add({3}, {3});
  auto sched = s.order({tail, single, both});
  ASSERT_EQ(sched.kernels.size(), 3u);
  EXPECT_EQ(sched.kernels[0].id, both);
  ASSERT_EQ(sched.kernels[2].id, tail);
  EXPECT_EQ(sched.kernels[2].inputs[0].prim, 1);
  EXPECT_EQ(sched.kernels[2].inputs[0].from_kernel, both);
}

TEST(ExecuteSchedule, RedundantComputationGivesTheSameOutputs) {
  Harness s(load_primitive_graph("graphs/fanout.json"));
  int a = s.add({1, 2}, {2});
  int b = s.add({1, 3}, {3});
  auto sched = s.order({a, b});
  std::mt19937_64 rng(3);
  for (int i = 0; i < 10; ++i) {
    auto x = random_inputs(s.g, rng, -2, 2);
    auto want = eval_graph(s.g, x);
    auto got = execute_schedule(sched, x);
    EXPECT_EQ(got.at(2), want.at(2));
    EXPECT_EQ(got.at(3), want.at(3));
  }
}

TEST(ExecuteSchedule, LayoutOnlyGraphIsBitExact) {
  PrimitiveGraph g;
  g.inputs.push_back({"x", {3, 4}, "f64"});
  g.nodes.push_back(make_node<PrimitiveKind>(0, Transpose{{1, 0}}, {in("x")}));
  g.nodes.push_back(make_node<PrimitiveKind>(1, Reshape{{12}}, {nd(0)}));
  g.nodes.push_back(make_node<PrimitiveKind>(2, Reshape{{4, 3}}, {nd(1)}));
  g.nodes.push_back(make_node<PrimitiveKind>(3, Transpose{{1, 0}}, {nd(2)}));
  g.outputs = {3};
  Harness s(g);
  auto sched = s.order({s.add({0, 1}, {1}), s.add({2, 3}, {3})});
  std::mt19937_64 rng(4);
  auto x = random_inputs(s.g, rng);
  EXPECT_EQ(execute_schedule(sched, x).at(3), x.at("x"));
}

TEST(ExecuteSchedule, KernelsSeeOnlyMaterializedTensors) {
  Harness s(load_primitive_graph("graphs/diamond.json"));
  // The relu/neg kernel reads exp, which the first kernel does not emit.
  int head = s.add({0, 1}, {1});
  int rest = s.add({2, 3}, {3});
  auto r = order_kernels(s.g, s.dag, s.kernels, {head, rest});
  EXPECT_TRUE(std::holds_alternative<Stuck>(r));
}

TEST(Schedule, OptimizedSchedulesMatchTheInterpreter) {
  for (auto name : {"graphs/diamond.json", "graphs/fanout.json"}) {
    auto g = infer_shapes(load_primitive_graph(name));
    auto id = identify(g);
    auto kernels = price_candidates(g, id);
    auto b = build_blp(id.dag, kernels);
    auto strat = optimize(b);
    auto sched = std::get<Schedule>(order_kernels(g, id.dag, kernels, strat.selected));
    EXPECT_EQ(sched.total_ps, strat.total_ps) << name;
    int64_t sum = 0;
    double bytes = 0;
    for (auto& k : sched.kernels) {
      sum += k.cost_ps;
      for (int o : k.outputs) bytes += 8.0 * static_cast<double>(numel(*g.at(o).shape));
    }
    EXPECT_EQ(sched.total_ps, sum);
    EXPECT_EQ(materialized_bytes(sched), bytes);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 10; ++i) {
      auto x = random_inputs(g, rng);
      auto want = eval_graph(g, x);
      auto got = execute_schedule(sched, x);
      for (int o : g.outputs) EXPECT_TRUE(compare(got.at(o), want.at(o), 1e-9, 1e-9).equal) << name;
    }
  }
}

TEST(ScheduleJson, RoundTrips) {
  auto g = infer_shapes(load_primitive_graph("graphs/diamond.json"));
  auto id = identify(g);
  auto kernels = price_candidates(g, id);
  auto b = build_blp(id.dag, kernels);
  auto sched = std::get<Schedule>(order_kernels(g, id.dag, kernels, optimize(b).selected));
  auto text = schedule_to_json(sched).dump();
  auto back = schedule_from_json(Json::parse(text));
  EXPECT_EQ(back.total_ps, sched.total_ps);
  ASSERT_EQ(back.kernels.size(), sched.kernels.size());
  for (std::size_t i = 0; i < sched.kernels.size(); ++i) {
    EXPECT_EQ(back.kernels[i].id, sched.kernels[i].id);
    EXPECT_EQ(back.kernels[i].primitives, sched.kernels[i].primitives);
    EXPECT_EQ(back.kernels[i].outputs, sched.kernels[i].outputs);
    EXPECT_EQ(back.kernels[i].cost_ps, sched.kernels[i].cost_ps);
    EXPECT_EQ(back.kernels[i].cls, sched.kernels[i].cls);
  }
  EXPECT_EQ(schedule_to_json(back).dump(), text);
  std::mt19937_64 rng(6);
  auto x = random_inputs(g, rng);
  EXPECT_EQ(execute_schedule(back, x), execute_schedule(sched, x));

  auto j = Json::parse(text);
  EXPECT_EQ(j["kernels"][0]["class"], "mem");
  j["kernels"][0]["class"] = "gpu";
  EXPECT_THROW(schedule_from_json(j), ParseError);
}

TEST(EmitDot, EmptyAndPrimitiveGraphs) {
  Schedule empty;
  EXPECT_EQ(emit_dot(empty), "digraph schedule {\n}\n");
  auto g = load_primitive_graph("graphs/diamond.json");
  auto dot = emit_dot(g);
  EXPECT_EQ(dot.rfind("digraph", 0), 0u);
  EXPECT_NE(dot.find("->"), std::string::npos);
  EXPECT_EQ(dot, emit_dot(g));
}

TEST(StrategyJson, Fields) {
  auto g = infer_shapes(load_primitive_graph("graphs/fanout.json"));
  auto id = identify(g);
  auto kernels = price_candidates(g, id);
  auto b = build_blp(id.dag, kernels);
  auto s = optimize(b);
  auto j = strategy_to_json(s, id.dag, s.selected);
  EXPECT_EQ(j["selected"].get<std::vector<int>>(), s.selected);
  EXPECT_DOUBLE_EQ(j["total_cost_us"].get<double>(), s.total_cost_us());
  EXPECT_EQ(j["execution_counts"].size(), g.nodes.size());
  EXPECT_TRUE(j["optimal"].get<bool>());
  EXPECT_EQ(j["cuts_applied"], 0);
}
