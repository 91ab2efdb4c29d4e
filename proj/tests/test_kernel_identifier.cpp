#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace korch;
using namespace korch::testing;

namespace {

using Sets = std::set<std::vector<int>>;

Sets sets_of(const std::vector<NodeSet>& v) { return as_member_lists(v); }

// All DAGs on n labelled nodes whose edges go from lower to higher label.
template <class Fn>
void for_each_dag(int n, Fn&& fn) {
  std::vector<Edge> pairs;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) pairs.push_back({a, b});
  for (uint64_t mask = 0; mask < (uint64_t{1} << pairs.size()); ++mask) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (mask >> i & 1u) e.push_back(pairs[i]);
    fn(dag_from_edges(n, e));
  }
}

void expect_theorem(const Dag& dag) {
  auto states = enumerate_states(dag);
  ASSERT_EQ(sets_of(states), brute_force_states(dag));
  ASSERT_EQ(sets_of(enumerate_candidates(dag, states)), brute_force_convex(dag));
}

}  // namespace

TEST(States, Examples) {
  auto chain = dag_from_edges(3, chain_edges(3));
  EXPECT_EQ(sets_of(enumerate_states(chain)), (Sets{{}, {0}, {0, 1}, {0, 1, 2}}));
  auto diamond = dag_from_edges(4, diamond_edges());
  auto ds = enumerate_states(diamond);
  std::vector<std::vector<int>> listed;
  for (auto& s : ds) listed.push_back(s.members());
  EXPECT_EQ(listed, (std::vector<std::vector<int>>{{}, {0}, {0, 1}, {0, 2}, {0, 1, 2}, {0, 1, 2, 3}}));
  EXPECT_EQ(enumerate_states(dag_from_edges(1, {})).size(), 2u);
}

TEST(States, ChainAndIsolatedCounts) {
  for (int n = 1; n <= 30; ++n) EXPECT_EQ(enumerate_states(dag_from_edges(n, chain_edges(n))).size(), static_cast<std::size_t>(n + 1));
  for (int n = 1; n <= 12; ++n) EXPECT_EQ(enumerate_states(dag_from_edges(n, {})).size(), std::size_t{1} << n);
}

TEST(States, CapRaisesStateExplosion) {
  try {
    enumerate_states(dag_from_edges(20, {}), 1000);
    FAIL() << "expected StateExplosion";
  } catch (const StateExplosion& e) {
    EXPECT_GT(e.reached(), 1000u);
  }
}

TEST(Candidates, Examples) {
  auto chain = dag_from_edges(3, chain_edges(3));
  EXPECT_EQ(sets_of(enumerate_candidates(chain, enumerate_states(chain))), (Sets{{0}, {1}, {2}, {0, 1}, {1, 2}, {0, 1, 2}}));
  auto diamond = dag_from_edges(4, diamond_edges());
  auto c = enumerate_candidates(diamond, enumerate_states(diamond));
  EXPECT_EQ(sets_of(c), (Sets{{0}, {1}, {2}, {3}, {0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}, {0, 1, 2}, {1, 2, 3}, {0, 1, 2, 3}}));
  EXPECT_EQ(c.size(), 12u);
  auto one = dag_from_edges(1, {});
  EXPECT_EQ(sets_of(enumerate_candidates(one, enumerate_states(one))), (Sets{{0}}));
}

TEST(Candidates, DifferencesOfStatesAreExactlyTheConvexSets) {
  for (int n = 1; n <= 6; ++n) for_each_dag(n, expect_theorem);
  // Seven nodes: every DAG whose edges join labels at most two apart.
  std::vector<Edge> near;
  for (int a = 0; a < 7; ++a)
    for (int b = a + 1; b < 7 && b <= a + 2; ++b) near.push_back({a, b});
  for (uint64_t mask = 0; mask < (uint64_t{1} << near.size()); ++mask) {
    std::vector<Edge> e;
    for (std::size_t i = 0; i < near.size(); ++i)
      if (mask >> i & 1u) e.push_back(near[i]);
    expect_theorem(dag_from_edges(7, e));
  }
  std::mt19937_64 rng(17);
  for (int iter = 0; iter < 300; ++iter) {
    int n = 7 + static_cast<int>(rng() % 6);
    std::uniform_real_distribution<double> p(0.1, 0.6);
    expect_theorem(dag_from_edges(n, random_edges(n, p(rng), rng, 3)));
  }
}

TEST(Convex, Examples) {
  auto d = dag_from_edges(4, diamond_edges());
  EXPECT_FALSE(is_convex(d, NodeSet::of(4, std::vector<int>{0, 3})));
  EXPECT_TRUE(is_convex(d, NodeSet::of(4, std::vector<int>{1, 2})));
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(is_convex(d, NodeSet::of(4, std::vector<int>{i})));
}

TEST(Convex, AgreesWithReachabilityOracle) {
  std::mt19937_64 rng(23);
  for (int iter = 0; iter < 100; ++iter) {
    int n = 2 + static_cast<int>(rng() % 9);
    auto dag = dag_from_edges(n, random_edges(n, 0.4, rng, 3));
    auto oracle = brute_force_convex(dag);
    for (uint64_t mask = 1; mask < (uint64_t{1} << n); ++mask) {
      auto s = mask_to_set(dag.size(), mask);
      EXPECT_EQ(is_convex(dag, s), oracle.count(s.members()) > 0);
    }
  }
}

TEST(OutputSets, Examples) {
  auto chain = dag_from_edges(3, chain_edges(3));
  EXPECT_EQ(sets_of(enumerate_output_sets(chain, NodeSet::of(3, std::vector<int>{0, 1}))), (Sets{{1}}));
  EXPECT_EQ(sets_of(enumerate_output_sets(chain, NodeSet::full(3))), (Sets{{2}}));
  auto diamond = dag_from_edges(4, diamond_edges());
  // a may be recomputed by the consumer of c instead of being materialized.
  EXPECT_EQ(sets_of(enumerate_output_sets(diamond, NodeSet::of(4, std::vector<int>{0, 1}))), (Sets{{1}, {0, 1}}));
  EXPECT_EQ(sets_of(enumerate_output_sets(diamond, NodeSet::full(4))), (Sets{{3}}));
}

TEST(OutputSets, FanOutOffersEveryRecomputation) {
  // 0 -> {1, 2}, outputs {1, 2}.
  auto d = dag_from_edges(3, {{0, 1}, {0, 2}});
  EXPECT_EQ(sets_of(enumerate_output_sets(d, NodeSet::of(3, std::vector<int>{0, 1}))), (Sets{{1}, {0, 1}}));
  EXPECT_EQ(sets_of(enumerate_output_sets(d, NodeSet::of(3, std::vector<int>{0}))), (Sets{{0}}));
}

TEST(OutputSets, EverySetKeepsAllMembersUseful) {
  std::mt19937_64 rng(29);
  for (int iter = 0; iter < 100; ++iter) {
    int n = 3 + static_cast<int>(rng() % 7);
    auto dag = dag_from_edges(n, random_edges(n, 0.4, rng));
    auto anc = dag.ancestors();
    for (auto& m : enumerate_candidates(dag, enumerate_states(dag)))
      for (auto& o : enumerate_output_sets(dag, m)) {
        ASSERT_TRUE(o.any());
        ASSERT_TRUE(o.is_subset_of(m));
        ASSERT_TRUE((m & dag.outputs).is_subset_of(o));
        NodeSet live = o;
        o.for_each([&](std::size_t p) { live |= anc[p] & m; });
        ASSERT_EQ(live, m);
        // Only tensors someone outside can read are materialized.
        o.for_each([&](std::size_t p) {
          bool external = dag.outputs.test(p);
          for (int s : dag.succs[p]) external = external || !m.test(static_cast<std::size_t>(s));
          EXPECT_TRUE(external);
        });
      }
  }
}

TEST(OutputSets, CapCollapsesManyOptionalOutputs) {
  // Source 0 feeds 1..8, each feeding one sink; members {0..8}.
  std::vector<Edge> e;
  for (int i = 1; i <= 8; ++i) {
    e.push_back({0, i});
    e.push_back({i, i + 8});
  }
  auto d = dag_from_edges(17, e);
  std::vector<int> m;
  for (int i = 0; i <= 8; ++i) m.push_back(i);
  auto sets = enumerate_output_sets(d, NodeSet::of(17, m));
  EXPECT_EQ(sets_of(sets), (Sets{{1, 2, 3, 4, 5, 6, 7, 8}}));
  EXPECT_EQ(enumerate_output_sets(d, NodeSet::of(17, m), OutputSetOptions{8}).size(), 1u);
  // 0 also feeds 4..8 from outside, so it may or may not be materialized.
  EXPECT_EQ(sets_of(enumerate_output_sets(d, NodeSet::of(17, std::vector<int>{0, 1, 2, 3}))), (Sets{{1, 2, 3}, {0, 1, 2, 3}}));
}

TEST(Identify, CandidateInputsAreExactlyTheExternalProducers) {
  auto g = infer_shapes(to_primitive_graph(load_operator_graph("graphs/attention_block.json")));
  auto id = identify(g);
  ASSERT_FALSE(id.candidates.empty());
  for (auto& k : id.candidates) {
    EXPECT_FALSE(k.inputs.intersects(k.members));
    NodeSet want(id.dag.size());
    std::set<std::string> names;
    k.members.for_each([&](std::size_t p) {
      for (auto& op : g.at(id.dag.ids[p]).inputs) {
        if (op.src.is_input()) names.insert(op.src.input);
        else if (!k.members.test(static_cast<std::size_t>(id.dag.position(op.src.node))))
          want.set(static_cast<std::size_t>(id.dag.position(op.src.node)));
      }
    });
    EXPECT_EQ(k.inputs, want);
    EXPECT_EQ(std::set<std::string>(k.graph_inputs.begin(), k.graph_inputs.end()), names);
  }
}

TEST(Identify, StructuralPruning) {
  auto g = infer_shapes(to_primitive_graph(load_operator_graph("graphs/attention_block.json")));
  auto id = identify(g, {100000, 4, 6});
  EXPECT_EQ(id.convex_sets.size(), enumerate_candidates(id.dag, id.states).size());
  std::size_t kept = 0;
  for (auto& m : id.convex_sets) {
    int linear = 0;
    m.for_each([&](std::size_t p) { linear += is_linear(g.at(id.dag.ids[p]).kind); });
    if (m.count() <= 4 && linear < 2) ++kept;
  }
  EXPECT_EQ(id.convex_sets.size() - id.pruned_sets, kept);
  for (auto& k : id.candidates) EXPECT_LE(k.members.count(), 4u);

  PrimitiveGraph op;
  op.inputs.push_back({"x", {2, 6}, "f64"});
  op.nodes.push_back(make_node<PrimitiveKind>(0, Elementwise{EwFn::relu}, {ValueRef::of_input("x")}));
  op.nodes.push_back(make_node<PrimitiveKind>(1, *make_opaque("topk", {{"k", 2}}), {ValueRef::of_node(0)}));
  op.outputs = {1};
  auto oid = identify(infer_shapes(op));
  EXPECT_EQ(oid.convex_sets.size(), 3u);
  EXPECT_EQ(oid.pruned_sets, 1u);
}

TEST(Identify, DiamondFileHasTwelveConvexSubgraphs) {
  auto id = identify(load_primitive_graph("graphs/diamond.json"));
  EXPECT_EQ(id.states.size(), 6u);
  EXPECT_EQ(id.convex_sets.size(), 12u);
}
