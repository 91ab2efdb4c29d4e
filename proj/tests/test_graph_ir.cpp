#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace korch;
using namespace korch::testing;

namespace {

ValueRef in(const std::string& s) { return ValueRef::of_input(s); }
ValueRef nd(int id) { return ValueRef::of_node(id); }
Elementwise ew(EwFn fn, double c = 1.0) { return Elementwise{fn, c}; }

PrimitiveGraph exp_reduce() {
  PrimitiveGraph g;
  g.inputs.push_back({"x", {2, 3}, "f64"});
  g.nodes.push_back(make_node<PrimitiveKind>(0, ew(EwFn::exp), {in("x")}));
  g.nodes.push_back(make_node<PrimitiveKind>(1, Reduce{1, Aggregator::sum}, {nd(0)}));
  g.outputs = {1};
  return g;
}

bool has_code(const ValidationReport& r, const std::string& code) {
  for (auto& v : r.violations)
    if (v.code == code) return true;
  return false;
}

Shape single_shape(const PrimitiveKind& k, std::vector<Shape> in) { return infer_shape(k, in); }

}  // namespace

TEST(Validate, ExpThenReduceIsOk) {
  auto r = validate(exp_reduce());
  ASSERT_TRUE(r.ok()) << r.to_string();
  EXPECT_EQ(r.shapes.at(0), (Shape{2, 3}));
  EXPECT_EQ(r.shapes.at(1), (Shape{2}));
}

TEST(Validate, ReportsCycle) {
  PrimitiveGraph g;
  g.inputs.push_back({"x", {2}, "f64"});
  g.nodes.push_back(make_node<PrimitiveKind>(0, ew(EwFn::add), {in("x"), nd(1)}));
  g.nodes.push_back(make_node<PrimitiveKind>(1, ew(EwFn::relu), {nd(0)}));
  g.outputs = {1};
  auto r = validate(g);
  ASSERT_TRUE(has_code(r, "cycle"));
  EXPECT_NE(r.to_string().find("cycle through {0,1}"), std::string::npos);
  EXPECT_THROW(topo_sort(g), CycleError);
}

TEST(Validate, ReportsContractionMismatch) {
  PrimitiveGraph g;
  g.inputs = {{"a", {2, 3}, "f64"}, {"b", {4, 5}, "f64"}};
  g.nodes.push_back(make_node<PrimitiveKind>(0, Linear{LinearKind::matmul}, {in("a"), in("b")}));
  g.outputs = {0};
  auto r = validate(g);
  ASSERT_TRUE(has_code(r, "shape"));
  EXPECT_NE(r.to_string().find("3"), std::string::npos);
  EXPECT_NE(r.to_string().find("4"), std::string::npos);
}

TEST(Validate, ReportsDanglingSlotAndUnknownInput) {
  PrimitiveGraph g;
  g.inputs.push_back({"x", {2}, "f64"});
  g.nodes.push_back(make_node<PrimitiveKind>(0, ew(EwFn::add), {in("x")}));
  g.nodes.push_back(make_node<PrimitiveKind>(1, ew(EwFn::relu), {in("y")}));
  g.outputs = {0, 1};
  auto r = validate(g);
  EXPECT_TRUE(has_code(r, "dangling_slot"));
  EXPECT_TRUE(has_code(r, "unknown_input"));
}

TEST(InferShapes, Rules) {
  EXPECT_EQ(single_shape(Broadcast{1, 3}, {{2}}), (Shape{2, 3}));
  EXPECT_EQ(single_shape(Transpose{{1, 0}}, {{2, 3}}), (Shape{3, 2}));
  EXPECT_EQ(single_shape(Linear{LinearKind::conv2d, 1, 1}, {{1, 3, 8, 8}, {4, 3, 3, 3}}), (Shape{1, 4, 8, 8}));
  EXPECT_EQ(single_shape(Linear{LinearKind::conv2d, 2, 0}, {{1, 3, 9, 9}, {4, 3, 3, 3}}), (Shape{1, 4, 4, 4}));
  EXPECT_EQ(single_shape(Reduce{-1, Aggregator::max}, {{4, 5, 6}}), (Shape{4, 5}));
  EXPECT_EQ(single_shape(Pad{{0, 1}, {2, 1}, 0.0}, {{3, 3}}), (Shape{5, 5}));
  EXPECT_EQ(single_shape(Concat{1, 2}, {{2, 3}, {2, 4}}), (Shape{2, 7}));
  EXPECT_EQ(single_shape(Split{1, {3, 4}, 1}, {{2, 7}}), (Shape{2, 4}));
  EXPECT_EQ(single_shape(Linear{LinearKind::batched_matmul}, {{5, 2, 3}, {5, 3, 4}}), (Shape{5, 2, 4}));
  EXPECT_THROW(single_shape(Reshape{{4, 4}}, {{3, 5}}), ShapeError);
  EXPECT_THROW(single_shape(ew(EwFn::add), {{2}, {3}}), ShapeError);
}

TEST(InferShapes, IsAFixedPoint) {
  for (auto name : {"graphs/attention_block.json", "graphs/instance_norm_relu_pad.json", "graphs/softmax_matmul.json"}) {
    auto g = infer_shapes(to_primitive_graph(load_operator_graph(name)));
    EXPECT_EQ(infer_shapes(g), g) << name;
  }
}

TEST(TopoSort, OrdersByDependencyThenId) {
  auto diamond = graph_from_edges(4, diamond_edges());
  EXPECT_EQ(topo_sort(diamond), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_TRUE(topo_sort(PrimitiveGraph{}).empty());

  PrimitiveGraph reversed;
  reversed.inputs.push_back({"x", {2}, "f64"});
  reversed.nodes.push_back(make_node<PrimitiveKind>(2, ew(EwFn::relu), {in("x")}));
  reversed.nodes.push_back(make_node<PrimitiveKind>(1, ew(EwFn::neg), {nd(2)}));
  reversed.nodes.push_back(make_node<PrimitiveKind>(0, ew(EwFn::exp), {nd(1)}));
  reversed.outputs = {0};
  EXPECT_EQ(topo_sort(reversed), (std::vector<int>{2, 1, 0}));
}

TEST(TopoSort, EveryEdgeGoesForward) {
  std::mt19937_64 rng(3);
  for (int iter = 0; iter < 50; ++iter) {
    auto g = graph_from_edges(10, random_edges(10, 0.4, rng));
    std::reverse(g.nodes.begin(), g.nodes.end());
    auto order = topo_sort(g);
    std::map<int, std::size_t> at;
    for (std::size_t i = 0; i < order.size(); ++i) at[order[i]] = i;
    for (auto& n : g.nodes)
      for (auto& op : n.inputs) {
        if (!op.src.is_input()) {
          EXPECT_LT(at[op.src.node], at[n.id]);
        }
      }
  }
}

namespace {

std::size_t part_sizes_sum(const std::vector<PrimitiveGraph>& parts) {
  std::size_t n = 0;
  for (auto& p : parts) n += p.nodes.size();
  return n;
}

// Brute force: an edge is a legal cut when its producer has a single
// consumer edge and deleting it leaves producer and consumer disconnected.
std::set<std::pair<int, int>> articulation_oracle(int n, const std::vector<Edge>& edges) {
  std::set<std::pair<int, int>> out;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    int outdeg = 0;
    for (auto& f : edges) outdeg += f.first == edges[e].first;
    if (outdeg != 1) continue;
    std::vector<std::set<int>> adj(static_cast<std::size_t>(n));
    for (std::size_t f = 0; f < edges.size(); ++f)
      if (f != e) {
        adj[static_cast<std::size_t>(edges[f].first)].insert(edges[f].second);
        adj[static_cast<std::size_t>(edges[f].second)].insert(edges[f].first);
      }
    std::set<int> seen{edges[e].first};
    std::vector<int> stack{edges[e].first};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : adj[static_cast<std::size_t>(v)])
        if (seen.insert(w).second) stack.push_back(w);
    }
    if (!seen.count(edges[e].second)) out.insert(edges[e]);
  }
  return out;
}

}  // namespace

TEST(Partition, ChainSplitsEvenly) {
  auto parts = partition(graph_from_edges(6, chain_edges(6)), 3);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].nodes.size(), 3u);
  EXPECT_EQ(parts[1].nodes.size(), 3u);
  EXPECT_EQ(parts[1].inputs.front().name, cut_input_name(2));
}

TEST(Partition, DiamondStaysWhole) {
  auto parts = partition(graph_from_edges(4, diamond_edges()), 2);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].nodes.size(), 4u);
}

TEST(Partition, TwoDiamondsJoinedByOneEdge) {
  std::vector<Edge> e = diamond_edges();
  e.push_back({3, 4});
  for (auto [a, b] : diamond_edges()) e.push_back({a + 4, b + 4});
  auto g = graph_from_edges(8, e);
  auto parts = partition(g, 4);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].nodes.size(), 4u);
  EXPECT_EQ(parts[1].nodes.size(), 4u);
  auto oracle = articulation_oracle(8, e);
  std::set<std::pair<int, int>> found;
  for (auto& c : legal_cut_edges(g)) found.insert({c.producer, c.consumer});
  EXPECT_EQ(found, oracle);
}

TEST(Partition, LegalCutsMatchOracleOnRandomGraphs) {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 100; ++iter) {
    int n = 3 + static_cast<int>(rng() % 10);
    auto e = random_edges(n, 0.3, rng);
    auto g = graph_from_edges(n, e);
    std::set<std::pair<int, int>> found;
    for (auto& c : legal_cut_edges(g)) found.insert({c.producer, c.consumer});
    EXPECT_EQ(found, articulation_oracle(n, e)) << "iteration " << iter;
  }
}

TEST(Partition, MergeRestoresTheGraph) {
  std::mt19937_64 rng(5);
  for (int iter = 0; iter < 60; ++iter) {
    int n = 4 + static_cast<int>(rng() % 12);
    auto g = infer_shapes(graph_from_edges(n, random_edges(n, 0.25, rng)));
    auto parts = partition(g, 1 + static_cast<int>(rng() % 5));
    EXPECT_EQ(part_sizes_sum(parts), g.nodes.size());
    auto merged = infer_shapes(merge_parts(parts, g.outputs));
    auto a = g, b = merged;
    auto by_id = [](auto& x, auto& y) { return x.id < y.id; };
    std::sort(a.nodes.begin(), a.nodes.end(), by_id);
    std::sort(b.nodes.begin(), b.nodes.end(), by_id);
    EXPECT_EQ(a.nodes, b.nodes);
    std::mt19937_64 probe(iter);
    auto x = random_inputs(g, probe);
    EXPECT_TRUE(compare(eval_graph(g, x), eval_graph(merged, x)).equal);
  }
}

TEST(Serialize, RoundTripsBundledGraphs) {
  for (auto name : {"graphs/attention_block.json", "graphs/segformer_fragment.json", "graphs/softmax.json"}) {
    auto text = read_file(source_path(name));
    auto g = deserialize<OperatorKind>(text);
    EXPECT_EQ(deserialize<OperatorKind>(serialize(g)), g) << name;
    auto p = to_primitive_graph(g);
    EXPECT_EQ(deserialize<PrimitiveKind>(serialize(p)), p) << name;
    EXPECT_EQ(serialize(deserialize<PrimitiveKind>(serialize(p))), serialize(p));
  }
}

TEST(Serialize, RoundTripsEveryPrimitiveKind) {
  PrimitiveGraph g;
  g.inputs = {{"a", {2, 3}, "f64"}, {"b", {3, 2}, "f64"}, {"img", {1, 2, 5, 5}, "f64"}, {"w", {3, 2, 3, 3}, "f64"}};
  int id = 0;
  auto add = [&](PrimitiveKind k, std::vector<ValueRef> ops) {
    g.nodes.push_back(make_node<PrimitiveKind>(id, std::move(k), std::move(ops)));
    g.outputs.push_back(id);
    return nd(id++);
  };
  auto s = add(ew(EwFn::scale, 0.25), {in("a")});
  add(Reduce{0, Aggregator::mean}, {s});
  add(Broadcast{0, 4}, {s});
  add(Transpose{{1, 0}}, {in("a")});
  add(Reshape{{6}}, {in("a")});
  add(Pad{{1, 0}, {0, 2}, -1.5}, {in("a")});
  add(Slice{{0, 1}, {2, 3}}, {in("a")});
  add(Split{1, {1, 2}, 1}, {in("a")});
  add(Concat{0, 2}, {in("a"), s});
  add(Linear{LinearKind::matmul}, {in("a"), in("b")});
  add(Linear{LinearKind::conv2d, 2, 1}, {in("img"), in("w")});
  add(Constant{{2}, Fill::literal, {1.5, -2.0}}, {});
  add(Constant{{2, 2}, Fill::ones, {}}, {});
  add(*make_opaque("topk", {{"k", 2}}), {in("a")});
  ASSERT_TRUE(validate(g).ok()) << validate(g).to_string();
  EXPECT_EQ(deserialize<PrimitiveKind>(serialize(g)), g);
}

TEST(Serialize, ErrorsNameTheProblem) {
  auto bad_kind = R"({"version":1,"level":"primitive","inputs":[{"name":"x","shape":[2]}],
    "nodes":[{"id":0,"kind":"fft","attrs":{},"inputs":[{"node":{"input":"x"},"slot":0}]}],"outputs":[0]})";
  try {
    deserialize<PrimitiveKind>(bad_kind);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown kind 'fft'"), std::string::npos) << e.what();
  }
  auto no_shape = R"({"version":1,"level":"primitive","inputs":[{"name":"x"}],"nodes":[],"outputs":[]})";
  try {
    deserialize<PrimitiveKind>(no_shape);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("$.inputs[0]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("shape"), std::string::npos) << e.what();
  }
  EXPECT_THROW(deserialize<PrimitiveKind>("{not json"), ParseError);
}

TEST(DeadCode, DropsNodesNotReachingOutputs) {
  auto g = graph_from_edges(4, {{0, 1}, {0, 2}}, {1});
  auto d = eliminate_dead_code(g);
  EXPECT_EQ(d.nodes.size(), 2u);
  EXPECT_TRUE(d.find(0) && d.find(1));
}
