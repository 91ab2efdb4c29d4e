#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace korch;
using namespace korch::testing;

namespace {

ComputationGraph single(OperatorKind k, std::vector<Shape> shapes) {
  ComputationGraph g;
  std::vector<ValueRef> ops;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    g.inputs.push_back({"x" + std::to_string(i), shapes[i], "f64"});
    ops.push_back(ValueRef::of_input("x" + std::to_string(i)));
  }
  g.nodes.push_back(make_node<OperatorKind>(0, std::move(k), ops));
  g.outputs = {0};
  return g;
}

std::multiset<std::string> kinds(const PrimitiveGraph& g) {
  std::multiset<std::string> out;
  for (auto& n : g.nodes) out.insert(kind_name(n.kind));
  return out;
}

// Every composite with a rule, at a few shapes.
std::vector<ComputationGraph> rule_cases() {
  return {single(Softmax{-1}, {{3, 5}}),         single(Softmax{0}, {{4, 2, 3}}),
          single(InstanceNorm{1e-5}, {{2, 3, 4}}), single(InstanceNorm{1e-3}, {{1, 4, 5, 6}}),
          single(LayerNorm{-1, 1e-6}, {{3, 8}}),  single(LayerNorm{1, 1e-5}, {{2, 5, 3}}),
          single(Gelu{}, {{2, 7}}),               single(ReduceMean{-1}, {{3, 4}}),
          single(ReduceMean{0}, {{5, 2}})};
}

}  // namespace

TEST(Fission, SoftmaxBecomesFourPrimitives) {
  auto r = apply_fission(single(Softmax{-1}, {{2, 3}}));
  EXPECT_EQ(kinds(r.graph), (std::multiset<std::string>{"exp", "reduce", "broadcast", "div"}));
  ASSERT_TRUE(validate(r.graph).ok());
  auto red = std::find_if(r.graph.nodes.begin(), r.graph.nodes.end(),
                          [](auto& n) { return std::holds_alternative<Reduce>(n.kind); });
  EXPECT_EQ(std::get<Reduce>(red->kind).agg, Aggregator::sum);
  EXPECT_EQ(r.graph.outputs, (std::vector<int>{0}));
  EXPECT_EQ(std::get<Elementwise>(r.graph.at(0).kind).fn, EwFn::div);
}

TEST(Fission, PrimitivePassesThrough) {
  auto g = single(PrimitiveKind{Elementwise{EwFn::relu, 1.0}}, {{4}});
  auto r = apply_fission(g);
  ASSERT_EQ(r.graph.nodes.size(), 1u);
  EXPECT_EQ(std::get<Elementwise>(r.graph.nodes[0].kind).fn, EwFn::relu);
}

TEST(Fission, InstanceNormFragment) {
  auto r = apply_fission(single(InstanceNorm{1e-5}, {{2, 3, 9}}));
  auto k = kinds(r.graph);
  EXPECT_EQ(r.graph.nodes.size(), 10u);
  EXPECT_EQ(k.count("reduce"), 2u);
  EXPECT_EQ(k.count("broadcast"), 2u);
  EXPECT_EQ(k.count("constant"), 1u);
  EXPECT_EQ(k.count("sqrt"), 1u);
  for (auto name : {"sub", "mul", "add", "div"}) EXPECT_EQ(k.count(name), 1u) << name;
  // Rank 4 goes through a [N, C, H*W] view and back.
  auto r4 = apply_fission(single(InstanceNorm{1e-5}, {{1, 2, 3, 3}}));
  EXPECT_EQ(r4.graph.nodes.size(), 12u);
  EXPECT_EQ(kinds(r4.graph).count("reshape"), 2u);

  std::mt19937_64 rng(1);
  auto g = single(InstanceNorm{1e-5}, {{2, 3, 9}});
  for (int i = 0; i < 20; ++i) {
    auto in = random_inputs(g, rng, -3, 3);
    EXPECT_TRUE(compare(eval_graph(r.graph, in), eval_graph(g, in)).equal);
  }
}

TEST(Fission, EveryRuleMatchesItsOperator) {
  std::mt19937_64 rng(2);
  for (auto& g : rule_cases()) {
    auto p = apply_fission(g).graph;
    ASSERT_TRUE(validate(p).ok()) << describe(g.nodes[0].kind);
    EXPECT_EQ(*infer_shapes(p).at(0).shape, *infer_shapes(g).at(0).shape);
    double tol = oracle_tolerance(p);
    for (int i = 0; i < 50; ++i) {
      auto in = random_inputs(g, rng, -3, 3);
      auto c = compare(eval_graph(p, in), eval_graph(g, in), tol, tol);
      EXPECT_TRUE(c.equal) << describe(g.nodes[0].kind) << " diff " << c.max_abs_diff;
    }
  }
}

TEST(Fission, DuplicateRuleIsRejected) {
  auto r = FissionRegistry::builtin();
  EXPECT_THROW(r.register_rule({"softmax", detail::softmax_fragment}), DuplicateRule);
  EXPECT_EQ(r.kinds(), (std::vector<std::string>{"gelu", "instance_norm", "layer_norm", "reduce_mean", "softmax"}));
}

TEST(Fission, RegisteredGeluRuleIsUsed) {
  FissionRegistry r;
  auto g = single(Gelu{}, {{6}});
  auto before = apply_fission(g, r).graph;
  ASSERT_EQ(before.nodes.size(), 1u);
  EXPECT_TRUE(is_opaque(before.nodes[0].kind));
  r.register_rule({"gelu", detail::gelu_fragment});
  auto after = apply_fission(g, r).graph;
  auto k = kinds(after);
  for (auto name : {"erf", "mul", "add", "scale"}) EXPECT_GE(k.count(name), 1u) << name;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    auto in = random_inputs(g, rng, -4, 4);
    EXPECT_TRUE(compare(eval_graph(after, in), eval_graph(g, in)).equal);
    EXPECT_TRUE(compare(eval_graph(before, in), eval_graph(g, in)).equal);
  }
}

TEST(Fission, TopkStaysOpaque) {
  auto g = single(PrimitiveKind{*make_opaque("topk", {{"k", 3}})}, {{2, 8}});
  auto p = apply_fission(g).graph;
  ASSERT_EQ(p.nodes.size(), 1u);
  ASSERT_TRUE(is_opaque(p.nodes[0].kind));
  EXPECT_EQ(std::get<Opaque>(p.nodes[0].kind).name, "topk");
  EXPECT_EQ(*infer_shapes(p).at(0).shape, (Shape{2, 3}));
}

TEST(Fission, IdentityOnPrimitiveGraphs) {
  for (auto name : {"graphs/fanout.json", "graphs/diamond.json"}) {
    auto p = load_primitive_graph(name);
    EXPECT_EQ(apply_fission(lift(p)).graph, p) << name;
  }
  auto once = apply_fission(load_operator_graph("graphs/attention_block.json")).graph;
  EXPECT_EQ(apply_fission(lift(once)).graph, once);
}

TEST(Fission, OutputsAndIdsArePreserved) {
  auto g = load_operator_graph("graphs/segformer_fragment.json");
  auto r = apply_fission(g);
  EXPECT_EQ(r.graph.outputs, g.outputs);
  for (auto& n : g.nodes) {
    EXPECT_EQ(r.id_map.at(n.id), n.id);
    EXPECT_NE(r.graph.find(n.id), nullptr);
  }
  for (auto& n : r.graph.nodes) EXPECT_NE(g.find(r.origin.at(n.id)), nullptr);
  std::mt19937_64 rng(4);
  auto in = random_inputs(g, rng);
  EXPECT_TRUE(compare(eval_graph(r.graph, in), eval_graph(g, in)).equal);
}
