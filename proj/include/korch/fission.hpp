#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "korch/graph.hpp"
#include "korch/operator.hpp"

namespace korch {

// Incrementally builds a primitive fragment. Operands are fragment input
// ports ("in0", "in1", ...) or nodes added earlier.
class FragmentBuilder {
 public:
  explicit FragmentBuilder(std::span<const TensorSpec> inputs) {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      g_.inputs.push_back(TensorSpec{port(i), inputs[i].shape, "f64"});
  }

  static std::string port(std::size_t i) { return "in" + std::to_string(i); }
  ValueRef input(std::size_t i) const { return ValueRef::of_input(port(i)); }

  ValueRef add(PrimitiveKind kind, std::vector<ValueRef> operands) {
    int id = static_cast<int>(g_.nodes.size());
    g_.nodes.push_back(make_node(id, std::move(kind), std::move(operands)));
    return ValueRef::of_node(id);
  }

  PrimitiveGraph finish(ValueRef out) {
    g_.outputs = {out.node};
    return std::move(g_);
  }

 private:
  PrimitiveGraph g_;
};

// Expands one operator into a primitive fragment with inputs "in0".. and a
// single output node.
using FissionTemplate = std::function<PrimitiveGraph(const OperatorKind&, std::span<const TensorSpec>)>;

struct FissionRule {
  std::string operator_kind;
  FissionTemplate expand;
};

namespace detail {

inline Elementwise ew(EwFn fn, double c = 1.0) { return Elementwise{fn, c}; }

// x - mean, scaled by 1/sqrt(var + eps), normalizing along `axis`.
inline ValueRef normalize_along(FragmentBuilder& b, ValueRef x, const Shape& shape, int axis, double eps) {
  int64_t n = shape[static_cast<std::size_t>(axis)];
  Shape reduced = shape;
  reduced.erase(reduced.begin() + axis);
  auto mean = b.add(Reduce{axis, Aggregator::mean}, {x});
  auto mean_b = b.add(Broadcast{axis, n}, {mean});
  auto centered = b.add(ew(EwFn::sub), {x, mean_b});
  auto sq = b.add(ew(EwFn::mul), {centered, centered});
  auto var = b.add(Reduce{axis, Aggregator::mean}, {sq});
  auto eps_c = b.add(Constant{reduced, Fill::literal, std::vector<double>(static_cast<std::size_t>(numel(reduced)), eps)}, {});
  auto shifted = b.add(ew(EwFn::add), {var, eps_c});
  auto sd = b.add(ew(EwFn::sqrt), {shifted});
  auto sd_b = b.add(Broadcast{axis, n}, {sd});
  return b.add(ew(EwFn::div), {centered, sd_b});
}

inline PrimitiveGraph softmax_fragment(const OperatorKind& op, std::span<const TensorSpec> in) {
  const Shape& s = in[0].shape;
  int axis = normalize_axis(std::get<Softmax>(op).axis, static_cast<int>(s.size()), "softmax");
  FragmentBuilder b(in);
  auto e = b.add(ew(EwFn::exp), {b.input(0)});
  auto sum = b.add(Reduce{axis, Aggregator::sum}, {e});
  auto sum_b = b.add(Broadcast{axis, s[static_cast<std::size_t>(axis)]}, {sum});
  return b.finish(b.add(ew(EwFn::div), {e, sum_b}));
}

inline PrimitiveGraph instance_norm_fragment(const OperatorKind& op, std::span<const TensorSpec> in) {
  const Shape& s = in[0].shape;
  double eps = std::get<InstanceNorm>(op).eps;
  FragmentBuilder b(in);
  ValueRef x = b.input(0);
  Shape flat = s;
  if (s.size() > 3) {
    int64_t spatial = 1;
    for (std::size_t d = 2; d < s.size(); ++d) spatial *= s[d];
    flat = {s[0], s[1], spatial};
    x = b.add(Reshape{flat}, {x});
  }
  ValueRef y = normalize_along(b, x, flat, 2, eps);
  if (s.size() > 3) y = b.add(Reshape{s}, {y});
  return b.finish(y);
}

inline PrimitiveGraph layer_norm_fragment(const OperatorKind& op, std::span<const TensorSpec> in) {
  const auto& ln = std::get<LayerNorm>(op);
  const Shape& s = in[0].shape;
  int axis = normalize_axis(ln.axis, static_cast<int>(s.size()), "layer_norm");
  FragmentBuilder b(in);
  return b.finish(normalize_along(b, b.input(0), s, axis, ln.eps));
}

// gelu(x) = 0.5 * x * (1 + erf(x / sqrt(2)))
inline PrimitiveGraph gelu_fragment(const OperatorKind&, std::span<const TensorSpec> in) {
  FragmentBuilder b(in);
  auto x = b.input(0);
  auto t = b.add(ew(EwFn::scale, 1.0 / std::sqrt(2.0)), {x});
  auto e = b.add(ew(EwFn::erf), {t});
  auto one = b.add(Constant{in[0].shape, Fill::ones, {}}, {});
  auto a = b.add(ew(EwFn::add), {e, one});
  auto m = b.add(ew(EwFn::mul), {x, a});
  return b.finish(b.add(ew(EwFn::scale, 0.5), {m}));
}

inline PrimitiveGraph reduce_mean_fragment(const OperatorKind& op, std::span<const TensorSpec> in) {
  const Shape& s = in[0].shape;
  int axis = normalize_axis(std::get<ReduceMean>(op).axis, static_cast<int>(s.size()), "reduce_mean");
  FragmentBuilder b(in);
  auto sum = b.add(Reduce{axis, Aggregator::sum}, {b.input(0)});
  double n = static_cast<double>(s[static_cast<std::size_t>(axis)]);
  return b.finish(b.add(ew(EwFn::scale, 1.0 / n), {sum}));
}

}  // namespace detail

class FissionRegistry {
 public:
  void register_rule(FissionRule rule) {
    if (rules_.count(rule.operator_kind)) throw DuplicateRule("fission rule for '" + rule.operator_kind + "' already registered");
    std::string key = rule.operator_kind;
    rules_.emplace(std::move(key), std::move(rule));
  }

  const FissionRule* find(const std::string& kind) const {
    auto it = rules_.find(kind);
    return it == rules_.end() ? nullptr : &it->second;
  }

  std::vector<std::string> kinds() const {
    std::vector<std::string> out;
    for (auto& [k, _] : rules_) out.push_back(k);
    return out;
  }

  static FissionRegistry builtin() {
    FissionRegistry r;
    r.register_rule({"softmax", detail::softmax_fragment});
    r.register_rule({"instance_norm", detail::instance_norm_fragment});
    r.register_rule({"layer_norm", detail::layer_norm_fragment});
    r.register_rule({"gelu", detail::gelu_fragment});
    r.register_rule({"reduce_mean", detail::reduce_mean_fragment});
    return r;
  }

 private:
  std::map<std::string, FissionRule> rules_;
};

inline const FissionRegistry& default_fission_registry() {
  static const FissionRegistry r = FissionRegistry::builtin();
  return r;
}

struct FissionResult {
  PrimitiveGraph graph;
  // Operator node id -> primitive node id carrying its value. Fragment
  // outputs reuse the operator id, so this is the identity on ids.
  std::map<int, int> id_map;
  // Primitive node id -> operator node id it was expanded from.
  std::map<int, int> origin;
};

// Replaces every composite operator by its rule's fragment. Operators
// without a rule become opaque primitives. Primitive nodes keep their ids;
// a fragment's output node takes the operator's id and its interior nodes
// get fresh ids above every id in `g`.
inline FissionResult apply_fission(const ComputationGraph& g, const FissionRegistry& rules = default_fission_registry()) {
  ComputationGraph shaped = infer_shapes(g);
  FissionResult res;
  res.graph.inputs = g.inputs;
  res.graph.outputs = g.outputs;
  int fresh = g.next_id();
  for (int id : topo_sort(shaped)) {
    const auto& n = shaped.at(id);
    res.id_map[id] = id;
    if (auto p = as_primitive(n.kind)) {
      res.graph.nodes.push_back(Node<PrimitiveKind>{id, *p, n.inputs, std::nullopt});
      res.origin[id] = id;
      continue;
    }
    const FissionRule* rule = rules.find(kind_name(n.kind));
    if (!rule) {
      res.graph.nodes.push_back(Node<PrimitiveKind>{id, to_opaque(n.kind), n.inputs, std::nullopt});
      res.origin[id] = id;
      continue;
    }
    auto operands = n.operands();
    std::vector<TensorSpec> specs;
    for (auto& v : operands) specs.push_back(TensorSpec{"", shape_of(shaped, v), "f64"});
    PrimitiveGraph frag = rule->expand(n.kind, specs);
    if (frag.outputs.size() != 1) throw Error("fission rule '" + rule->operator_kind + "' must have one output");
    int frag_out = frag.outputs[0];
    std::map<int, int> renum;
    for (int fid : topo_sort(frag)) renum[fid] = fid == frag_out ? id : fresh++;
    for (int fid : topo_sort(frag)) {
      auto fn = frag.at(fid);
      fn.id = renum.at(fid);
      fn.shape.reset();
      for (auto& op : fn.inputs) {
        if (op.src.is_input()) {
          auto port = static_cast<std::size_t>(std::stoul(op.src.input.substr(2)));
          op.src = operands.at(port);
        } else {
          op.src.node = renum.at(op.src.node);
        }
      }
      res.origin[fn.id] = id;
      res.graph.nodes.push_back(std::move(fn));
    }
  }
  // Keep the original node order for primitives that were already there so
  // that fission of a primitive-only graph is the identity.
  std::map<int, std::size_t> rank;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) rank[g.nodes[i].id] = i;
  std::stable_sort(res.graph.nodes.begin(), res.graph.nodes.end(), [&](const auto& a, const auto& b) {
    auto ra = rank.count(a.id) ? rank.at(a.id) : rank.at(res.origin.at(a.id));
    auto rb = rank.count(b.id) ? rank.at(b.id) : rank.at(res.origin.at(b.id));
    return ra < rb;
  });
  return res;
}

// Wraps a primitive graph as an operator-level graph (no composites).
inline ComputationGraph lift(const PrimitiveGraph& g) {
  ComputationGraph c;
  c.inputs = g.inputs;
  c.outputs = g.outputs;
  for (auto& n : g.nodes) c.nodes.push_back(Node<OperatorKind>{n.id, OperatorKind{n.kind}, n.inputs, std::nullopt});
  return c;
}

}  // namespace korch
