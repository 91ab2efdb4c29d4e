#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "korch/error.hpp"
#include "korch/graph.hpp"
#include "korch/operator.hpp"
#include "korch/primitive.hpp"
#include "korch/tensor.hpp"

namespace korch {

using Json = nlohmann::ordered_json;

namespace detail {

inline const Json& field(const Json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw ParseError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(path + "." + key + ": missing field '" + key + "'");
  return *it;
}

template <class T>
T as(const Json& v, const std::string& path) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(path + ": wrong type");
  }
}

template <class T>
T get(const Json& obj, const std::string& key, const std::string& path) {
  return as<T>(field(obj, key, path), path + "." + key);
}

template <class T>
T get_or(const Json& obj, const std::string& key, T dflt, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) return dflt;
  return as<T>(obj.at(key), path + "." + key);
}

inline std::optional<EwFn> ew_from_name(const std::string& s) {
  static const std::map<std::string, EwFn> names = {
      {"add", EwFn::add},   {"sub", EwFn::sub}, {"mul", EwFn::mul}, {"div", EwFn::div},
      {"relu", EwFn::relu}, {"sqrt", EwFn::sqrt}, {"erf", EwFn::erf}, {"exp", EwFn::exp},
      {"neg", EwFn::neg},   {"scale", EwFn::scale}};
  auto it = names.find(s);
  if (it == names.end()) return std::nullopt;
  return it->second;
}

inline std::optional<PrimitiveKind> parse_primitive_kind(const std::string& kind, const Json& attrs,
                                                          const std::string& path, std::size_t operand_count) {
  const std::string ap = path + ".attrs";
  if (auto fn = ew_from_name(kind)) {
    Elementwise e{*fn, 1.0};
    if (*fn == EwFn::scale) e.c = get<double>(attrs, "c", ap);
    return e;
  }
  if (kind == "reduce") {
    auto agg = get_or<std::string>(attrs, "aggregator", "sum", ap);
    Aggregator a;
    if (agg == "sum") a = Aggregator::sum;
    else if (agg == "max") a = Aggregator::max;
    else if (agg == "mean") a = Aggregator::mean;
    else throw ParseError(ap + ".aggregator: unknown aggregator '" + agg + "'");
    return Reduce{get<int>(attrs, "axis", ap), a};
  }
  if (kind == "broadcast") return Broadcast{get<int>(attrs, "axis", ap), get<int64_t>(attrs, "size", ap)};
  if (kind == "transpose") return Transpose{get<std::vector<int>>(attrs, "perm", ap)};
  if (kind == "reshape") return Reshape{get<Shape>(attrs, "shape", ap)};
  if (kind == "pad")
    return Pad{get<std::vector<int64_t>>(attrs, "low", ap), get<std::vector<int64_t>>(attrs, "high", ap),
               get_or<double>(attrs, "value", 0.0, ap)};
  if (kind == "slice")
    return Slice{get<std::vector<int64_t>>(attrs, "start", ap), get<std::vector<int64_t>>(attrs, "stop", ap)};
  if (kind == "split")
    return Split{get<int>(attrs, "axis", ap), get<std::vector<int64_t>>(attrs, "sizes", ap),
                 get<int>(attrs, "index", ap)};
  if (kind == "concat")
    return Concat{get<int>(attrs, "axis", ap), get_or<int>(attrs, "count", static_cast<int>(operand_count), ap)};
  if (kind == "matmul") return Linear{LinearKind::matmul};
  if (kind == "batched_matmul") return Linear{LinearKind::batched_matmul};
  if (kind == "conv2d")
    return Linear{LinearKind::conv2d, get_or<int>(attrs, "stride", 1, ap), get_or<int>(attrs, "padding", 0, ap)};
  if (kind == "constant") {
    Constant c;
    c.shape = get<Shape>(attrs, "shape", ap);
    auto fill = get_or<std::string>(attrs, "fill", "literal", ap);
    if (fill == "ones") c.fill = Fill::ones;
    else if (fill == "zeros") c.fill = Fill::zeros;
    else if (fill == "literal") {
      c.fill = Fill::literal;
      c.data = get<std::vector<double>>(attrs, "data", ap);
    } else throw ParseError(ap + ".fill: unknown fill '" + fill + "'");
    return c;
  }
  auto opaque_attrs = [&](const Json& a) {
    OpaqueAttrs out;
    if (!a.is_object()) return out;
    for (auto& [k, v] : a.items())
      if (k != "name" && k != "arity" && v.is_number()) out[k] = v.get<double>();
    return out;
  };
  if (kind == "opaque") {
    auto name = get<std::string>(attrs, "name", ap);
    auto o = make_opaque(name, opaque_attrs(attrs));
    if (!o) throw ParseError(ap + ".name: unknown opaque primitive '" + name + "'");
    o->arity = get_or<int>(attrs, "arity", o->arity, ap);
    return *o;
  }
  if (opaque_registry().count(kind)) return *make_opaque(kind, opaque_attrs(attrs));
  return std::nullopt;
}

inline std::optional<OperatorKind> parse_composite_kind(const std::string& kind, const Json& attrs,
                                                         const std::string& path) {
  const std::string ap = path + ".attrs";
  if (kind == "softmax") return OperatorKind{Softmax{get_or<int>(attrs, "axis", -1, ap)}};
  if (kind == "instance_norm") return OperatorKind{InstanceNorm{get_or<double>(attrs, "eps", 1e-5, ap)}};
  if (kind == "layer_norm")
    return OperatorKind{LayerNorm{get_or<int>(attrs, "axis", -1, ap), get_or<double>(attrs, "eps", 1e-5, ap)}};
  if (kind == "gelu") return OperatorKind{Gelu{}};
  if (kind == "reduce_mean") return OperatorKind{ReduceMean{get_or<int>(attrs, "axis", -1, ap)}};
  return std::nullopt;
}

template <class Kind>
Kind parse_kind(const std::string& kind, const Json& attrs, const std::string& path, std::size_t operand_count);

template <>
inline PrimitiveKind parse_kind<PrimitiveKind>(const std::string& kind, const Json& attrs, const std::string& path,
                                               std::size_t operand_count) {
  if (auto p = parse_primitive_kind(kind, attrs, path, operand_count)) return *p;
  throw ParseError(path + ".kind: unknown kind '" + kind + "'");
}

template <>
inline OperatorKind parse_kind<OperatorKind>(const std::string& kind, const Json& attrs, const std::string& path,
                                             std::size_t operand_count) {
  if (auto op = parse_composite_kind(kind, attrs, path)) return *op;
  if (auto p = parse_primitive_kind(kind, attrs, path, operand_count)) return OperatorKind{*p};
  throw ParseError(path + ".kind: unknown kind '" + kind + "'");
}

inline Json primitive_attrs(const PrimitiveKind& k) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        Json a = Json::object();
        if constexpr (std::is_same_v<T, Elementwise>) {
          if (p.fn == EwFn::scale) a["c"] = p.c;
        } else if constexpr (std::is_same_v<T, Reduce>) {
          a["axis"] = p.axis;
          a["aggregator"] = aggregator_name(p.agg);
        } else if constexpr (std::is_same_v<T, Broadcast>) {
          a["axis"] = p.axis;
          a["size"] = p.size;
        } else if constexpr (std::is_same_v<T, Transpose>) {
          a["perm"] = p.perm;
        } else if constexpr (std::is_same_v<T, Reshape>) {
          a["shape"] = p.shape;
        } else if constexpr (std::is_same_v<T, Pad>) {
          a["low"] = p.low;
          a["high"] = p.high;
          a["value"] = p.value;
        } else if constexpr (std::is_same_v<T, Slice>) {
          a["start"] = p.start;
          a["stop"] = p.stop;
        } else if constexpr (std::is_same_v<T, Split>) {
          a["axis"] = p.axis;
          a["sizes"] = p.sizes;
          a["index"] = p.index;
        } else if constexpr (std::is_same_v<T, Concat>) {
          a["axis"] = p.axis;
          a["count"] = p.count;
        } else if constexpr (std::is_same_v<T, Linear>) {
          if (p.kind == LinearKind::conv2d) {
            a["stride"] = p.stride;
            a["padding"] = p.padding;
          }
        } else if constexpr (std::is_same_v<T, Constant>) {
          a["shape"] = p.shape;
          if (p.fill == Fill::ones) a["fill"] = "ones";
          else if (p.fill == Fill::zeros) a["fill"] = "zeros";
          else {
            a["fill"] = "literal";
            a["data"] = p.data;
          }
        } else {
          a["name"] = p.name;
          for (auto& [key, v] : p.attrs) a[key] = v;
          a["arity"] = p.arity;
        }
        return a;
      },
      k);
}

inline Json kind_attrs(const PrimitiveKind& k) { return primitive_attrs(k); }
inline Json kind_attrs(const OperatorKind& op) {
  if (auto p = as_primitive(op)) return primitive_attrs(*p);
  Json a = Json::object();
  for (auto& [key, v] : operator_attrs(op)) {
    if (key == "axis") a[key] = static_cast<int>(v);
    else a[key] = v;
  }
  return a;
}

template <class Kind>
constexpr const char* level_name() {
  if constexpr (std::is_same_v<Kind, PrimitiveKind>) return "primitive";
  else return "operator";
}

}  // namespace detail

template <class Kind>
Json to_json(const Graph<Kind>& g) {
  Json j;
  j["version"] = 1;
  j["level"] = detail::level_name<Kind>();
  j["inputs"] = Json::array();
  for (auto& in : g.inputs) j["inputs"].push_back(Json{{"name", in.name}, {"shape", in.shape}});
  j["nodes"] = Json::array();
  for (auto& n : g.nodes) {
    Json node;
    node["id"] = n.id;
    node["kind"] = kind_name(n.kind);
    node["attrs"] = detail::kind_attrs(n.kind);
    node["inputs"] = Json::array();
    for (auto& op : n.inputs) {
      Json src = op.src.is_input() ? Json{{"input", op.src.input}} : Json(op.src.node);
      node["inputs"].push_back(Json{{"node", src}, {"slot", op.slot}});
    }
    j["nodes"].push_back(std::move(node));
  }
  j["outputs"] = g.outputs;
  return j;
}

template <class Kind>
std::string serialize(const Graph<Kind>& g) {
  return to_json(g).dump(2) + "\n";
}

template <class Kind>
Graph<Kind> from_json(const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw ParseError("$: expected an object");
  auto version = get<int>(j, "version", "$");
  if (version != 1) throw ParseError("$.version: unsupported version " + std::to_string(version));
  auto level = get<std::string>(j, "level", "$");
  if (level != "operator" && level != "primitive") throw ParseError("$.level: unknown level '" + level + "'");
  if (std::is_same_v<Kind, PrimitiveKind> && level != "primitive")
    throw ParseError("$.level: expected a primitive-level graph, got '" + level + "'");

  Graph<Kind> g;
  const auto& inputs = field(j, "inputs", "$");
  if (!inputs.is_array()) throw ParseError("$.inputs: expected an array");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::string p = "$.inputs[" + std::to_string(i) + "]";
    g.inputs.push_back(TensorSpec{get<std::string>(inputs[i], "name", p), get<Shape>(inputs[i], "shape", p), "f64"});
    if (inputs[i].contains("dtype") && inputs[i]["dtype"] != "f64")
      throw ParseError(p + ".dtype: only f64 is supported");
  }
  const auto& nodes = field(j, "nodes", "$");
  if (!nodes.is_array()) throw ParseError("$.nodes: expected an array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::string p = "$.nodes[" + std::to_string(i) + "]";
    Node<Kind> n;
    n.id = get<int>(nodes[i], "id", p);
    auto kind = get<std::string>(nodes[i], "kind", p);
    Json attrs = nodes[i].contains("attrs") ? nodes[i]["attrs"] : Json::object();
    const auto& ins = field(nodes[i], "inputs", p);
    if (!ins.is_array()) throw ParseError(p + ".inputs: expected an array");
    for (std::size_t k = 0; k < ins.size(); ++k) {
      std::string ip = p + ".inputs[" + std::to_string(k) + "]";
      const auto& src = field(ins[k], "node", ip);
      Operand op;
      if (src.is_number_integer()) op.src = ValueRef::of_node(src.get<int>());
      else if (src.is_object()) op.src = ValueRef::of_input(get<std::string>(src, "input", ip + ".node"));
      else throw ParseError(ip + ".node: expected a node id or {\"input\": name}");
      op.slot = get_or<int>(ins[k], "slot", static_cast<int>(k), ip);
      n.inputs.push_back(std::move(op));
    }
    n.kind = parse_kind<Kind>(kind, attrs, p, ins.size());
    g.nodes.push_back(std::move(n));
  }
  g.outputs = get<std::vector<int>>(j, "outputs", "$");
  return g;
}

template <class Kind>
Graph<Kind> deserialize(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return from_json<Kind>(j);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
}

// Level recorded in a graph document ("operator" or "primitive").
inline std::string graph_level(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  return detail::get<std::string>(j, "level", "$");
}

// Tensor literal {"shape": [...], "data": [...]}.
inline Json tensor_to_json(const DenseTensor& t) { return Json{{"shape", t.shape}, {"data", t.data}}; }

inline DenseTensor tensor_from_json(const Json& j, const std::string& path = "$") {
  auto shape = detail::get<Shape>(j, "shape", path);
  auto data = detail::get<std::vector<double>>(j, "data", path);
  try {
    return DenseTensor(std::move(shape), std::move(data));
  } catch (const ShapeError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// {"name": tensor, ...}
inline std::map<std::string, DenseTensor> tensors_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("$: expected an object of named tensors");
  std::map<std::string, DenseTensor> out;
  for (auto& [k, v] : j.items()) out[k] = tensor_from_json(v, "$." + k);
  return out;
}

}  // namespace korch
