#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <variant>

#include "korch/primitive.hpp"

namespace korch {

// Composite operators accepted at the computation-graph level. Any
// primitive may also appear there directly.
struct Softmax {
  int axis = -1;
  friend bool operator==(const Softmax&, const Softmax&) = default;
};

// Normalizes every (n, c) slice over all trailing spatial axes.
struct InstanceNorm {
  double eps = 1e-5;
  friend bool operator==(const InstanceNorm&, const InstanceNorm&) = default;
};

struct LayerNorm {
  int axis = -1;
  double eps = 1e-5;
  friend bool operator==(const LayerNorm&, const LayerNorm&) = default;
};

struct Gelu {
  friend bool operator==(const Gelu&, const Gelu&) = default;
};

struct ReduceMean {
  int axis = -1;
  friend bool operator==(const ReduceMean&, const ReduceMean&) = default;
};

using OperatorKind = std::variant<Softmax, InstanceNorm, LayerNorm, Gelu, ReduceMean, PrimitiveKind>;

inline const PrimitiveKind* as_primitive(const OperatorKind& op) { return std::get_if<PrimitiveKind>(&op); }

inline std::string kind_name(const OperatorKind& op) {
  return std::visit(
      [](const auto& o) -> std::string {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Softmax>) return "softmax";
        else if constexpr (std::is_same_v<T, InstanceNorm>) return "instance_norm";
        else if constexpr (std::is_same_v<T, LayerNorm>) return "layer_norm";
        else if constexpr (std::is_same_v<T, Gelu>) return "gelu";
        else if constexpr (std::is_same_v<T, ReduceMean>) return "reduce_mean";
        else return kind_name(o);
      },
      op);
}

inline int arity(const OperatorKind& op) {
  if (auto p = as_primitive(op)) return arity(*p);
  return 1;
}

inline Category category(const OperatorKind& op) {
  if (auto p = as_primitive(op)) return category(*p);
  return Category::opaque;
}

// Operator attributes flattened to numbers; this is also the attribute map
// an operator carries when it degrades to an opaque primitive.
inline OpaqueAttrs operator_attrs(const OperatorKind& op) {
  return std::visit(
      [](const auto& o) -> OpaqueAttrs {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Softmax>) return {{"axis", o.axis}};
        else if constexpr (std::is_same_v<T, InstanceNorm>) return {{"eps", o.eps}};
        else if constexpr (std::is_same_v<T, LayerNorm>) return {{"axis", o.axis}, {"eps", o.eps}};
        else if constexpr (std::is_same_v<T, ReduceMean>) return {{"axis", o.axis}};
        else return {};
      },
      op);
}

inline std::string describe(const OperatorKind& op) {
  if (auto p = as_primitive(op)) return describe(*p);
  std::string s = kind_name(op) + "{";
  for (const auto& [k, v] : operator_attrs(op)) s += k + "=" + detail::fmt_double(v) + ";";
  return s + "}";
}

inline Shape infer_shape(const OperatorKind& op, std::span<const Shape> in) {
  if (auto p = as_primitive(op)) return infer_shape(*p, in);
  if (in.size() != 1) throw ShapeError(kind_name(op) + " expects 1 input, got " + std::to_string(in.size()));
  const Shape& s = in[0];
  int rank = static_cast<int>(s.size());
  return std::visit(
      [&](const auto& o) -> Shape {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Softmax>) {
          normalize_axis(o.axis, rank, "softmax");
          return s;
        } else if constexpr (std::is_same_v<T, InstanceNorm>) {
          if (rank < 3) throw ShapeError("instance_norm expects rank >= 3, got " + shape_str(s));
          return s;
        } else if constexpr (std::is_same_v<T, LayerNorm>) {
          normalize_axis(o.axis, rank, "layer_norm");
          return s;
        } else if constexpr (std::is_same_v<T, ReduceMean>) {
          int a = normalize_axis(o.axis, rank, "reduce_mean");
          Shape out = s;
          out.erase(out.begin() + a);
          return out;
        } else if constexpr (std::is_same_v<T, Gelu>) {
          return s;
        } else {
          return infer_shape(o, in);
        }
      },
      op);
}

// Reconstructs a composite operator from its name and attribute map.
inline std::optional<OperatorKind> composite_from_name(const std::string& name, const OpaqueAttrs& attrs) {
  auto get = [&](const char* key, double dflt) {
    auto it = attrs.find(key);
    return it == attrs.end() ? dflt : it->second;
  };
  if (name == "softmax") return OperatorKind{Softmax{static_cast<int>(get("axis", -1))}};
  if (name == "instance_norm") return OperatorKind{InstanceNorm{get("eps", 1e-5)}};
  if (name == "layer_norm") return OperatorKind{LayerNorm{static_cast<int>(get("axis", -1)), get("eps", 1e-5)}};
  if (name == "gelu") return OperatorKind{Gelu{}};
  if (name == "reduce_mean") return OperatorKind{ReduceMean{static_cast<int>(get("axis", -1))}};
  return std::nullopt;
}

// Opaque stand-in for an operator that has no fission rule.
inline Opaque to_opaque(const OperatorKind& op) {
  Opaque o;
  o.name = kind_name(op);
  o.attrs = operator_attrs(op);
  o.arity = arity(op);
  std::string name = o.name;
  o.shape_fn = [name](std::span<const Shape> in, const OpaqueAttrs& attrs) -> Shape {
    auto rebuilt = composite_from_name(name, attrs);
    if (!rebuilt) throw ShapeError("no shape rule for opaque '" + name + "'");
    return infer_shape(*rebuilt, in);
  };
  return o;
}

// Looks up an opaque primitive by name: registered opaque ops first, then
// composite operators.
inline std::optional<Opaque> make_opaque(const std::string& name, const OpaqueAttrs& attrs) {
  auto& reg = opaque_registry();
  if (auto it = reg.find(name); it != reg.end()) {
    return Opaque{name, attrs, it->second.arity, it->second.shape_fn};
  }
  if (auto op = composite_from_name(name, attrs)) {
    Opaque o = to_opaque(*op);
    o.attrs = attrs;
    return o;
  }
  return std::nullopt;
}

}  // namespace korch
