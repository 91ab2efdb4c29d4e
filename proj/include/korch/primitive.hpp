#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "korch/error.hpp"
#include "korch/tensor.hpp"

namespace korch {

enum class EwFn { add, sub, mul, div, relu, sqrt, erf, exp, neg, scale };

// O[x] = f(I1[x], ..., In[x]); shapes of all operands are identical.
struct Elementwise {
  EwFn fn = EwFn::relu;
  double c = 1.0;  // only meaningful for scale
  friend bool operator==(const Elementwise& a, const Elementwise& b) {
    return a.fn == b.fn && (a.fn != EwFn::scale || a.c == b.c);
  }
};

enum class Aggregator { sum, max, mean };

struct Reduce {
  int axis = 0;
  Aggregator agg = Aggregator::sum;
  friend bool operator==(const Reduce&, const Reduce&) = default;
};

// Inserts one axis of extent `size` at position `axis` of the output.
struct Broadcast {
  int axis = 0;
  int64_t size = 1;
  friend bool operator==(const Broadcast&, const Broadcast&) = default;
};

struct Transpose {
  std::vector<int> perm;
  friend bool operator==(const Transpose&, const Transpose&) = default;
};

struct Reshape {
  Shape shape;
  friend bool operator==(const Reshape&, const Reshape&) = default;
};

struct Pad {
  std::vector<int64_t> low;
  std::vector<int64_t> high;
  double value = 0.0;
  friend bool operator==(const Pad&, const Pad&) = default;
};

struct Slice {
  std::vector<int64_t> start;
  std::vector<int64_t> stop;
  friend bool operator==(const Slice&, const Slice&) = default;
};

// Produces the `index`-th piece of its input cut along `axis`.
struct Split {
  int axis = 0;
  std::vector<int64_t> sizes;
  int index = 0;
  friend bool operator==(const Split&, const Split&) = default;
};

struct Concat {
  int axis = 0;
  int count = 2;
  friend bool operator==(const Concat&, const Concat&) = default;
};

enum class LinearKind { matmul, batched_matmul, conv2d };

struct Linear {
  LinearKind kind = LinearKind::matmul;
  int stride = 1;   // conv2d only
  int padding = 0;  // conv2d only
  friend bool operator==(const Linear& a, const Linear& b) {
    if (a.kind != b.kind) return false;
    return a.kind != LinearKind::conv2d || (a.stride == b.stride && a.padding == b.padding);
  }
};

enum class Fill { ones, zeros, literal };

struct Constant {
  Shape shape;
  Fill fill = Fill::zeros;
  std::vector<double> data;  // literal only, row-major
  friend bool operator==(const Constant&, const Constant&) = default;
};

using OpaqueAttrs = std::map<std::string, double>;
using OpaqueShapeFn = std::function<Shape(std::span<const Shape>, const OpaqueAttrs&)>;

// A primitive the optimizer cannot look inside. Carries its own shape rule.
struct Opaque {
  std::string name;
  OpaqueAttrs attrs;
  int arity = 1;
  OpaqueShapeFn shape_fn;
  friend bool operator==(const Opaque& a, const Opaque& b) {
    return a.name == b.name && a.attrs == b.attrs && a.arity == b.arity;
  }
};

using PrimitiveKind = std::variant<Elementwise, Reduce, Broadcast, Transpose, Reshape, Pad, Slice,
                                   Split, Concat, Linear, Constant, Opaque>;

enum class Category { elementwise, reduce, broadcast, layout, linear, constant, opaque };

inline Category category(const PrimitiveKind& k) {
  return std::visit(
      [](const auto& p) -> Category {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Elementwise>) return Category::elementwise;
        else if constexpr (std::is_same_v<T, Reduce>) return Category::reduce;
        else if constexpr (std::is_same_v<T, Broadcast>) return Category::broadcast;
        else if constexpr (std::is_same_v<T, Linear>) return Category::linear;
        else if constexpr (std::is_same_v<T, Constant>) return Category::constant;
        else if constexpr (std::is_same_v<T, Opaque>) return Category::opaque;
        else return Category::layout;
      },
      k);
}

inline bool is_linear(const PrimitiveKind& k) { return category(k) == Category::linear; }
inline bool is_opaque(const PrimitiveKind& k) { return category(k) == Category::opaque; }

inline bool is_unary(EwFn fn) {
  switch (fn) {
    case EwFn::add:
    case EwFn::sub:
    case EwFn::mul:
    case EwFn::div:
      return false;
    default:
      return true;
  }
}

inline int arity(const PrimitiveKind& k) {
  return std::visit(
      [](const auto& p) -> int {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Elementwise>) return is_unary(p.fn) ? 1 : 2;
        else if constexpr (std::is_same_v<T, Concat>) return p.count;
        else if constexpr (std::is_same_v<T, Linear>) return 2;
        else if constexpr (std::is_same_v<T, Constant>) return 0;
        else if constexpr (std::is_same_v<T, Opaque>) return p.arity;
        else return 1;
      },
      k);
}

inline const char* ew_name(EwFn fn) {
  switch (fn) {
    case EwFn::add: return "add";
    case EwFn::sub: return "sub";
    case EwFn::mul: return "mul";
    case EwFn::div: return "div";
    case EwFn::relu: return "relu";
    case EwFn::sqrt: return "sqrt";
    case EwFn::erf: return "erf";
    case EwFn::exp: return "exp";
    case EwFn::neg: return "neg";
    case EwFn::scale: return "scale";
  }
  return "?";
}

inline const char* aggregator_name(Aggregator a) {
  switch (a) {
    case Aggregator::sum: return "sum";
    case Aggregator::max: return "max";
    case Aggregator::mean: return "mean";
  }
  return "?";
}

inline const char* linear_name(LinearKind k) {
  switch (k) {
    case LinearKind::matmul: return "matmul";
    case LinearKind::batched_matmul: return "batched_matmul";
    case LinearKind::conv2d: return "conv2d";
  }
  return "?";
}

// JSON kind tag.
inline std::string kind_name(const PrimitiveKind& k) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Elementwise>) return ew_name(p.fn);
        else if constexpr (std::is_same_v<T, Reduce>) return "reduce";
        else if constexpr (std::is_same_v<T, Broadcast>) return "broadcast";
        else if constexpr (std::is_same_v<T, Transpose>) return "transpose";
        else if constexpr (std::is_same_v<T, Reshape>) return "reshape";
        else if constexpr (std::is_same_v<T, Pad>) return "pad";
        else if constexpr (std::is_same_v<T, Slice>) return "slice";
        else if constexpr (std::is_same_v<T, Split>) return "split";
        else if constexpr (std::is_same_v<T, Concat>) return "concat";
        else if constexpr (std::is_same_v<T, Linear>) return linear_name(p.kind);
        else if constexpr (std::is_same_v<T, Constant>) return "constant";
        else return "opaque";
      },
      k);
}

namespace detail {

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  os << "]";
  return os.str();
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Kind plus attributes in a stable textual form. Used for hashing,
// signatures and DOT labels.
inline std::string describe(const PrimitiveKind& k) {
  return std::visit(
      [](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        using detail::join;
        if constexpr (std::is_same_v<T, Elementwise>) {
          if (p.fn == EwFn::scale) return "scale(" + detail::fmt_double(p.c) + ")";
          return ew_name(p.fn);
        } else if constexpr (std::is_same_v<T, Reduce>) {
          return std::string("reduce_") + aggregator_name(p.agg) + "(" + std::to_string(p.axis) + ")";
        } else if constexpr (std::is_same_v<T, Broadcast>) {
          return "broadcast(" + std::to_string(p.axis) + "," + std::to_string(p.size) + ")";
        } else if constexpr (std::is_same_v<T, Transpose>) {
          return "transpose" + join(p.perm);
        } else if constexpr (std::is_same_v<T, Reshape>) {
          return "reshape" + join(p.shape);
        } else if constexpr (std::is_same_v<T, Pad>) {
          return "pad" + join(p.low) + join(p.high) + "=" + detail::fmt_double(p.value);
        } else if constexpr (std::is_same_v<T, Slice>) {
          return "slice" + join(p.start) + join(p.stop);
        } else if constexpr (std::is_same_v<T, Split>) {
          return "split(" + std::to_string(p.axis) + "," + join(p.sizes) + "," +
                 std::to_string(p.index) + ")";
        } else if constexpr (std::is_same_v<T, Concat>) {
          return "concat(" + std::to_string(p.axis) + "," + std::to_string(p.count) + ")";
        } else if constexpr (std::is_same_v<T, Linear>) {
          if (p.kind == LinearKind::conv2d)
            return "conv2d(" + std::to_string(p.stride) + "," + std::to_string(p.padding) + ")";
          return linear_name(p.kind);
        } else if constexpr (std::is_same_v<T, Constant>) {
          std::string s = "constant" + join(p.shape);
          if (p.fill == Fill::ones) return s + "=ones";
          if (p.fill == Fill::zeros) return s + "=zeros";
          std::vector<std::string> vals;
          for (double d : p.data) vals.push_back(detail::fmt_double(d));
          return s + "=" + join(vals);
        } else {
          std::string s = "opaque:" + p.name + "{";
          for (const auto& [key, v] : p.attrs) s += key + "=" + detail::fmt_double(v) + ";";
          return s + "}";
        }
      },
      k);
}

// Normalizes a possibly negative axis against `rank`.
inline int normalize_axis(int axis, int rank, const char* what) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError(std::string(what) + " axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return a;
}

namespace detail {

inline void expect_arity(const PrimitiveKind& k, std::span<const Shape> in) {
  if (static_cast<int>(in.size()) != arity(k))
    throw ShapeError(kind_name(k) + " expects " + std::to_string(arity(k)) + " inputs, got " +
                     std::to_string(in.size()));
}

inline Shape infer_linear(const Linear& p, std::span<const Shape> in) {
  const Shape& a = in[0];
  const Shape& b = in[1];
  switch (p.kind) {
    case LinearKind::matmul: {
      if (a.size() != 2 || b.size() != 2)
        throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a) + " and " + shape_str(b));
      if (a[1] != b[0])
        throw ShapeError("contraction mismatch " + std::to_string(a[1]) + "≠" + std::to_string(b[0]));
      return {a[0], b[1]};
    }
    case LinearKind::batched_matmul: {
      if (a.size() < 3 || a.size() != b.size())
        throw ShapeError("batched_matmul expects equal ranks >= 3, got " + shape_str(a) + " and " +
                         shape_str(b));
      for (std::size_t i = 0; i + 2 < a.size(); ++i)
        if (a[i] != b[i]) throw ShapeError("batched_matmul batch mismatch " + shape_str(a) + " vs " + shape_str(b));
      auto r = a.size();
      if (a[r - 1] != b[r - 2])
        throw ShapeError("contraction mismatch " + std::to_string(a[r - 1]) + "≠" +
                         std::to_string(b[r - 2]));
      Shape out(a.begin(), a.end());
      out[r - 1] = b[r - 1];
      return out;
    }
    case LinearKind::conv2d: {
      if (a.size() != 4 || b.size() != 4)
        throw ShapeError("conv2d expects NCHW input and FCRS weight, got " + shape_str(a) + " and " +
                         shape_str(b));
      if (a[1] != b[1])
        throw ShapeError("contraction mismatch " + std::to_string(a[1]) + "≠" + std::to_string(b[1]));
      if (p.stride < 1 || p.padding < 0) throw ShapeError("conv2d stride must be >= 1 and padding >= 0");
      int64_t h = (a[2] + 2 * p.padding - b[2]) / p.stride + 1;
      int64_t w = (a[3] + 2 * p.padding - b[3]) / p.stride + 1;
      if (a[2] + 2 * p.padding < b[2] || a[3] + 2 * p.padding < b[3])
        throw ShapeError("conv2d kernel larger than padded input");
      return {a[0], b[0], h, w};
    }
  }
  throw ShapeError("unknown linear kind");
}

}  // namespace detail

// Output shape of one primitive applied to inputs of the given shapes.
inline Shape infer_shape(const PrimitiveKind& kind, std::span<const Shape> in) {
  detail::expect_arity(kind, in);
  return std::visit(
      [&](const auto& p) -> Shape {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Elementwise>) {
          for (std::size_t i = 1; i < in.size(); ++i)
            if (in[i] != in[0])
              throw ShapeError(std::string("elementwise ") + ew_name(p.fn) + " shape mismatch " +
                               shape_str(in[0]) + " vs " + shape_str(in[i]));
          return in[0];
        } else if constexpr (std::is_same_v<T, Reduce>) {
          int a = normalize_axis(p.axis, static_cast<int>(in[0].size()), "reduce");
          Shape out = in[0];
          out.erase(out.begin() + a);
          return out;
        } else if constexpr (std::is_same_v<T, Broadcast>) {
          int a = normalize_axis(p.axis, static_cast<int>(in[0].size()) + 1, "broadcast");
          if (p.size < 1) throw ShapeError("broadcast size must be >= 1");
          Shape out = in[0];
          out.insert(out.begin() + a, p.size);
          return out;
        } else if constexpr (std::is_same_v<T, Transpose>) {
          const Shape& s = in[0];
          if (p.perm.size() != s.size()) throw ShapeError("transpose perm rank mismatch");
          std::vector<int> sorted = p.perm;
          std::sort(sorted.begin(), sorted.end());
          for (std::size_t i = 0; i < sorted.size(); ++i)
            if (sorted[i] != static_cast<int>(i)) throw ShapeError("transpose perm is not a permutation");
          Shape out(s.size());
          for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[static_cast<std::size_t>(p.perm[i])];
          return out;
        } else if constexpr (std::is_same_v<T, Reshape>) {
          if (numel(p.shape) != numel(in[0]))
            throw ShapeError("reshape " + shape_str(in[0]) + " -> " + shape_str(p.shape) +
                             " changes element count");
          return p.shape;
        } else if constexpr (std::is_same_v<T, Pad>) {
          const Shape& s = in[0];
          if (p.low.size() != s.size() || p.high.size() != s.size())
            throw ShapeError("pad widths rank mismatch");
          Shape out = s;
          for (std::size_t i = 0; i < s.size(); ++i) {
            if (p.low[i] < 0 || p.high[i] < 0) throw ShapeError("negative pad width");
            out[i] += p.low[i] + p.high[i];
          }
          return out;
        } else if constexpr (std::is_same_v<T, Slice>) {
          const Shape& s = in[0];
          if (p.start.size() != s.size() || p.stop.size() != s.size())
            throw ShapeError("slice bounds rank mismatch");
          Shape out = s;
          for (std::size_t i = 0; i < s.size(); ++i) {
            if (p.start[i] < 0 || p.stop[i] > s[i] || p.start[i] >= p.stop[i])
              throw ShapeError("slice bounds out of range on axis " + std::to_string(i));
            out[i] = p.stop[i] - p.start[i];
          }
          return out;
        } else if constexpr (std::is_same_v<T, Split>) {
          int a = normalize_axis(p.axis, static_cast<int>(in[0].size()), "split");
          int64_t total = 0;
          for (auto sz : p.sizes) {
            if (sz < 1) throw ShapeError("split size must be >= 1");
            total += sz;
          }
          if (total != in[0][static_cast<std::size_t>(a)])
            throw ShapeError("split sizes do not sum to extent " + std::to_string(in[0][static_cast<std::size_t>(a)]));
          if (p.index < 0 || p.index >= static_cast<int>(p.sizes.size()))
            throw ShapeError("split index out of range");
          Shape out = in[0];
          out[static_cast<std::size_t>(a)] = p.sizes[static_cast<std::size_t>(p.index)];
          return out;
        } else if constexpr (std::is_same_v<T, Concat>) {
          int a = normalize_axis(p.axis, static_cast<int>(in[0].size()), "concat");
          Shape out = in[0];
          for (std::size_t i = 1; i < in.size(); ++i) {
            if (in[i].size() != in[0].size()) throw ShapeError("concat rank mismatch");
            for (std::size_t d = 0; d < in[0].size(); ++d) {
              if (static_cast<int>(d) == a) continue;
              if (in[i][d] != in[0][d])
                throw ShapeError("concat extent mismatch " + shape_str(in[0]) + " vs " + shape_str(in[i]));
            }
            out[static_cast<std::size_t>(a)] += in[i][static_cast<std::size_t>(a)];
          }
          return out;
        } else if constexpr (std::is_same_v<T, Linear>) {
          return detail::infer_linear(p, in);
        } else if constexpr (std::is_same_v<T, Constant>) {
          int64_t n = numel(p.shape);
          if (p.fill == Fill::literal && static_cast<int64_t>(p.data.size()) != n)
            throw ShapeError("constant literal has " + std::to_string(p.data.size()) + " values for shape " +
                             shape_str(p.shape));
          return p.shape;
        } else {
          if (!p.shape_fn) throw ShapeError("opaque '" + p.name + "' has no shape function");
          return p.shape_fn(in, p.attrs);
        }
      },
      kind);
}

// Opaque primitives known by name, so they can be reconstructed from JSON.
struct OpaqueDef {
  int arity = 1;
  OpaqueShapeFn shape_fn;
};

inline std::map<std::string, OpaqueDef>& opaque_registry() {
  static std::map<std::string, OpaqueDef> registry = [] {
    std::map<std::string, OpaqueDef> m;
    // k largest values along an axis.
    m["topk"] = OpaqueDef{1, [](std::span<const Shape> in, const OpaqueAttrs& attrs) -> Shape {
                            auto k_it = attrs.find("k");
                            if (k_it == attrs.end()) throw ShapeError("topk requires attribute k");
                            auto ax_it = attrs.find("axis");
                            int axis = ax_it == attrs.end() ? -1 : static_cast<int>(ax_it->second);
                            int a = normalize_axis(axis, static_cast<int>(in[0].size()), "topk");
                            auto k = static_cast<int64_t>(k_it->second);
                            if (k < 1 || k > in[0][static_cast<std::size_t>(a)])
                              throw ShapeError("topk k out of range");
                            Shape out = in[0];
                            out[static_cast<std::size_t>(a)] = k;
                            return out;
                          }};
    return m;
  }();
  return registry;
}

}  // namespace korch
