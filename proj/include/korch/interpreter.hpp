#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "korch/graph.hpp"
#include "korch/operator.hpp"
#include "korch/primitive.hpp"
#include "korch/tensor.hpp"

namespace korch {

namespace detail {

// Walks every coordinate of `shape` in row-major order.
template <class Fn>
void for_each_index(const Shape& shape, Fn&& fn) {
  int64_t total = numel(shape);
  std::vector<int64_t> idx(shape.size(), 0);
  for (int64_t flat = 0; flat < total; ++flat) {
    fn(flat, idx);
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
}

inline int64_t offset(const std::vector<int64_t>& idx, const std::vector<int64_t>& strides) {
  int64_t o = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) o += idx[i] * strides[i];
  return o;
}

inline double apply_unary(const Elementwise& e, double x) {
  switch (e.fn) {
    case EwFn::relu: return x > 0.0 ? x : 0.0;
    case EwFn::sqrt: return std::sqrt(x);
    case EwFn::erf: return std::erf(x);
    case EwFn::exp: return std::exp(x);
    case EwFn::neg: return -x;
    case EwFn::scale: return e.c * x;
    default: break;
  }
  throw Error("not a unary elementwise function");
}

inline double apply_binary(EwFn fn, double a, double b) {
  switch (fn) {
    case EwFn::add: return a + b;
    case EwFn::sub: return a - b;
    case EwFn::mul: return a * b;
    case EwFn::div: return a / b;
    default: break;
  }
  throw Error("not a binary elementwise function");
}

inline void split_around(const Shape& s, int axis, int64_t& outer, int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

inline DenseTensor reduce(const DenseTensor& x, int axis, Aggregator agg) {
  Shape out_shape = x.shape;
  out_shape.erase(out_shape.begin() + axis);
  int64_t outer, inner;
  split_around(x.shape, axis, outer, inner);
  int64_t n = x.shape[static_cast<std::size_t>(axis)];
  DenseTensor out = DenseTensor::zeros(out_shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double acc = agg == Aggregator::max ? -std::numeric_limits<double>::infinity() : 0.0;
      for (int64_t k = 0; k < n; ++k) {
        double v = x.data[static_cast<std::size_t>((o * n + k) * inner + i)];
        acc = agg == Aggregator::max ? std::max(acc, v) : acc + v;
      }
      if (agg == Aggregator::mean) acc /= static_cast<double>(n);
      out.data[static_cast<std::size_t>(o * inner + i)] = acc;
    }
  return out;
}

inline DenseTensor matmul2d(const DenseTensor& a, const DenseTensor& b) {
  int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  DenseTensor out = DenseTensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t p = 0; p < k; ++p) {
      double av = a.data[static_cast<std::size_t>(i * k + p)];
      for (int64_t j = 0; j < n; ++j)
        out.data[static_cast<std::size_t>(i * n + j)] += av * b.data[static_cast<std::size_t>(p * n + j)];
    }
  return out;
}

inline DenseTensor eval_linear(const Linear& lin, const DenseTensor& a, const DenseTensor& b, const Shape& out_shape) {
  switch (lin.kind) {
    case LinearKind::matmul:
      return matmul2d(a, b);
    case LinearKind::batched_matmul: {
      auto r = a.shape.size();
      int64_t m = a.shape[r - 2], k = a.shape[r - 1], n = b.shape[r - 1];
      int64_t batch = numel(a.shape) / (m * k);
      DenseTensor out = DenseTensor::zeros(out_shape);
      for (int64_t bi = 0; bi < batch; ++bi)
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            double av = a.data[static_cast<std::size_t>(bi * m * k + i * k + p)];
            for (int64_t j = 0; j < n; ++j)
              out.data[static_cast<std::size_t>(bi * m * n + i * n + j)] +=
                  av * b.data[static_cast<std::size_t>(bi * k * n + p * n + j)];
          }
      return out;
    }
    case LinearKind::conv2d: {
      int64_t N = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
      int64_t F = b.shape[0], R = b.shape[2], S = b.shape[3];
      int64_t Ho = out_shape[2], Wo = out_shape[3];
      DenseTensor out = DenseTensor::zeros(out_shape);
      for (int64_t nb = 0; nb < N; ++nb)
        for (int64_t f = 0; f < F; ++f)
          for (int64_t y = 0; y < Ho; ++y)
            for (int64_t x = 0; x < Wo; ++x) {
              double acc = 0.0;
              for (int64_t c = 0; c < C; ++c)
                for (int64_t r = 0; r < R; ++r)
                  for (int64_t s = 0; s < S; ++s) {
                    int64_t iy = y * lin.stride - lin.padding + r;
                    int64_t ix = x * lin.stride - lin.padding + s;
                    if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                    acc += a.data[static_cast<std::size_t>(((nb * C + c) * H + iy) * W + ix)] *
                           b.data[static_cast<std::size_t>(((f * C + c) * R + r) * S + s)];
                  }
              out.data[static_cast<std::size_t>(((nb * F + f) * Ho + y) * Wo + x)] = acc;
            }
      return out;
    }
  }
  throw Error("unknown linear kind");
}

inline DenseTensor topk(const DenseTensor& x, const OpaqueAttrs& attrs, const Shape& out_shape) {
  int axis = normalize_axis(static_cast<int>(attrs.count("axis") ? attrs.at("axis") : -1), x.rank(), "topk");
  auto k = static_cast<int64_t>(attrs.at("k"));
  int64_t outer, inner;
  split_around(x.shape, axis, outer, inner);
  int64_t n = x.shape[static_cast<std::size_t>(axis)];
  DenseTensor out = DenseTensor::zeros(out_shape);
  std::vector<double> row(static_cast<std::size_t>(n));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      for (int64_t j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = x.data[static_cast<std::size_t>((o * n + j) * inner + i)];
      std::sort(row.begin(), row.end(), std::greater<>());
      for (int64_t j = 0; j < k; ++j)
        out.data[static_cast<std::size_t>((o * k + j) * inner + i)] = row[static_cast<std::size_t>(j)];
    }
  return out;
}

}  // namespace detail

DenseTensor eval_operator(const OperatorKind& op, std::span<const DenseTensor> inputs);

// Reference semantics of a single primitive.
inline DenseTensor eval_primitive(const PrimitiveKind& kind, std::span<const DenseTensor> inputs) {
  std::vector<Shape> in_shapes;
  for (auto& t : inputs) in_shapes.push_back(t.shape);
  const Shape out_shape = infer_shape(kind, in_shapes);
  return std::visit(
      [&](const auto& p) -> DenseTensor {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Elementwise>) {
          DenseTensor out = DenseTensor::zeros(out_shape);
          if (is_unary(p.fn)) {
            for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = detail::apply_unary(p, inputs[0].data[i]);
          } else {
            for (std::size_t i = 0; i < out.data.size(); ++i)
              out.data[i] = detail::apply_binary(p.fn, inputs[0].data[i], inputs[1].data[i]);
          }
          return out;
        } else if constexpr (std::is_same_v<T, Reduce>) {
          return detail::reduce(inputs[0], normalize_axis(p.axis, inputs[0].rank(), "reduce"), p.agg);
        } else if constexpr (std::is_same_v<T, Broadcast>) {
          int a = normalize_axis(p.axis, inputs[0].rank() + 1, "broadcast");
          int64_t outer = 1, inner = 1;
          for (int i = 0; i < a; ++i) outer *= inputs[0].shape[static_cast<std::size_t>(i)];
          for (std::size_t i = static_cast<std::size_t>(a); i < inputs[0].shape.size(); ++i) inner *= inputs[0].shape[i];
          DenseTensor out = DenseTensor::zeros(out_shape);
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < p.size; ++k)
              for (int64_t i = 0; i < inner; ++i)
                out.data[static_cast<std::size_t>((o * p.size + k) * inner + i)] =
                    inputs[0].data[static_cast<std::size_t>(o * inner + i)];
          return out;
        } else if constexpr (std::is_same_v<T, Transpose>) {
          auto in_strides = row_major_strides(inputs[0].shape);
          DenseTensor out = DenseTensor::zeros(out_shape);
          std::vector<int64_t> src(out_shape.size());
          detail::for_each_index(out_shape, [&](int64_t flat, const std::vector<int64_t>& x) {
            for (std::size_t i = 0; i < x.size(); ++i) src[static_cast<std::size_t>(p.perm[i])] = x[i];
            out.data[static_cast<std::size_t>(flat)] = inputs[0].data[static_cast<std::size_t>(detail::offset(src, in_strides))];
          });
          return out;
        } else if constexpr (std::is_same_v<T, Reshape>) {
          return DenseTensor(out_shape, inputs[0].data);
        } else if constexpr (std::is_same_v<T, Pad>) {
          const auto& s = inputs[0].shape;
          auto in_strides = row_major_strides(s);
          DenseTensor out = DenseTensor::filled(out_shape, p.value);
          std::vector<int64_t> src(s.size());
          detail::for_each_index(out_shape, [&](int64_t flat, const std::vector<int64_t>& x) {
            for (std::size_t i = 0; i < x.size(); ++i) {
              src[i] = x[i] - p.low[i];
              if (src[i] < 0 || src[i] >= s[i]) return;
            }
            out.data[static_cast<std::size_t>(flat)] = inputs[0].data[static_cast<std::size_t>(detail::offset(src, in_strides))];
          });
          return out;
        } else if constexpr (std::is_same_v<T, Slice>) {
          auto in_strides = row_major_strides(inputs[0].shape);
          DenseTensor out = DenseTensor::zeros(out_shape);
          std::vector<int64_t> src(out_shape.size());
          detail::for_each_index(out_shape, [&](int64_t flat, const std::vector<int64_t>& x) {
            for (std::size_t i = 0; i < x.size(); ++i) src[i] = x[i] + p.start[i];
            out.data[static_cast<std::size_t>(flat)] = inputs[0].data[static_cast<std::size_t>(detail::offset(src, in_strides))];
          });
          return out;
        } else if constexpr (std::is_same_v<T, Split>) {
          int a = normalize_axis(p.axis, inputs[0].rank(), "split");
          int64_t base = 0;
          for (int i = 0; i < p.index; ++i) base += p.sizes[static_cast<std::size_t>(i)];
          auto in_strides = row_major_strides(inputs[0].shape);
          DenseTensor out = DenseTensor::zeros(out_shape);
          std::vector<int64_t> src(out_shape.size());
          detail::for_each_index(out_shape, [&](int64_t flat, const std::vector<int64_t>& x) {
            src = x;
            src[static_cast<std::size_t>(a)] += base;
            out.data[static_cast<std::size_t>(flat)] = inputs[0].data[static_cast<std::size_t>(detail::offset(src, in_strides))];
          });
          return out;
        } else if constexpr (std::is_same_v<T, Concat>) {
          int a = normalize_axis(p.axis, inputs[0].rank(), "concat");
          DenseTensor out = DenseTensor::zeros(out_shape);
          std::vector<int64_t> src(out_shape.size());
          detail::for_each_index(out_shape, [&](int64_t flat, const std::vector<int64_t>& x) {
            src = x;
            std::size_t which = 0;
            while (src[static_cast<std::size_t>(a)] >= inputs[which].shape[static_cast<std::size_t>(a)]) {
              src[static_cast<std::size_t>(a)] -= inputs[which].shape[static_cast<std::size_t>(a)];
              ++which;
            }
            out.data[static_cast<std::size_t>(flat)] =
                inputs[which].data[static_cast<std::size_t>(detail::offset(src, row_major_strides(inputs[which].shape)))];
          });
          return out;
        } else if constexpr (std::is_same_v<T, Linear>) {
          return detail::eval_linear(p, inputs[0], inputs[1], out_shape);
        } else if constexpr (std::is_same_v<T, Constant>) {
          if (p.fill == Fill::ones) return DenseTensor::filled(out_shape, 1.0);
          if (p.fill == Fill::zeros) return DenseTensor::zeros(out_shape);
          return DenseTensor(out_shape, p.data);
        } else {
          if (p.name == "topk") return detail::topk(inputs[0], p.attrs, out_shape);
          if (auto op = composite_from_name(p.name, p.attrs)) return eval_operator(*op, inputs);
          throw Error("no evaluator for opaque primitive '" + p.name + "'");
        }
      },
      kind);
}

namespace detail {

// Mean and (biased) variance over the contiguous block [outer][n][inner]
// along the middle axis; returns per-(outer,inner) normalized values.
inline DenseTensor normalize_axis_block(const DenseTensor& x, int64_t outer, int64_t n, int64_t inner, double eps) {
  DenseTensor out = DenseTensor::zeros(x.shape);
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      auto at = [&](int64_t k) { return static_cast<std::size_t>((o * n + k) * inner + i); };
      double mean = 0.0;
      for (int64_t k = 0; k < n; ++k) mean += x.data[at(k)];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (int64_t k = 0; k < n; ++k) var += (x.data[at(k)] - mean) * (x.data[at(k)] - mean);
      var /= static_cast<double>(n);
      double denom = std::sqrt(var + eps);
      for (int64_t k = 0; k < n; ++k) out.data[at(k)] = (x.data[at(k)] - mean) / denom;
    }
  return out;
}

}  // namespace detail

// Direct mathematical definitions of the composite operators. These are the
// oracles the fission rules are checked against, so none of them is built
// from primitives.
inline DenseTensor eval_operator(const OperatorKind& op, std::span<const DenseTensor> inputs) {
  if (auto p = as_primitive(op)) return eval_primitive(*p, inputs);
  std::vector<Shape> in_shapes;
  for (auto& t : inputs) in_shapes.push_back(t.shape);
  const Shape out_shape = infer_shape(op, in_shapes);
  const DenseTensor& x = inputs[0];
  return std::visit(
      [&](const auto& o) -> DenseTensor {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, Softmax>) {
          // softmax(x_i) = e^{x_i} / sum_j e^{x_j}
          int a = normalize_axis(o.axis, x.rank(), "softmax");
          int64_t outer, inner;
          detail::split_around(x.shape, a, outer, inner);
          int64_t n = x.shape[static_cast<std::size_t>(a)];
          DenseTensor out = DenseTensor::zeros(x.shape);
          for (int64_t b = 0; b < outer; ++b)
            for (int64_t i = 0; i < inner; ++i) {
              double denom = 0.0;
              for (int64_t k = 0; k < n; ++k) denom += std::exp(x.data[static_cast<std::size_t>((b * n + k) * inner + i)]);
              for (int64_t k = 0; k < n; ++k) {
                auto at = static_cast<std::size_t>((b * n + k) * inner + i);
                out.data[at] = std::exp(x.data[at]) / denom;
              }
            }
          return out;
        } else if constexpr (std::is_same_v<T, InstanceNorm>) {
          int64_t spatial = 1;
          for (std::size_t d = 2; d < x.shape.size(); ++d) spatial *= x.shape[d];
          return detail::normalize_axis_block(x, x.shape[0] * x.shape[1], spatial, 1, o.eps);
        } else if constexpr (std::is_same_v<T, LayerNorm>) {
          int a = normalize_axis(o.axis, x.rank(), "layer_norm");
          int64_t outer, inner;
          detail::split_around(x.shape, a, outer, inner);
          return detail::normalize_axis_block(x, outer, x.shape[static_cast<std::size_t>(a)], inner, o.eps);
        } else if constexpr (std::is_same_v<T, Gelu>) {
          DenseTensor out = DenseTensor::zeros(x.shape);
          for (std::size_t i = 0; i < x.data.size(); ++i)
            out.data[i] = 0.5 * x.data[i] * (1.0 + std::erf(x.data[i] / std::sqrt(2.0)));
          return out;
        } else if constexpr (std::is_same_v<T, ReduceMean>) {
          return detail::reduce(x, normalize_axis(o.axis, x.rank(), "reduce_mean"), Aggregator::mean);
        } else {
          (void)out_shape;
          return eval_primitive(o, inputs);
        }
      },
      op);
}

inline DenseTensor eval_kind(const PrimitiveKind& k, std::span<const DenseTensor> in) { return eval_primitive(k, in); }
inline DenseTensor eval_kind(const OperatorKind& k, std::span<const DenseTensor> in) { return eval_operator(k, in); }

using TensorMap = std::map<std::string, DenseTensor>;
using NodeValues = std::map<int, DenseTensor>;

// Evaluates a graph in topological order. Returns the graph outputs keyed by
// node id.
template <class Kind>
NodeValues eval_graph(const Graph<Kind>& g, const TensorMap& inputs) {
  for (auto& spec : g.inputs) {
    auto it = inputs.find(spec.name);
    if (it == inputs.end()) throw MissingInput("missing input '" + spec.name + "'");
    if (it->second.shape != spec.shape)
      throw ShapeError("input '" + spec.name + "' has shape " + shape_str(it->second.shape) + ", expected " +
                       shape_str(spec.shape));
  }
  std::unordered_map<int, DenseTensor> values;
  for (int id : topo_sort(g)) {
    const auto& n = g.at(id);
    std::vector<DenseTensor> args;
    for (auto& src : n.operands()) {
      if (src.is_input()) {
        auto it = inputs.find(src.input);
        if (it == inputs.end()) throw MissingInput("missing input '" + src.input + "'");
        args.push_back(it->second);
      } else {
        args.push_back(values.at(src.node));
      }
    }
    try {
      values[id] = eval_kind(n.kind, args);
    } catch (const ShapeError& e) {
      throw ShapeError("node " + std::to_string(id) + ": " + e.what());
    }
  }
  NodeValues out;
  for (int o : g.outputs) out[o] = values.at(o);
  return out;
}

struct Comparison {
  bool equal = false;
  double max_abs_diff = 0.0;
};

// True iff shapes match and |a_i - b_i| <= atol + rtol * |b_i| everywhere.
// Matching infinities and NaNs compare equal.
inline Comparison compare(const DenseTensor& a, const DenseTensor& b, double atol = 1e-9, double rtol = 1e-9) {
  if (a.shape != b.shape) return {false, std::numeric_limits<double>::infinity()};
  Comparison c{true, 0.0};
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double x = a.data[i], y = b.data[i];
    if (x == y || (std::isnan(x) && std::isnan(y))) continue;
    double d = std::abs(x - y);
    if (std::isnan(d)) d = std::numeric_limits<double>::infinity();
    c.max_abs_diff = std::max(c.max_abs_diff, d);
    if (!(d <= atol + rtol * std::abs(y))) c.equal = false;
  }
  return c;
}

inline Comparison compare(const NodeValues& a, const NodeValues& b, double atol = 1e-9, double rtol = 1e-9) {
  if (a.size() != b.size()) return {false, std::numeric_limits<double>::infinity()};
  Comparison total{true, 0.0};
  for (auto& [id, t] : a) {
    auto it = b.find(id);
    if (it == b.end()) return {false, std::numeric_limits<double>::infinity()};
    auto c = compare(t, it->second, atol, rtol);
    total.equal = total.equal && c.equal;
    total.max_abs_diff = std::max(total.max_abs_diff, c.max_abs_diff);
  }
  return total;
}

template <class Kind, class Rng>
TensorMap random_inputs(const Graph<Kind>& g, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorMap m;
  for (auto& in : g.inputs) m[in.name] = DenseTensor::random(in.shape, rng, lo, hi);
  return m;
}

// Longest chain of exp/erf primitives along any path.
inline int transcendental_depth(const PrimitiveGraph& g) {
  std::unordered_map<int, int> depth;
  int best = 0;
  for (int id : topo_sort(g)) {
    const auto& n = g.at(id);
    int d = 0;
    for (auto& src : n.operands())
      if (!src.is_input()) d = std::max(d, depth[src.node]);
    if (auto e = std::get_if<Elementwise>(&n.kind); e && (e->fn == EwFn::exp || e->fn == EwFn::erf)) ++d;
    depth[id] = d;
    best = std::max(best, d);
  }
  return best;
}

// Default oracle tolerance, relaxed for deep exp/erf chains.
inline double oracle_tolerance(const PrimitiveGraph& g) { return transcendental_depth(g) > 8 ? 1e-6 : 1e-9; }

}  // namespace korch
