#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "korch/cost_model.hpp"
#include "korch/kernel_identifier.hpp"

namespace korch {

// Selecting every kernel in `stuck` requires selecting at least one kernel
// in `escape`:  sum(stuck) - sum(escape) <= |stuck| - 1.
struct Cut {
  std::vector<int> stuck;
  std::vector<int> escape;
};

// Rows are kernels, columns are primitives (Dag positions).
struct BlpInstance {
  std::size_t num_primitives = 0;
  std::vector<int64_t> cost;     // picoseconds
  std::vector<NodeSet> inputs;   // I: primitives each kernel reads
  std::vector<NodeSet> members;  // O: primitives each kernel computes
  std::vector<NodeSet> outputs;  // primitives each kernel materializes
  NodeSet targets;               // T
  std::vector<Cut> cuts;

  std::size_t size() const { return cost.size(); }
};

struct PricedKernel {
  CandidateKernel kernel;
  CostEstimate estimate;
  int64_t cost_ps = 0;
};

// Prices every candidate and drops rejected ones.
inline std::vector<PricedKernel> price_candidates(const PrimitiveGraph& g, const IdentifyResult& id,
                                                  const CostModelConfig& cfg = {}, const ProfileTable* table = nullptr) {
  PrimitiveGraph shaped = infer_shapes(g);
  std::vector<PricedKernel> out;
  for (auto& c : id.candidates) {
    auto r = estimate_cost(shaped, id.dag, c, cfg, table);
    if (auto e = std::get_if<CostEstimate>(&r)) out.push_back(PricedKernel{c, *e, to_picoseconds(e->latency_us)});
  }
  return out;
}

inline BlpInstance build_blp(const Dag& dag, const std::vector<PricedKernel>& kernels) {
  BlpInstance b;
  b.num_primitives = dag.size();
  b.targets = dag.outputs;
  NodeSet covered(dag.size());
  for (auto& k : kernels) {
    b.cost.push_back(k.cost_ps);
    b.inputs.push_back(k.kernel.inputs);
    b.members.push_back(k.kernel.members);
    b.outputs.push_back(k.kernel.outputs);
    covered |= k.kernel.outputs;
  }
  NodeSet missing = b.targets - covered;
  if (missing.any())
    throw Infeasible("graph output " + std::to_string(dag.ids[missing.first()]) + " is produced by no candidate kernel");
  return b;
}

struct Strategy {
  std::vector<int> selected;  // ascending kernel indices
  int64_t total_ps = 0;
  std::vector<int> execution_counts;  // per primitive position
  bool optimal = true;
  int cuts_applied = 0;
  uint64_t nodes = 0;

  double total_cost_us() const { return to_microseconds(total_ps); }
};

inline Strategy make_strategy(const BlpInstance& b, std::vector<int> selected) {
  Strategy s;
  std::sort(selected.begin(), selected.end());
  s.selected = std::move(selected);
  s.execution_counts.assign(b.num_primitives, 0);
  for (int k : s.selected) {
    s.total_ps += b.cost[static_cast<std::size_t>(k)];
    b.members[static_cast<std::size_t>(k)].for_each([&](std::size_t p) { ++s.execution_counts[p]; });
  }
  return s;
}

inline bool cut_violated(const Cut& c, const std::vector<char>& chosen) {
  for (int k : c.stuck)
    if (!chosen[static_cast<std::size_t>(k)]) return false;
  for (int k : c.escape)
    if (chosen[static_cast<std::size_t>(k)]) return false;
  return true;
}

// Independent check of the output constraints, the dependency constraints
// and the cuts. Returns a description of the first violation.
inline std::optional<std::string> verify_selection(const BlpInstance& b, const std::vector<int>& selected) {
  std::vector<int> produced(b.num_primitives, 0);
  std::vector<char> chosen(b.size(), 0);
  for (int k : selected) {
    if (k < 0 || static_cast<std::size_t>(k) >= b.size()) return "kernel index out of range";
    chosen[static_cast<std::size_t>(k)] = 1;
    for (std::size_t j = 0; j < b.num_primitives; ++j) produced[j] += b.outputs[static_cast<std::size_t>(k)].test(j);
  }
  for (std::size_t j = 0; j < b.num_primitives; ++j)
    if (b.targets.test(j) && produced[j] < 1) return "output primitive " + std::to_string(j) + " not produced";
  for (int k : selected)
    for (std::size_t j = 0; j < b.num_primitives; ++j)
      if (b.inputs[static_cast<std::size_t>(k)].test(j) && produced[j] < 1)
        return "kernel " + std::to_string(k) + " reads primitive " + std::to_string(j) + " that nothing produces";
  for (std::size_t c = 0; c < b.cuts.size(); ++c)
    if (cut_violated(b.cuts[c], chosen)) return "cut " + std::to_string(c) + " violated";
  return std::nullopt;
}

struct ReadyOrder {
  std::vector<int> order;  // kernels in firing order
  std::vector<int> stuck;  // kernels that never became ready
  NodeSet produced;
};

// Sequential ready list: repeatedly fire the lowest-index selected kernel
// whose inputs have all been produced.
inline ReadyOrder ready_list(const BlpInstance& b, const std::vector<int>& selected) {
  ReadyOrder r;
  r.produced = NodeSet(b.num_primitives);
  std::vector<int> pending = selected;
  std::sort(pending.begin(), pending.end());
  bool progress = true;
  while (!pending.empty() && progress) {
    progress = false;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      auto k = static_cast<std::size_t>(pending[i]);
      if (b.inputs[k].is_subset_of(r.produced)) {
        r.order.push_back(pending[i]);
        r.produced |= b.outputs[k];
        pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(i));
        progress = true;
        break;
      }
    }
  }
  r.stuck = std::move(pending);
  return r;
}

// No-good cut for a selection whose kernels in `r.stuck` wait on each other.
// Any schedulable selection containing all of them must add another
// producer of a tensor they are missing.
inline Cut make_cut(const BlpInstance& b, const ReadyOrder& r) {
  Cut c;
  c.stuck = r.stuck;
  NodeSet missing(b.num_primitives);
  for (int k : r.stuck) missing |= b.inputs[static_cast<std::size_t>(k)];
  missing -= r.produced;
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (std::find(r.stuck.begin(), r.stuck.end(), static_cast<int>(k)) != r.stuck.end()) continue;
    if (b.outputs[k].intersects(missing)) c.escape.push_back(static_cast<int>(k));
  }
  return c;
}

enum class SolverKind { bnb, exhaustive };

struct SolveOptions {
  SolverKind kind = SolverKind::bnb;
  double timeout_s = 300.0;
  std::size_t memo_cap = 4'000'000;
  int max_cut_rounds = 10000;
};

namespace detail {

using Clock = std::chrono::steady_clock;

struct Deadline {
  Clock::time_point at;
  bool expired() const { return Clock::now() >= at; }
};

inline Deadline deadline_after(double seconds) {
  auto d = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(std::min(seconds, 1e9)));
  return {Clock::now() + d};
}

struct TimedOut {};

// Include/exclude enumeration over kernel indices; exact by construction.
// Ties go to the lexicographically smallest selection.
class ExhaustiveSolver {
 public:
  ExhaustiveSolver(const BlpInstance& b, Deadline dl) : b_(b), dl_(dl), chosen_(b.size(), 0), possible_(b.num_primitives, 0) {
    for (std::size_t k = 0; k < b.size(); ++k) b.outputs[k].for_each([&](std::size_t j) { ++possible_[j]; });
  }

  std::optional<Strategy> run() {
    rec(0, 0);
    if (!found_) return std::nullopt;
    auto s = make_strategy(b_, best_sel_);
    s.nodes = nodes_;
    return s;
  }

 private:
  bool dead_end() const {
    for (std::size_t j = 0; j < b_.num_primitives; ++j)
      if (possible_[j] == 0 && b_.targets.test(j)) return true;
    for (std::size_t k = 0; k < b_.size(); ++k) {
      if (!chosen_[k]) continue;
      bool bad = false;
      b_.inputs[k].for_each([&](std::size_t j) { bad = bad || possible_[j] == 0; });
      if (bad) return true;
    }
    return false;
  }

  void rec(std::size_t i, int64_t cost) {
    if ((++nodes_ & 0xfff) == 0 && dl_.expired()) throw TimedOut{};
    if (found_ && cost > best_) return;
    if (i == b_.size()) {
      std::vector<int> sel;
      for (std::size_t k = 0; k < b_.size(); ++k)
        if (chosen_[k]) sel.push_back(static_cast<int>(k));
      if (verify_selection(b_, sel)) return;
      NodeSet a = NodeSet::of(b_.size(), sel), c = NodeSet::of(b_.size(), best_sel_);
      if (!found_ || cost < best_ || lex_less(a, c)) {
        found_ = true;
        best_ = cost;
        best_sel_ = std::move(sel);
      }
      return;
    }
    chosen_[i] = 1;
    rec(i + 1, cost + b_.cost[i]);
    chosen_[i] = 0;
    b_.outputs[i].for_each([&](std::size_t j) { --possible_[j]; });
    if (!dead_end()) rec(i + 1, cost);
    b_.outputs[i].for_each([&](std::size_t j) { ++possible_[j]; });
  }

  const BlpInstance& b_;
  Deadline dl_;
  std::vector<char> chosen_;
  std::vector<int> possible_;
  bool found_ = false;
  int64_t best_ = 0;
  std::vector<int> best_sel_;
  uint64_t nodes_ = 0;
};

// Order used to break cost ties between sorted selections. Among
// selections of equal optimal cost none contains another (costs are
// positive), and on such sets this is plain lexicographic order. It only
// looks at the smallest element of the symmetric difference, so it also
// ranks two partial selections that share every completion.
inline bool tie_better(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t i = 0;
  for (; i < a.size() && i < b.size(); ++i)
    if (a[i] != b[i]) return a[i] < b[i];
  return i < a.size();
}

struct KeyHash {
  std::size_t operator()(const std::vector<uint64_t>& v) const {
    std::size_t h = 1469598103934665603ull;
    for (auto w : v) h = (h ^ w) * 1099511628211ull;
    return h;
  }
};

// Branch and bound over "which kernel produces the highest still-needed
// primitive". A node is (needed, available, cost so far); the bound adds
// the cheapest possible production of what is still needed.
class BranchAndBound {
 public:
  BranchAndBound(const BlpInstance& b, Deadline dl, std::size_t memo_cap)
      : b_(b), n_(b.num_primitives), dl_(dl), memo_cap_(memo_cap), chosen_(b.size(), 0) {
    prepare();
  }

  // nullopt: no feasible selection. Throws TimedOut only when no incumbent.
  std::optional<Strategy> run(bool& optimal) {
    optimal = true;
    if (!feasible_) return std::nullopt;
    try {
      NodeSet needed = b_.targets;
      dfs(needed, NodeSet(n_), 0);
    } catch (const TimedOut&) {
      optimal = false;
      if (!found_) throw;
    }
    if (!found_) return std::nullopt;
    auto s = make_strategy(b_, best_sel_);
    s.optimal = optimal;
    s.nodes = nodes_;
    return s;
  }

 private:
  void prepare() {
    // Kernels whose inputs can all be produced without a dependency cycle.
    usable_.assign(b_.size(), 0);
    NodeSet producible(n_);
    for (bool grew = true; grew;) {
      grew = false;
      for (std::size_t k = 0; k < b_.size(); ++k)
        if (!usable_[k] && b_.inputs[k].is_subset_of(producible)) {
          usable_[k] = 1;
          producible |= b_.outputs[k];
          grew = true;
        }
    }
    feasible_ = b_.targets.is_subset_of(producible);

    single_output_ = true;
    monotone_ = true;
    producers_.assign(n_, {});
    for (std::size_t k = 0; k < b_.size(); ++k) {
      if (!usable_[k]) continue;
      single_output_ = single_output_ && b_.outputs[k].count() == 1;
      auto ins = b_.inputs[k].members();
      if (!ins.empty() && static_cast<std::size_t>(ins.back()) >= b_.outputs[k].first()) monotone_ = false;
      b_.outputs[k].for_each([&](std::size_t j) { producers_[j].push_back(static_cast<int>(k)); });
    }

    const double inf = std::numeric_limits<double>::infinity();
    minc_.assign(n_, inf);
    chain_.assign(n_, inf);
    for (std::size_t j = 0; j < n_; ++j)
      for (int k : producers_[j]) {
        auto ku = static_cast<std::size_t>(k);
        double c = static_cast<double>(b_.cost[ku]);
        minc_[j] = std::min(minc_[j], c / static_cast<double>(b_.outputs[ku].count()));
        double below = 0;
        b_.inputs[ku].for_each([&](std::size_t i) {
          if (i < j) below = std::max(below, chain_[i]);
        });
        chain_[j] = std::min(chain_[j], c + below);
      }
    for (std::size_t j = 0; j < n_; ++j) {
      auto& ps = producers_[j];
      auto score = [&](int k) {
        double s = static_cast<double>(b_.cost[static_cast<std::size_t>(k)]);
        double below = 0;
        b_.inputs[static_cast<std::size_t>(k)].for_each([&](std::size_t i) { below = std::max(below, chain_[i]); });
        return s + below;
      };
      std::stable_sort(ps.begin(), ps.end(), [&](int a, int c) { return score(a) < score(c); });
    }
  }

  // Lower bound on the cost of producing everything in `needed` given the
  // primitives in `avail` are already materialized.
  double bound(const NodeSet& needed, const NodeSet& avail) const {
    double split = 0;
    needed.for_each([&](std::size_t j) { split += minc_[j]; });
    double best = split;
    std::size_t lowest_avail = avail.any() ? avail.first() : n_;
    if (single_output_) {
      // A derivation chain of j only produces primitives at positions <= j,
      // so producers of needed primitives above j are separate kernels.
      double above = 0;
      auto list = needed.members();
      for (std::size_t i = list.size(); i-- > 0;) {
        auto j = static_cast<std::size_t>(list[i]);
        if (j <= lowest_avail) best = std::max(best, chain_[j] + above);
        above += minc_[j];
      }
    } else {
      needed.for_each([&](std::size_t j) {
        if (j <= lowest_avail) best = std::max(best, chain_[j]);
      });
    }
    return best;
  }

  std::vector<uint64_t> key(const NodeSet& needed, const NodeSet& avail) const {
    std::vector<uint64_t> k = needed.words();
    if (monotone_) {
      // Nothing above the highest needed primitive can be needed again.
      NodeSet low(n_);
      std::size_t top = needed.members().back();
      avail.for_each([&](std::size_t j) {
        if (j < top) low.set(j);
      });
      k.insert(k.end(), low.words().begin(), low.words().end());
    } else {
      k.insert(k.end(), avail.words().begin(), avail.words().end());
    }
    return k;
  }

  void take(int k, const NodeSet& needed, const NodeSet& avail, int64_t cost) {
    auto ku = static_cast<std::size_t>(k);
    NodeSet a = avail | b_.outputs[ku];
    NodeSet nd = (needed | b_.inputs[ku]) - a;
    chosen_[ku] = 1;
    sel_.push_back(k);
    dfs(nd, a, cost + b_.cost[ku]);
    sel_.pop_back();
    chosen_[ku] = 0;
  }

  void dfs(const NodeSet& needed, const NodeSet& avail, int64_t cost) {
    if ((++nodes_ & 0x3ff) == 0 && dl_.expired()) throw TimedOut{};
    if (found_ && cost > best_) return;
    if (needed.empty()) {
      for (auto& c : b_.cuts) {
        if (!cut_violated(c, chosen_)) continue;
        for (int e : c.escape)
          if (usable_[static_cast<std::size_t>(e)]) take(e, needed, avail, cost);
        return;
      }
      auto sel = sorted_selection();
      if (!found_ || cost < best_ || tie_better(sel, best_sel_)) {
        found_ = true;
        best_ = cost;
        best_sel_ = std::move(sel);
      }
      return;
    }
    if (found_ && static_cast<double>(cost) + bound(needed, avail) > static_cast<double>(best_)) return;
    if (b_.cuts.empty()) {
      // Equal states have equal completions, so a later arrival is only
      // worth exploring if it is cheaper or wins the tie.
      auto k = key(needed, avail);
      auto it = memo_.find(k);
      if (it != memo_.end()) {
        if (it->second.cost < cost) return;
        auto sel = sorted_selection();
        if (it->second.cost == cost && !tie_better(sel, it->second.prefix)) return;
        it->second = {cost, std::move(sel)};
      } else if (memo_.size() < memo_cap_) {
        memo_.emplace(std::move(k), MemoEntry{cost, sorted_selection()});
      }
    }
    std::size_t j = static_cast<std::size_t>(needed.members().back());
    for (int k : producers_[j]) take(k, needed, avail, cost);
  }

  std::vector<int> sorted_selection() const {
    auto s = sel_;
    std::sort(s.begin(), s.end());
    return s;
  }

  struct MemoEntry {
    int64_t cost;
    std::vector<int> prefix;
  };

  const BlpInstance& b_;
  std::size_t n_;
  Deadline dl_;
  std::size_t memo_cap_;
  std::vector<char> usable_;
  bool feasible_ = false;
  bool single_output_ = true;
  bool monotone_ = true;
  std::vector<std::vector<int>> producers_;
  std::vector<double> minc_, chain_;
  std::unordered_map<std::vector<uint64_t>, MemoEntry, KeyHash> memo_;
  std::vector<char> chosen_;
  std::vector<int> sel_;
  bool found_ = false;
  int64_t best_ = 0;
  std::vector<int> best_sel_;
  uint64_t nodes_ = 0;
};

}  // namespace detail

// One solve of the instance as given (cuts included). Throws Infeasible,
// or Timeout when the budget runs out before any feasible selection.
inline Strategy solve(const BlpInstance& b, const SolveOptions& opt = {}) {
  auto dl = detail::deadline_after(opt.timeout_s);
  if (opt.kind == SolverKind::exhaustive) {
    if (b.size() > 25) throw Error("exhaustive solver needs at most 25 candidates, got " + std::to_string(b.size()));
    try {
      auto s = detail::ExhaustiveSolver(b, dl).run();
      if (!s) throw Infeasible("no selection satisfies the output and dependency constraints");
      return *s;
    } catch (const detail::TimedOut&) {
      throw Timeout("exhaustive solver exceeded its time budget");
    }
  }
  bool optimal = true;
  try {
    auto s = detail::BranchAndBound(b, dl, opt.memo_cap).run(optimal);
    if (!s) throw Infeasible("no selection satisfies the output and dependency constraints");
    return *s;
  } catch (const detail::TimedOut&) {
    throw Timeout("branch and bound found no feasible selection within its time budget");
  }
}

// nullopt when the selection schedules; otherwise the cut excluding it.
inline std::optional<Cut> validate_and_cut(const BlpInstance& b, const Strategy& s) {
  auto r = ready_list(b, s.selected);
  if (r.stuck.empty()) return std::nullopt;
  return make_cut(b, r);
}

// Solves, checks the selection with the ready list, and appends a cut for
// every unschedulable selection until one schedules. `b.cuts` accumulates
// the cuts that were needed.
inline Strategy optimize(BlpInstance& b, const SolveOptions& opt = {}) {
  auto start = detail::Clock::now();
  for (int round = 0;; ++round) {
    SolveOptions o = opt;
    o.timeout_s = opt.timeout_s - std::chrono::duration<double>(detail::Clock::now() - start).count();
    Strategy s = solve(b, o);
    auto cut = validate_and_cut(b, s);
    if (!cut) {
      s.cuts_applied = round;
      return s;
    }
    if (round >= opt.max_cut_rounds) throw Error("cut loop did not converge");
    b.cuts.push_back(std::move(*cut));
  }
}

}  // namespace korch
