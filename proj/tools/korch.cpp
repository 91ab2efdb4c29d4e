// korch command line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <random>

#include "korch/korch.hpp"

using namespace korch;

namespace {

struct Config {
  std::string input;
  std::string cost_model;
  std::string profile;
  int rewrite_depth = 3;
  int max_kernel_primitives = 12;
  int partition_max = 64;
  std::string solver = "bnb";
  double timeout_s = 300.0;
  uint64_t seed = 0;
  std::string dot;
  int threads = 1;
  std::string dump;
  std::string emit;
  std::string inputs;
  std::string output;
};

// Operator-level documents go through fission; primitive-level ones are lifted
// so every stage sees a computation graph.
ComputationGraph load_graph(const std::string& path) {
  auto text = read_file(path);
  if (graph_level(text) == "primitive") return lift(deserialize<PrimitiveKind>(text));
  return deserialize<OperatorKind>(text);
}

PipelineOptions pipeline_options(const Config& c) {
  PipelineOptions o;
  if (!c.cost_model.empty()) o.cost = cost_config_from_json(Json::parse(read_file(c.cost_model)));
  if (!c.profile.empty()) o.profile = profile_from_json(Json::parse(read_file(c.profile)));
  o.rewrite_depth = c.rewrite_depth;
  o.max_kernel_primitives = c.max_kernel_primitives;
  o.partition_max = c.partition_max;
  o.seed = c.seed;
  if (c.solver == "exhaustive") o.solve.kind = SolverKind::exhaustive;
  else if (c.solver != "bnb") throw Error("unknown solver '" + c.solver + "'");
  o.solve.timeout_s = c.timeout_s;
  return o;
}

TensorMap load_inputs(const Config& c, const ComputationGraph& g) {
  if (!c.inputs.empty()) return tensors_from_json(Json::parse(read_file(c.inputs)));
  std::mt19937_64 rng(c.seed);
  return random_inputs(g, rng);
}

Json values_json(const NodeValues& v) {
  Json j = Json::object();
  for (auto& [id, t] : v) j[std::to_string(id)] = tensor_to_json(t);
  return j;
}

void put(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") std::cout << text;
  else write_file(path, text);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_summary(const PipelineResult& r, const VerifyReport& v) {
  std::cout << "primitives    " << r.optimized_graph.nodes.size() << "\n"
            << "parts         " << r.parts.size() << "\n"
            << "states        " << r.states() << "\n"
            << "candidates    " << r.candidates() << "\n"
            << "kernels       " << r.schedule.kernels.size() << "\n"
            << "cost_us       " << fmt("%.6f", to_microseconds(r.total_ps)) << "\n"
            << "greedy_us     " << fmt("%.6f", to_microseconds(r.greedy_ps)) << "\n"
            << "greedy_ratio  " << fmt("%.4f", static_cast<double>(r.greedy_ps) / static_cast<double>(r.total_ps)) << "\n"
            << "optimal       " << (r.optimal ? "true" : "false") << "\n"
            << "cuts          " << r.cuts_applied << "\n"
            << "verify        " << (v.ok ? "pass" : "FAIL") << " (" << v.probes << " probes, max diff "
            << fmt("%.3g", v.max_abs_diff) << ")\n";
}

int run_optimize(const Config& c, bool schedule_only) {
  auto r = run_pipeline(load_graph(c.input), pipeline_options(c));
  auto v = verify_schedule(r.schedule, r.primitive_graph, 10, c.seed);
  if (!schedule_only) put(c.emit.empty() ? "strategy.json" : c.emit, pipeline_strategy_json(r).dump(2) + "\n");
  put(c.output.empty() ? "schedule.json" : c.output, schedule_to_json(r.schedule).dump(2) + "\n");
  if (!c.dot.empty()) put(c.dot, emit_dot(r.schedule));
  print_summary(r, v);
  if (!v.ok) throw Error("optimized schedule disagrees with the reference interpreter");
  return r.optimal ? 0 : 3;
}

int run_identify(const Config& c) {
  auto g = infer_shapes(to_primitive_graph(load_graph(c.input)));
  auto id = identify(g, {100000, c.max_kernel_primitives, 6});
  std::cout << "primitives        " << id.dag.size() << "\n"
            << "states            " << id.states.size() << "\n"
            << "convex subgraphs  " << id.convex_sets.size() << "\n"
            << "pruned            " << id.pruned_sets << "\n"
            << "candidates        " << id.candidates.size() << "\n";
  if (!c.dump.empty()) {
    Json j;
    j["states"] = id.states.size();
    j["convex_subgraphs"] = Json::array();
    for (auto& s : id.convex_sets) j["convex_subgraphs"].push_back(id.dag.to_ids(s));
    j["candidates"] = Json::array();
    for (std::size_t i = 0; i < id.candidates.size(); ++i) {
      auto& k = id.candidates[i];
      j["candidates"].push_back(Json{{"id", i},
                                     {"members", id.dag.to_ids(k.members)},
                                     {"inputs", id.dag.to_ids(k.inputs)},
                                     {"graph_inputs", k.graph_inputs},
                                     {"outputs", id.dag.to_ids(k.outputs)}});
    }
    put(c.dump, j.dump(2) + "\n");
  }
  return 0;
}

int run_rewrite(const Config& c) {
  auto g = infer_shapes(to_primitive_graph(load_graph(c.input)));
  auto res = search(g, builtin_rewrite_rules(), {c.rewrite_depth, 32, 20, c.seed});
  std::cout << "variants  " << res.graphs.size() << "\n"
            << "rejected  " << res.rejected << "\n";
  Json j = Json::array();
  for (auto& v : res.graphs) j.push_back(to_json(v));
  if (!c.output.empty()) put(c.output, j.dump(2) + "\n");
  return 0;
}

int run_compare(const Config& c) {
  auto r = run_pipeline(load_graph(c.input), pipeline_options(c));
  std::cout << "greedy_us  " << fmt("%.6f", to_microseconds(r.greedy_ps)) << "\n"
            << "blp_us     " << fmt("%.6f", to_microseconds(r.total_ps)) << "\n"
            << "ratio      " << fmt("%.4f", static_cast<double>(r.greedy_ps) / static_cast<double>(r.total_ps)) << "\n";
  return r.optimal ? 0 : 3;
}

int run_validate(const Config& c) {
  auto text = read_file(c.input);
  ValidationReport rep;
  if (graph_level(text) == "primitive") rep = validate(deserialize<PrimitiveKind>(text));
  else rep = validate(deserialize<OperatorKind>(text));
  std::cout << (rep.ok() ? "ok\n" : rep.to_string());
  return rep.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"korch: operator fission and optimal kernel orchestration"};
  app.require_subcommand(1);
  Config c;

  auto common = [&](CLI::App* s, const char* what) {
    s->add_option("input", c.input, what)->required()->check(CLI::ExistingFile);
    s->add_option("--seed", c.seed, "seed for every random probe");
    s->add_option("-o,--output", c.output, "output file");
  };
  auto tuning = [&](CLI::App* s) {
    s->add_option("--cost-model", c.cost_model, "cost model config JSON")->check(CLI::ExistingFile);
    s->add_option("--profile", c.profile, "profile table JSON")->check(CLI::ExistingFile);
    s->add_option("--rewrite-depth", c.rewrite_depth, "rewrite search depth")->check(CLI::NonNegativeNumber);
    s->add_option("--max-kernel-primitives", c.max_kernel_primitives)->check(CLI::PositiveNumber);
    s->add_option("--partition-max", c.partition_max, "largest subgraph handed to the solver")->check(CLI::PositiveNumber);
    s->add_option("--solver", c.solver, "exhaustive|bnb")->check(CLI::IsMember({"exhaustive", "bnb"}));
    s->add_option("--timeout-s", c.timeout_s, "solver budget in seconds")->check(CLI::PositiveNumber);
    s->add_option("--dot", c.dot, "write the schedule as DOT");
    s->add_option("--threads", c.threads, "worker threads (the solver is sequential)")->check(CLI::PositiveNumber);
  };

  auto* eval = app.add_subcommand("eval", "evaluate a graph with the reference interpreter");
  common(eval, "graph JSON");
  eval->add_option("--inputs", c.inputs, "input tensors JSON")->check(CLI::ExistingFile);

  auto* fission = app.add_subcommand("fission", "lower operators to primitives");
  common(fission, "operator graph JSON");
  fission->add_option("--dot", c.dot, "write the primitive graph as DOT");

  auto* rewrite = app.add_subcommand("rewrite", "enumerate equivalent primitive graphs");
  common(rewrite, "graph JSON");
  rewrite->add_option("--rewrite-depth", c.rewrite_depth)->check(CLI::NonNegativeNumber);

  auto* ident = app.add_subcommand("identify", "enumerate states and candidate kernels");
  common(ident, "graph JSON");
  ident->add_option("--max-kernel-primitives", c.max_kernel_primitives)->check(CLI::PositiveNumber);
  ident->add_option("--dump", c.dump, "write candidates JSON");

  auto* opt = app.add_subcommand("optimize", "run the whole pipeline and emit strategy and schedule");
  common(opt, "graph JSON");
  tuning(opt);
  opt->add_option("--emit", c.emit, "strategy JSON path (default strategy.json)");

  auto* sched = app.add_subcommand("schedule", "run the whole pipeline and emit the schedule");
  common(sched, "graph JSON");
  tuning(sched);

  auto* run = app.add_subcommand("run", "execute a schedule");
  common(run, "schedule JSON");
  run->add_option("--inputs", c.inputs, "input tensors JSON")->check(CLI::ExistingFile);

  auto* cmp = app.add_subcommand("compare", "greedy fusion against the optimal strategy");
  common(cmp, "graph JSON");
  tuning(cmp);

  auto* val = app.add_subcommand("validate", "check a graph document");
  common(val, "graph JSON");

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (stage == "eval") {
      auto g = load_graph(c.input);
      put(c.output, values_json(eval_graph(g, load_inputs(c, g))).dump(2) + "\n");
      return 0;
    }
    if (stage == "fission") {
      auto g = infer_shapes(to_primitive_graph(load_graph(c.input)));
      put(c.output, serialize(g));
      if (!c.dot.empty()) put(c.dot, emit_dot(g));
      return 0;
    }
    if (stage == "rewrite") return run_rewrite(c);
    if (stage == "identify") return run_identify(c);
    if (stage == "optimize") return run_optimize(c, false);
    if (stage == "schedule") return run_optimize(c, true);
    if (stage == "run") {
      auto s = schedule_from_json(Json::parse(read_file(c.input)));
      TensorMap in;
      if (!c.inputs.empty()) in = tensors_from_json(Json::parse(read_file(c.inputs)));
      else {
        std::mt19937_64 rng(c.seed);
        in = random_inputs(s.graph, rng);
      }
      put(c.output, values_json(execute_schedule(s, in)).dump(2) + "\n");
      return 0;
    }
    if (stage == "compare") return run_compare(c);
    if (stage == "validate") return run_validate(c);
  } catch (const Infeasible& e) {
    std::cerr << stage << ": infeasible: " << e.what() << "\n";
    return 2;
  } catch (const Timeout& e) {
    std::cerr << stage << ": timeout: " << e.what() << "\n";
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << stage << ": " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 1;
}
