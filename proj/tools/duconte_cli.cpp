// Command-line driver for the dual-granularity topology-constrained text
// encoder pipeline: synthetic graph generation, homophily measurement,
// training, ablations, embedding evaluation, gradient checks, mask dumps,
// and the brute-force oracle suite.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure,
// 3 oracle or gradient-check failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "duconte/experiment.hpp"
#include "duconte/oracles.hpp"

namespace {

using namespace duconte;

void write_output(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path);
  check_state(out.good(), "cannot open '", out_path, "' for writing");
  out << text;
  check_state(out.good(), "write to '", out_path, "' failed");
}

ExperimentConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return experiment_config_from_json(nlohmann::json::object());
  return experiment_config_from_file(path);
}

int cmd_gen(const std::string& config_path, const std::string& out_path, long long seed_override) {
  ExperimentConfig cfg = load_config_or_default(config_path);
  if (seed_override >= 0) cfg.synthetic.seed = static_cast<std::uint64_t>(seed_override);
  TextAttributedGraph graph = gen_synthetic_tag(cfg.synthetic);
  if (out_path.empty()) {
    save_graph_jsonl(graph, std::cout);
  } else {
    save_graph_jsonl(graph, out_path);
  }
  return 0;
}

int cmd_homophily(const std::string& graph_path) {
  TextAttributedGraph graph = load_graph_jsonl(graph_path);
  std::printf("%.6f\n", homophily_ratio(graph));
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_path, const RunOptions& opt) {
  ExperimentConfig cfg = load_config_or_default(config_path);
  nlohmann::json report = run_experiment(cfg, opt);
  write_output(report.dump(2) + "\n", out_path);
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_path, const RunOptions& opt) {
  ExperimentConfig cfg = load_config_or_default(config_path);
  nlohmann::json report = run_ablations(cfg, opt);
  write_output(report.dump(2) + "\n", out_path);
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& embeddings_path,
             const std::string& out_path) {
  ExperimentConfig cfg = load_config_or_default(config_path);
  Tensor2 embeddings = load_embeddings_jsonl(embeddings_path);
  nlohmann::json report = evaluate_embeddings(cfg, embeddings);
  write_output(report.dump(2) + "\n", out_path);
  return 0;
}

int cmd_gradcheck(const std::string& out_path) {
  const double threshold = 1e-4;
  auto rep1 = oracles::gradcheck_full_model(1);
  auto rep2 = oracles::gradcheck_full_model(2);
  const bool pass = rep1.max_rel_error <= threshold && rep2.max_rel_error <= threshold;
  nlohmann::json report = {
      {"threshold", threshold},
      {"pass", pass},
      {"stage1",
       {{"max_rel_error", rep1.max_rel_error},
        {"checked_entries", rep1.checked_entries},
        {"worst_param", rep1.worst_param}}},
      {"stage2",
       {{"max_rel_error", rep2.max_rel_error},
        {"checked_entries", rep2.checked_entries},
        {"worst_param", rep2.worst_param}}}};
  write_output(report.dump(2) + "\n", out_path);
  return pass ? 0 : 3;
}

int cmd_mask_dump(const std::string& graph_path, int node, const std::string& granularity,
                  const std::string& config_path, bool dump_sequence, const std::string& out_path) {
  ExperimentConfig cfg = load_config_or_default(config_path);
  TextAttributedGraph graph = load_graph_jsonl(graph_path);
  check_arg(node >= 0 && node < graph.num_nodes(), "mask-dump: node ", node,
            " out of range for graph with ", graph.num_nodes(), " nodes");

  const std::uint64_t run_seed = cfg.seeds.front();
  NodeSplit split = split_nodes(graph, cfg.split_fractions, run_seed);
  check_arg(!split.train.empty(), "mask-dump: split produced an empty train set");
  TfidfScorer scorer;
  scorer.fit(graph, split.train);

  Neighborhood nbh = sample_neighborhood(graph, node, cfg.model.hops, cfg.model.neighbor_cap,
                                         seeds::neighborhood(run_seed, node));
  const int budget = token_budget(nbh.group_size(), cfg.model.context_limit);
  AssembledSequence seq = assemble_sequence(nbh, graph, budget, scorer);

  if (dump_sequence) {
    write_output(sequence_to_json(seq).dump(2) + "\n", out_path);
    return 0;
  }
  MaskMatrix mask;
  if (granularity == "word") {
    mask = build_word_mask(seq, graph);
  } else if (granularity == "node") {
    mask = build_node_mask(nbh, graph);
  } else {
    check_arg(false, "mask-dump: granularity must be 'word' or 'node', got '", granularity, "'");
  }
  write_output(format_mask(mask), out_path);
  return 0;
}

int cmd_oracle(std::uint64_t seed, bool inject_mask_fault) {
  oracles::OracleOptions opt;
  opt.seed = seed;
  opt.inject_mask_fault = inject_mask_fault;
  auto results = oracles::run_oracle_suite(opt);
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
  }
  const bool ok = oracles::all_passed(results);
  std::cout << (ok ? "all oracles passed" : "oracle failures detected") << "\n";
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "duconte: dual-granularity text-attributed-graph encoder with "
      "topology-constrained attention"};
  app.require_subcommand(1);

  std::string config_path, out_path, graph_path, embeddings_path, granularity = "word";
  long long gen_seed = -1;
  int node_id = 0;
  bool dump_sequence = false;
  bool progress = false;
  bool inject_mask_fault = false;
  std::uint64_t oracle_seed = 0;
  RunOptions run_opt;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic graph file (JSON Lines)");
  gen->add_option("--config", config_path, "Experiment config JSON (synthetic section is used)");
  gen->add_option("--out", out_path, "Output path (stdout when omitted)");
  gen->add_option("--seed", gen_seed, "Override the generator seed");

  auto* homophily = app.add_subcommand("homophily", "Print the label homophily ratio of a graph");
  homophily->add_option("--graph", graph_path, "Graph file (JSON Lines)")->required();

  auto* train = app.add_subcommand("train", "Run the full pipeline and report metrics");
  train->add_option("--config", config_path, "Experiment config JSON");
  train->add_option("--out", out_path, "Report path (stdout when omitted)");
  train->add_option("--traces", run_opt.traces_dir, "Directory for per-epoch CSV traces");
  train->add_option("--save-model", run_opt.save_model_path,
                    "Checkpoint path prefix (per-seed suffix appended)");
  train->add_option("--export-embeddings", run_opt.export_embeddings_path,
                    "Embedding JSONL path prefix (per-seed suffix appended)");
  train->add_flag("--progress", progress, "Print progress lines to stderr");

  auto* ablate = app.add_subcommand("ablate", "Run every model variant on identical data");
  ablate->add_option("--config", config_path, "Experiment config JSON");
  ablate->add_option("--out", out_path, "Report path (stdout when omitted)");
  ablate->add_flag("--progress", progress, "Print progress lines to stderr");

  auto* eval = app.add_subcommand("eval", "Train the downstream GNN on saved embeddings");
  eval->add_option("--config", config_path, "Experiment config JSON");
  eval->add_option("--embeddings", embeddings_path, "Embedding JSONL file")->required();
  eval->add_option("--out", out_path, "Report path (stdout when omitted)");

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Verify analytic gradients of the full model against central differences");
  gradcheck->add_option("--out", out_path, "Report path (stdout when omitted)");

  auto* mask_dump = app.add_subcommand("mask-dump", "Print the attention mask for one target node");
  mask_dump->add_option("--graph", graph_path, "Graph file (JSON Lines)")->required();
  mask_dump->add_option("--node", node_id, "Target node id")->required();
  mask_dump->add_option("--granularity", granularity, "word or node (default word)");
  mask_dump->add_option("--config", config_path, "Experiment config JSON (preprocessing settings)");
  mask_dump->add_flag("--sequence", dump_sequence,
                      "Dump the assembled sequence as JSON instead of the mask");
  mask_dump->add_option("--out", out_path, "Output path (stdout when omitted)");

  auto* oracle = app.add_subcommand("oracle", "Run the brute-force verification suite");
  oracle->add_option("--seed", oracle_seed, "Suite seed");
  oracle->add_flag("--inject-mask-fault", inject_mask_fault,
                   "Deliberately corrupt one mask bit (the suite must then fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (progress) run_opt.progress = &std::cerr;
    if (gen->parsed()) return cmd_gen(config_path, out_path, gen_seed);
    if (homophily->parsed()) return cmd_homophily(graph_path);
    if (train->parsed()) return cmd_train(config_path, out_path, run_opt);
    if (ablate->parsed()) return cmd_ablate(config_path, out_path, run_opt);
    if (eval->parsed()) return cmd_eval(config_path, embeddings_path, out_path);
    if (gradcheck->parsed()) return cmd_gradcheck(out_path);
    if (mask_dump->parsed()) {
      return cmd_mask_dump(graph_path, node_id, granularity, config_path, dump_sequence, out_path);
    }
    if (oracle->parsed()) return cmd_oracle(oracle_seed, inject_mask_fault);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
