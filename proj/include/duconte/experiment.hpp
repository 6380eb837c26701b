#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "duconte/checkpoint.hpp"
#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/model.hpp"
#include "duconte/synthetic.hpp"
#include "duconte/train.hpp"

namespace duconte {

// ---------------------------------------------------------------------------
// Experiment configuration: one JSON file, strict fields, documented defaults
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string task = "node_classification";  // or "link_prediction"
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string graph_file;  // empty: generate from `synthetic`
  SyntheticConfig synthetic;
  std::array<double, 3> split_fractions = {0.6, 0.2, 0.2};
  ModelConfig model;
  TrainConfig train;  // per-run seed comes from `seeds`, not from train.seed
  int bayes_mc_samples = 200000;

  void validate() const {
    check_arg(task == "node_classification" || task == "link_prediction",
              "config: task must be node_classification or link_prediction, got '", task, "'");
    check_arg(!seeds.empty(), "config: seeds must be non-empty");
    if (graph_file.empty()) synthetic.validate();
    model.validate();
    train.validate();
    check_arg(bayes_mc_samples >= 100000, "config: bayes_mc_samples must be >= 1e5");
  }
};

namespace detail {

inline void check_known_keys(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                             const std::string& context) {
  check_arg(obj.is_object(), "config: ", context, " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const auto& k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    check_arg(known, "config: unknown field '", it.key(), "' in ", context);
  }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::check_known_keys(
      j, {"task", "seeds", "graph_file", "synthetic", "split", "model", "train", "bayes_mc_samples"},
      "top level");
  detail::read_field(j, "task", cfg.task);
  detail::read_field(j, "seeds", cfg.seeds);
  detail::read_field(j, "graph_file", cfg.graph_file);
  detail::read_field(j, "bayes_mc_samples", cfg.bayes_mc_samples);

  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    detail::check_known_keys(s,
                             {"num_nodes", "num_classes", "homophily", "mean_degree", "vocab_size",
                              "class_pool_size", "p_self", "p_nbr", "tokens_per_node", "seed"},
                             "synthetic");
    detail::read_field(s, "num_nodes", cfg.synthetic.num_nodes);
    detail::read_field(s, "num_classes", cfg.synthetic.num_classes);
    detail::read_field(s, "homophily", cfg.synthetic.homophily);
    detail::read_field(s, "mean_degree", cfg.synthetic.mean_degree);
    detail::read_field(s, "vocab_size", cfg.synthetic.vocab_size);
    detail::read_field(s, "class_pool_size", cfg.synthetic.class_pool_size);
    detail::read_field(s, "p_self", cfg.synthetic.p_self);
    detail::read_field(s, "p_nbr", cfg.synthetic.p_nbr);
    detail::read_field(s, "tokens_per_node", cfg.synthetic.tokens_per_node);
    detail::read_field(s, "seed", cfg.synthetic.seed);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::check_known_keys(s, {"train", "val", "test"}, "split");
    detail::read_field(s, "train", cfg.split_fractions[0]);
    detail::read_field(s, "val", cfg.split_fractions[1]);
    detail::read_field(s, "test", cfg.split_fractions[2]);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_known_keys(m,
                             {"d_model", "d_ff", "word_layers", "node_layers", "heads",
                              "context_limit", "hops", "neighbor_cap", "alpha", "beta", "variant",
                              "norm_direction"},
                             "model");
    detail::read_field(m, "d_model", cfg.model.d_model);
    detail::read_field(m, "d_ff", cfg.model.d_ff);
    detail::read_field(m, "word_layers", cfg.model.word_layers);
    detail::read_field(m, "node_layers", cfg.model.node_layers);
    detail::read_field(m, "heads", cfg.model.heads);
    detail::read_field(m, "context_limit", cfg.model.context_limit);
    detail::read_field(m, "hops", cfg.model.hops);
    detail::read_field(m, "neighbor_cap", cfg.model.neighbor_cap);
    detail::read_field(m, "alpha", cfg.model.alpha);
    detail::read_field(m, "beta", cfg.model.beta);
    if (m.contains("variant")) cfg.model.variant = variant_from_string(m.at("variant").get<std::string>());
    if (m.contains("norm_direction")) {
      cfg.model.norm_direction = norm_direction_from_string(m.at("norm_direction").get<std::string>());
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_known_keys(
        t, {"stage1_epochs", "stage2_epochs", "lr_stage1", "lr_stage2", "batch_size", "gnn"},
        "train");
    detail::read_field(t, "stage1_epochs", cfg.train.stage1_epochs);
    detail::read_field(t, "stage2_epochs", cfg.train.stage2_epochs);
    detail::read_field(t, "lr_stage1", cfg.train.lr_stage1);
    detail::read_field(t, "lr_stage2", cfg.train.lr_stage2);
    detail::read_field(t, "batch_size", cfg.train.batch_size);
    if (t.contains("gnn")) {
      const auto& g = t.at("gnn");
      detail::check_known_keys(g, {"hidden", "lr", "max_epochs", "patience"}, "train.gnn");
      detail::read_field(g, "hidden", cfg.train.gnn.hidden);
      detail::read_field(g, "lr", cfg.train.gnn.lr);
      detail::read_field(g, "max_epochs", cfg.train.gnn.max_epochs);
      detail::read_field(g, "patience", cfg.train.gnn.patience);
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig experiment_config_from_file(const std::string& path) {
  std::ifstream in(path);
  check_arg(in.good(), "config: cannot open '", path, "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    check_arg(false, "config: invalid JSON in '", path, "': ", e.what());
  }
  return experiment_config_from_json(j);
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg) {
  return nlohmann::json{
      {"task", cfg.task},
      {"seeds", cfg.seeds},
      {"graph_file", cfg.graph_file},
      {"synthetic",
       {{"num_nodes", cfg.synthetic.num_nodes},
        {"num_classes", cfg.synthetic.num_classes},
        {"homophily", cfg.synthetic.homophily},
        {"mean_degree", cfg.synthetic.mean_degree},
        {"vocab_size", cfg.synthetic.vocab_size},
        {"class_pool_size", cfg.synthetic.class_pool_size},
        {"p_self", cfg.synthetic.p_self},
        {"p_nbr", cfg.synthetic.p_nbr},
        {"tokens_per_node", cfg.synthetic.tokens_per_node},
        {"seed", cfg.synthetic.seed}}},
      {"split",
       {{"train", cfg.split_fractions[0]},
        {"val", cfg.split_fractions[1]},
        {"test", cfg.split_fractions[2]}}},
      {"model",
       {{"d_model", cfg.model.d_model},
        {"d_ff", cfg.model.d_ff},
        {"word_layers", cfg.model.word_layers},
        {"node_layers", cfg.model.node_layers},
        {"heads", cfg.model.heads},
        {"context_limit", cfg.model.context_limit},
        {"hops", cfg.model.hops},
        {"neighbor_cap", cfg.model.neighbor_cap},
        {"alpha", cfg.model.alpha},
        {"beta", cfg.model.beta},
        {"variant", to_string(cfg.model.variant)},
        {"norm_direction", to_string(cfg.model.norm_direction)}}},
      {"train",
       {{"stage1_epochs", cfg.train.stage1_epochs},
        {"stage2_epochs", cfg.train.stage2_epochs},
        {"lr_stage1", cfg.train.lr_stage1},
        {"lr_stage2", cfg.train.lr_stage2},
        {"batch_size", cfg.train.batch_size},
        {"gnn",
         {{"hidden", cfg.train.gnn.hidden},
          {"lr", cfg.train.gnn.lr},
          {"max_epochs", cfg.train.gnn.max_epochs},
          {"patience", cfg.train.gnn.patience}}}}},
      {"bayes_mc_samples", cfg.bayes_mc_samples}};
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

inline void save_embeddings_jsonl(const Tensor2& embeddings, std::ostream& out) {
  for (int v = 0; v < embeddings.rows(); ++v) {
    nlohmann::json line = {{"id", v}, {"vec", nlohmann::json::array()}};
    for (int c = 0; c < embeddings.cols(); ++c) line["vec"].push_back(embeddings(v, c));
    out << line.dump() << "\n";
  }
}

inline void save_embeddings_jsonl(const Tensor2& embeddings, const std::string& path) {
  std::ofstream out(path);
  check_state(out.good(), "embeddings: cannot open '", path, "' for writing");
  save_embeddings_jsonl(embeddings, out);
}

inline Tensor2 load_embeddings_jsonl(std::istream& in) {
  std::vector<std::pair<int, std::vector<double>>> rows;
  std::string line;
  int line_no = 0;
  int dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      check_arg(false, "embeddings line ", line_no, ": invalid JSON (", e.what(), ")");
    }
    check_arg(j.contains("id") && j.contains("vec"), "embeddings line ", line_no,
              ": expected an object with id and vec");
    auto vec = j.at("vec").get<std::vector<double>>();
    if (dim < 0) dim = static_cast<int>(vec.size());
    check_arg(static_cast<int>(vec.size()) == dim, "embeddings line ", line_no,
              ": inconsistent vector length");
    rows.emplace_back(j.at("id").get<int>(), std::move(vec));
  }
  check_arg(!rows.empty(), "embeddings: empty file");
  Tensor2 out(static_cast<int>(rows.size()), dim);
  std::vector<bool> seen(rows.size(), false);
  for (auto& [id, vec] : rows) {
    check_arg(id >= 0 && id < static_cast<int>(rows.size()), "embeddings: id ", id, " out of range");
    check_arg(!seen[id], "embeddings: duplicate id ", id);
    seen[id] = true;
    for (int c = 0; c < dim; ++c) out(id, c) = vec[c];
  }
  return out;
}

inline Tensor2 load_embeddings_jsonl(const std::string& path) {
  std::ifstream in(path);
  check_arg(in.good(), "embeddings: cannot open '", path, "'");
  return load_embeddings_jsonl(in);
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string traces_dir;              // write per-seed CSV traces when set
  std::string save_model_path;         // write per-seed checkpoints when set
  std::string export_embeddings_path;  // write per-seed embedding JSONL when set
  std::ostream* progress = nullptr;    // optional progress stream
};

namespace detail {

inline void progress(const RunOptions& opt, const std::string& line) {
  if (opt.progress) (*opt.progress) << line << "\n";
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= xs.size();  // population std; reproducible from the per-seed metrics
  return {mean, std::sqrt(var)};
}

inline nlohmann::json trace_summary(const TrainTrace& trace) {
  return nlohmann::json{{"epochs", trace.epochs()},
                        {"initial_loss", trace.train_loss.front()},
                        {"final_loss", trace.train_loss.back()},
                        {"final_val_metric", trace.val_metric.back()}};
}

inline void maybe_write_trace(const RunOptions& opt, const std::string& tag, std::uint64_t seed,
                              const TrainTrace& trace) {
  if (opt.traces_dir.empty()) return;
  const std::string path =
      opt.traces_dir + "/seed" + std::to_string(seed) + "_" + tag + ".csv";
  std::ofstream out(path);
  check_state(out.good(), "traces: cannot open '", path, "' for writing");
  out << trace.to_csv();
}

inline TextAttributedGraph obtain_graph(const ExperimentConfig& cfg) {
  if (!cfg.graph_file.empty()) return load_graph_jsonl(cfg.graph_file);
  return gen_synthetic_tag(cfg.synthetic);
}

}  // namespace detail

/// Full pipeline for one configuration: preprocessing, two-stage encoder
/// training, embedding export, downstream GraphSAGE, evaluation. One run per
/// seed; the report carries per-run numbers plus mean and population std.
inline nlohmann::json run_experiment(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  detail::Stopwatch total_timer;
  TextAttributedGraph graph = detail::obtain_graph(cfg);

  nlohmann::json report;
  report["task"] = cfg.task;
  report["config"] = experiment_config_to_json(cfg);
  report["graph"] = {{"num_nodes", graph.num_nodes()},
                     {"num_edges", graph.num_edges()},
                     {"num_classes", graph.num_classes()},
                     {"homophily", graph.num_edges() > 0 ? homophily_ratio(graph) : 0.0}};

  const bool is_link = cfg.task == "link_prediction";
  if (!is_link && cfg.graph_file.empty()) {
    report["bayes_self_only_accuracy"] =
        bayes_self_only_accuracy(cfg.synthetic, cfg.bayes_mc_samples);
  }

  std::vector<double> metrics;
  report["runs"] = nlohmann::json::array();

  for (std::uint64_t seed : cfg.seeds) {
    detail::Stopwatch run_timer;
    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = seed;
    DuconteModel model = DuconteModel::init(cfg.model, graph.vocab_size(), graph.num_classes(),
                                            seeds::model_init(seed));
    nlohmann::json run;
    run["seed"] = seed;

    if (!is_link) {
      NodeSplit split = split_nodes(graph, cfg.split_fractions, seed);
      check_arg(!split.train.empty() && !split.test.empty(),
                "experiment: split produced an empty train or test set");
      TfidfScorer scorer;
      scorer.fit(graph, split.train);

      detail::progress(opt, "[seed " + std::to_string(seed) + "] stage 1");
      TrainTrace t1 = train_stage1(model, graph, split, scorer, train_cfg);
      detail::progress(opt, "[seed " + std::to_string(seed) + "] stage 2");
      TrainTrace t2 = train_stage2(model, graph, split, scorer, train_cfg);
      detail::progress(opt, "[seed " + std::to_string(seed) + "] embeddings + GNN");
      Tensor2 embeddings = export_embeddings(model, graph, scorer, seed);
      GnnResult gnn = train_gnn(embeddings, graph, split, train_cfg.gnn, seed);

      auto pred = gnn_predictions(gnn, embeddings, graph);
      std::vector<int> test_pred, test_truth;
      for (int v : split.test) {
        test_pred.push_back(pred[v]);
        test_truth.push_back(graph.label(v));
      }
      const double acc = evaluate_accuracy(test_pred, test_truth);
      metrics.push_back(acc);

      run["stage1"] = detail::trace_summary(t1);
      run["stage2"] = detail::trace_summary(t2);
      run["gnn"] = {{"epochs", gnn.trace.epochs()},
                    {"best_epoch", gnn.best_epoch},
                    {"best_val_accuracy", gnn.best_val}};
      run["test_accuracy"] = acc;
      detail::maybe_write_trace(opt, "stage1", seed, t1);
      detail::maybe_write_trace(opt, "stage2", seed, t2);
      detail::maybe_write_trace(opt, "gnn", seed, gnn.trace);
      if (!opt.export_embeddings_path.empty()) {
        save_embeddings_jsonl(embeddings,
                              opt.export_embeddings_path + ".seed" + std::to_string(seed));
      }
    } else {
      EdgeSplit edges = split_edges(graph, cfg.split_fractions, seed);
      check_arg(!edges.train.empty() && !edges.test.empty(),
                "experiment: edge split produced an empty train or test set");
      TextAttributedGraph message_graph = restrict_to_edges(graph, edges.train);
      TfidfScorer scorer;
      std::vector<int> all_nodes(graph.num_nodes());
      std::iota(all_nodes.begin(), all_nodes.end(), 0);
      scorer.fit(graph, all_nodes);

      detail::progress(opt, "[seed " + std::to_string(seed) + "] link stage 1");
      TrainTrace t1 = train_link_stage(model, message_graph, graph, edges, scorer, train_cfg, 1);
      detail::progress(opt, "[seed " + std::to_string(seed) + "] link stage 2");
      TrainTrace t2 = train_link_stage(model, message_graph, graph, edges, scorer, train_cfg, 2);

      const double auc = link_auc(model, message_graph, graph, scorer, edges.test, 2, seed,
                                  derive_seed(seed, 0x7465737401ull));
      metrics.push_back(auc);
      run["stage1"] = detail::trace_summary(t1);
      run["stage2"] = detail::trace_summary(t2);
      run["test_auc"] = auc;
      detail::maybe_write_trace(opt, "link_stage1", seed, t1);
      detail::maybe_write_trace(opt, "link_stage2", seed, t2);
    }

    run["wall_clock_seconds"] = run_timer.seconds();
    if (!opt.save_model_path.empty()) {
      save_checkpoint(model.store, opt.save_model_path + ".seed" + std::to_string(seed));
    }
    report["runs"].push_back(run);
  }

  auto [mean, std] = detail::mean_std(metrics);
  report["metric_name"] = is_link ? "auc" : "accuracy";
  report["metric_mean"] = mean;
  report["metric_std"] = std;
  report["wall_clock_seconds"] = total_timer.seconds();
  return report;
}

/// Runs every variant on identical data and seeds and emits one sub-report
/// per variant plus a compact comparison table.
inline nlohmann::json run_ablations(const ExperimentConfig& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  detail::Stopwatch total_timer;
  nlohmann::json report;
  report["task"] = cfg.task;
  report["config"] = experiment_config_to_json(cfg);
  report["variants"] = nlohmann::json::object();
  report["comparison"] = nlohmann::json::array();

  for (const auto& [variant, name] : variant_names()) {
    ExperimentConfig vcfg = cfg;
    vcfg.model.variant = variant;
    detail::progress(opt, std::string("=== variant ") + name + " ===");
    nlohmann::json sub = run_experiment(vcfg, opt);
    report["comparison"].push_back({{"variant", name},
                                    {"metric_mean", sub["metric_mean"]},
                                    {"metric_std", sub["metric_std"]}});
    report["variants"][name] = std::move(sub);
  }
  report["wall_clock_seconds"] = total_timer.seconds();
  return report;
}

/// Downstream-only evaluation of previously exported embeddings: trains the
/// GraphSAGE head per seed and reports test accuracy.
inline nlohmann::json evaluate_embeddings(const ExperimentConfig& cfg, const Tensor2& embeddings) {
  cfg.validate();
  check_arg(cfg.task == "node_classification", "eval: embeddings evaluation is a node-classification surface");
  detail::Stopwatch total_timer;
  TextAttributedGraph graph = detail::obtain_graph(cfg);
  check_arg(embeddings.rows() == graph.num_nodes(), "eval: embeddings rows (", embeddings.rows(),
            ") != graph nodes (", graph.num_nodes(), ")");

  nlohmann::json report;
  report["task"] = "embedding_evaluation";
  report["config"] = experiment_config_to_json(cfg);
  report["runs"] = nlohmann::json::array();
  std::vector<double> metrics;
  for (std::uint64_t seed : cfg.seeds) {
    NodeSplit split = split_nodes(graph, cfg.split_fractions, seed);
    GnnResult gnn = train_gnn(embeddings, graph, split, cfg.train.gnn, seed);
    auto pred = gnn_predictions(gnn, embeddings, graph);
    std::vector<int> test_pred, test_truth;
    for (int v : split.test) {
      test_pred.push_back(pred[v]);
      test_truth.push_back(graph.label(v));
    }
    const double acc = evaluate_accuracy(test_pred, test_truth);
    metrics.push_back(acc);
    report["runs"].push_back({{"seed", seed},
                              {"gnn", {{"epochs", gnn.trace.epochs()}, {"best_epoch", gnn.best_epoch}}},
                              {"test_accuracy", acc}});
  }
  auto [mean, std] = detail::mean_std(metrics);
  report["metric_name"] = "accuracy";
  report["metric_mean"] = mean;
  report["metric_std"] = std;
  report["wall_clock_seconds"] = total_timer.seconds();
  return report;
}

}  // namespace duconte
