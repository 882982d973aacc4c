#pragma once

// Command drivers shared by the binary and the tests: config parsing,
// end-to-end train/evaluate runs, and the ablation grid. Every run is
// reproducible from its config and seed alone.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mbrec/cascade.hpp"
#include "mbrec/checkpoint.hpp"
#include "mbrec/core.hpp"
#include "mbrec/data.hpp"
#include "mbrec/eval.hpp"
#include "mbrec/graph.hpp"
#include "mbrec/report.hpp"
#include "mbrec/train.hpp"

namespace mbrec {

struct RunConfig {
  std::vector<std::string> behaviors;  // chain order; last entry is the target
  std::vector<std::string> inputs;     // one TSV path per behavior
  ModelConfig model;
  TrainConfig train;
  std::vector<Index> ks{10, 20, 50};
  std::string out_dir = ".";

  void validate() const {
    if (behaviors.empty()) throw ConfigError("behavior chain is empty");
    if (inputs.size() != behaviors.size())
      throw ConfigError("behavior file count does not match chain length");
    if (model.layers.size() != behaviors.size())
      throw ConfigError("layer count does not match chain length");
    model.validate();
    train.validate();
    check_ks(ks);
  }
};

inline std::vector<std::string> split_string(const std::string& text, char delim) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == delim) {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  return parts;
}

template <typename T>
inline std::string join(const std::vector<T>& parts, const std::string& delim) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += delim;
    if constexpr (std::is_same_v<T, std::string>)
      out += parts[i];
    else
      out += std::to_string(parts[i]);
  }
  return out;
}

inline Index parse_index(const std::string& text, const std::string& what) {
  try {
    std::size_t consumed = 0;
    const long long v = std::stoll(text, &consumed);
    if (consumed != text.size()) throw std::invalid_argument(text);
    return static_cast<Index>(v);
  } catch (const std::exception&) {
    throw ConfigError(what + " is not an integer: \"" + text + "\"");
  }
}

inline double parse_double(const std::string& text, const std::string& what) {
  try {
    std::size_t consumed = 0;
    const double v = std::stod(text, &consumed);
    if (consumed != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + " is not a number: \"" + text + "\"");
  }
}

inline std::vector<Index> parse_index_list(const std::string& text, const std::string& what) {
  std::vector<Index> out;
  for (const std::string& part : split_string(text, ','))
    out.push_back(parse_index(part, what));
  return out;
}

inline bool parse_on_off(const std::string& text, const std::string& what) {
  if (text == "on") return true;
  if (text == "off") return false;
  throw ConfigError(what + " must be \"on\" or \"off\", got \"" + text + "\"");
}

// Applies one key=value setting (config-file key or flag spelling
// without dashes). Unknown keys are rejected.
inline void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "behaviors") {
    config.behaviors = split_string(value, ',');
  } else if (key == "inputs") {
    config.inputs = split_string(value, ',');
  } else if (key == "layers") {
    config.model.layers = parse_index_list(value, "layers");
  } else if (key == "dim") {
    config.model.embed_dim = parse_index(value, "dim");
  } else if (key == "batch") {
    config.train.batch_size = parse_index(value, "batch");
  } else if (key == "lr") {
    config.train.learning_rate = parse_double(value, "lr");
  } else if (key == "lambda") {
    config.train.lambda = parse_double(value, "lambda");
  } else if (key == "epochs") {
    config.train.max_epochs = parse_index(value, "epochs");
  } else if (key == "patience") {
    config.train.patience = parse_index(value, "patience");
  } else if (key == "seed") {
    config.train.seed = static_cast<std::uint64_t>(parse_index(value, "seed"));
  } else if (key == "agg") {
    config.model.aggregation = aggregation_from_string(value);
  } else if (key == "ft") {
    config.model.transform_enabled = parse_on_off(value, "ft");
  } else if (key == "topk") {
    config.ks = parse_index_list(value, "topk");
  } else if (key == "eval_k") {
    config.train.eval_k = parse_index(value, "eval_k");
  } else if (key == "out") {
    config.out_dir = value;
  } else {
    throw ConfigError("unknown setting: \"" + key + "\"");
  }
}

inline std::string trim(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return s.substr(begin, end - begin);
}

// Flat key=value file; '#' starts a comment line; later keys override
// earlier ones. Flags are applied after the file, so flags win.
inline void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParseError("config file: expected key=value", line_no);
    apply_setting(config, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
}

// Fills unset layer counts: {3,4,3} for a 3-behavior chain, else 3 per
// behavior.
inline void finalize_layers(RunConfig& config) {
  if (!config.model.layers.empty()) return;
  if (config.behaviors.size() == 3) {
    config.model.layers = {3, 4, 3};
  } else {
    config.model.layers.assign(config.behaviors.size(), 3);
  }
}

inline std::string run_label(const RunConfig& config) {
  return "order=" + join(config.behaviors, ">") +
         ";ft=" + (config.model.transform_enabled ? "on" : "off") +
         ";agg=" + to_string(config.model.aggregation) +
         ";layers=" + join(config.model.layers, "|");
}

inline MultiBehaviorDataset load_run_dataset(const RunConfig& config) {
  return load_dataset(config.behaviors, config.inputs);
}

struct PrepareStats {
  Index num_users = 0;
  Index num_items = 0;
  std::vector<std::pair<std::string, Index>> interactions_per_behavior;
  Index train_target = 0;
  Index validation_users = 0;
  Index test_users = 0;
};

inline PrepareStats run_prepare(const RunConfig& config, std::ostream& out) {
  config.validate();
  const MultiBehaviorDataset dataset = load_run_dataset(config);
  const SplitDataset split = leave_one_out_split(dataset);
  PrepareStats stats;
  stats.num_users = dataset.num_users;
  stats.num_items = dataset.num_items;
  for (std::size_t b = 0; b < dataset.sets.size(); ++b)
    stats.interactions_per_behavior.emplace_back(
        dataset.chain[b], static_cast<Index>(dataset.sets[b].size()));
  stats.train_target = static_cast<Index>(split.train.target().size());
  stats.validation_users = static_cast<Index>(split.validation.size());
  stats.test_users = static_cast<Index>(split.test.size());

  out << "users " << stats.num_users << "\n";
  out << "items " << stats.num_items << "\n";
  for (const auto& [behavior, count] : stats.interactions_per_behavior)
    out << "interactions " << behavior << " " << count << "\n";
  out << "train_target " << stats.train_target << "\n";
  out << "validation_users " << stats.validation_users << "\n";
  out << "test_users " << stats.test_users << "\n";
  return stats;
}

struct TrainOutcome {
  MetricsReport test_metrics;
  FitResult fit_result;
  std::string checkpoint_path;
  std::string metrics_path;
  std::string log_path;
};

inline void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path);
  for (const EpochLog& e : log) {
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %lld loss %.6f val %.6f seconds %.3f\n",
                  static_cast<long long>(e.epoch), e.mean_loss, e.val_metric, e.seconds);
    out << line;
  }
}

// Full pipeline: ingest, split, train, quantize the best params to
// float32, evaluate on the test holdout, persist checkpoint + metrics
// + log. Quantizing before evaluation makes the reported metrics
// exactly reproducible from the checkpoint.
inline TrainOutcome run_train(const RunConfig& config) {
  config.validate();
  const MultiBehaviorDataset dataset = load_run_dataset(config);
  const SplitDataset split = leave_one_out_split(dataset);

  FitResult fit_result = fit(split, config.model, config.train);
  quantize_to_f32(fit_result.best_params);

  std::vector<BehaviorGraph> graphs;
  for (const InteractionSet& set : split.train.sets)
    graphs.push_back(BehaviorGraph::build(set, split.train.num_users, split.train.num_items));
  MetricsReport metrics = evaluate_split(fit_result.best_params, config.model, graphs, split,
                                         config.ks, run_label(config));

  std::filesystem::create_directories(config.out_dir);
  TrainOutcome outcome;
  outcome.checkpoint_path = config.out_dir + "/checkpoint.bin";
  outcome.metrics_path = config.out_dir + "/metrics.json";
  outcome.log_path = config.out_dir + "/train_log.txt";
  save_checkpoint(outcome.checkpoint_path, config.model, fit_result.best_params);
  save_metrics_json(outcome.metrics_path, metrics);
  write_train_log(outcome.log_path, fit_result.log);
  outcome.test_metrics = std::move(metrics);
  outcome.fit_result = std::move(fit_result);
  return outcome;
}

// Loads a checkpoint, rebuilds the split from the input files, and
// evaluates on the test holdout.
inline MetricsReport run_evaluate(const RunConfig& config, const std::string& checkpoint_path) {
  auto [model, params] = load_checkpoint(checkpoint_path);
  if (model.num_behaviors() != static_cast<Index>(config.behaviors.size()))
    throw ConfigError("checkpoint chain length does not match --behaviors");
  const MultiBehaviorDataset dataset = load_run_dataset(config);
  const SplitDataset split = leave_one_out_split(dataset);
  if (dataset.num_users != params.num_users() || dataset.num_items != params.num_items())
    throw ConfigError("checkpoint shape does not match dataset");

  std::vector<BehaviorGraph> graphs;
  for (const InteractionSet& set : split.train.sets)
    graphs.push_back(BehaviorGraph::build(set, split.train.num_users, split.train.num_items));
  RunConfig labeled = config;
  labeled.model = model;
  return evaluate_split(params, model, graphs, split, config.ks, run_label(labeled));
}

// Ablation grid: explicit variant lists per dimension; an empty list
// keeps the base setting. Grid size is the product of the non-empty
// list sizes.
struct AblationGrid {
  std::vector<bool> transform_variants;        // ft on/off
  std::vector<Aggregation> aggregation_variants;
  std::vector<std::string> order_variants;     // ">"-separated behavior chains
  std::vector<Index> uniform_layer_variants;   // same depth for every behavior
};

struct AblationVariant {
  std::string label;
  RunConfig config;
  std::string error;  // non-empty if the variant could not be built

  bool valid() const { return error.empty(); }
};

// Reorders or restricts the chain. Per-behavior layer counts follow
// their behavior by name; unknown names poison the variant.
inline void apply_order(RunConfig& config, const std::string& order,
                        const RunConfig& base) {
  const std::vector<std::string> names = split_string(order, '>');
  std::vector<std::string> inputs;
  std::vector<Index> layers;
  for (const std::string& name : names) {
    const auto it = std::find(base.behaviors.begin(), base.behaviors.end(), name);
    if (it == base.behaviors.end()) throw ConfigError("unknown behavior: " + name);
    const auto idx = static_cast<std::size_t>(it - base.behaviors.begin());
    inputs.push_back(base.inputs[idx]);
    layers.push_back(base.model.layers[idx]);
  }
  config.behaviors = names;
  config.inputs = std::move(inputs);
  config.model.layers = std::move(layers);
}

inline std::vector<AblationVariant> expand_grid(const RunConfig& base,
                                                const AblationGrid& grid) {
  const std::vector<std::optional<bool>> fts = grid.transform_variants.empty()
      ? std::vector<std::optional<bool>>{std::nullopt}
      : [&] {
          std::vector<std::optional<bool>> v;
          for (bool b : grid.transform_variants) v.emplace_back(b);
          return v;
        }();
  const std::vector<std::optional<Aggregation>> aggs = grid.aggregation_variants.empty()
      ? std::vector<std::optional<Aggregation>>{std::nullopt}
      : [&] {
          std::vector<std::optional<Aggregation>> v;
          for (Aggregation a : grid.aggregation_variants) v.emplace_back(a);
          return v;
        }();
  const std::vector<std::optional<std::string>> orders = grid.order_variants.empty()
      ? std::vector<std::optional<std::string>>{std::nullopt}
      : [&] {
          std::vector<std::optional<std::string>> v;
          for (const std::string& o : grid.order_variants) v.emplace_back(o);
          return v;
        }();
  const std::vector<std::optional<Index>> depths = grid.uniform_layer_variants.empty()
      ? std::vector<std::optional<Index>>{std::nullopt}
      : [&] {
          std::vector<std::optional<Index>> v;
          for (Index l : grid.uniform_layer_variants) v.emplace_back(l);
          return v;
        }();

  std::vector<AblationVariant> variants;
  for (const auto& order : orders) {
    for (const auto& ft : fts) {
      for (const auto& agg : aggs) {
        for (const auto& depth : depths) {
          AblationVariant variant;
          variant.config = base;
          std::vector<std::string> label_parts;
          try {
            if (order) {
              label_parts.push_back("order=" + *order);
              apply_order(variant.config, *order, base);
            }
            if (ft) {
              label_parts.push_back(std::string("ft=") + (*ft ? "on" : "off"));
              variant.config.model.transform_enabled = *ft;
            }
            if (agg) {
              label_parts.push_back(std::string("agg=") + to_string(*agg));
              variant.config.model.aggregation = *agg;
            }
            if (depth) {
              label_parts.push_back("layers=" + std::to_string(*depth));
              variant.config.model.layers.assign(variant.config.behaviors.size(), *depth);
            }
            variant.label = label_parts.empty() ? "base" : join(label_parts, ";");
            variant.config.validate();
          } catch (const Error& e) {
            variant.label = label_parts.empty() ? "base" : join(label_parts, ";");
            variant.error = e.what();
          }
          variants.push_back(std::move(variant));
        }
      }
    }
  }
  return variants;
}

struct AblationRow {
  std::string label;
  std::optional<MetricsReport> metrics;
  std::string error;
};

// One full train+evaluate per variant, sequentially, all with the base
// seed. A failing variant contributes an error row instead of
// aborting the grid.
inline std::vector<AblationRow> run_ablation(const RunConfig& base, const AblationGrid& grid) {
  std::vector<AblationRow> rows;
  for (const AblationVariant& variant : expand_grid(base, grid)) {
    AblationRow row;
    row.label = variant.label;
    if (!variant.valid()) {
      row.error = variant.error;
      rows.push_back(std::move(row));
      continue;
    }
    try {
      RunConfig config = variant.config;
      config.out_dir = base.out_dir + "/" + std::to_string(rows.size());
      TrainOutcome outcome = run_train(config);
      outcome.test_metrics.label = variant.label;
      row.metrics = std::move(outcome.test_metrics);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char c : field) {
    if (c == '"') quoted += "\"\"";
    else quoted.push_back(c);
  }
  quoted += "\"";
  return quoted;
}

// Grid table: metric rows for successful variants, one error row for
// failed ones.
inline std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::string out = "label,metric,K,value\n";
  for (const AblationRow& row : rows) {
    if (!row.error.empty()) {
      out += csv_quote(row.label) + ",error,0," + csv_quote(row.error) + "\n";
      continue;
    }
    std::vector<MetricsReport> one{*row.metrics};
    const std::string body = report_to_csv(one);
    out += body.substr(body.find('\n') + 1);
  }
  return out;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  if (rows.empty()) throw ConfigError("ablation produced no rows");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << ablation_to_csv(rows);
  if (!out) throw IoError("cannot write report: " + path);
}

}  // namespace mbrec
