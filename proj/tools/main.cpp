// Command-line harness: prepare | train | evaluate | ablate | report.
// Settings come from defaults, then an optional flat key=value config
// file, then flags (flags win).

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mbrec/mbrec.hpp"

namespace {

struct FlagValues {
  std::string config_file;
  std::string behaviors;
  std::string inputs;
  std::string layers;
  std::string dim;
  std::string batch;
  std::string lr;
  std::string lambda;
  std::string epochs;
  std::string patience;
  std::string seed;
  std::string agg;
  std::string ft;
  std::string topk;
  std::string eval_k;
  std::string out;
};

void add_common_flags(CLI::App* cmd, FlagValues& flags) {
  cmd->add_option("--config", flags.config_file, "flat key=value config file");
  cmd->add_option("--behaviors", flags.behaviors, "comma-separated chain, target last");
  cmd->add_option("--inputs", flags.inputs, "comma-separated TSV paths, one per behavior");
  cmd->add_option("--layers", flags.layers, "propagation depths per behavior");
  cmd->add_option("--dim", flags.dim, "embedding dimension");
  cmd->add_option("--batch", flags.batch, "minibatch size");
  cmd->add_option("--lr", flags.lr, "learning rate");
  cmd->add_option("--lambda", flags.lambda, "L2 coefficient");
  cmd->add_option("--epochs", flags.epochs, "maximum epochs");
  cmd->add_option("--patience", flags.patience, "early-stopping patience");
  cmd->add_option("--seed", flags.seed, "random seed");
  cmd->add_option("--agg", flags.agg, "aggregation: sum|concat|last");
  cmd->add_option("--ft", flags.ft, "feature transformations: on|off");
  cmd->add_option("--topk", flags.topk, "metric cutoffs, e.g. 10,20,50");
  cmd->add_option("--eval-k", flags.eval_k, "validation monitoring cutoff");
  cmd->add_option("--out", flags.out, "output directory");
}

mbrec::RunConfig build_config(const FlagValues& flags) {
  mbrec::RunConfig config;
  if (!flags.config_file.empty()) mbrec::apply_config_file(config, flags.config_file);
  auto apply = [&](const char* key, const std::string& value) {
    if (!value.empty()) mbrec::apply_setting(config, key, value);
  };
  apply("behaviors", flags.behaviors);
  apply("inputs", flags.inputs);
  apply("layers", flags.layers);
  apply("dim", flags.dim);
  apply("batch", flags.batch);
  apply("lr", flags.lr);
  apply("lambda", flags.lambda);
  apply("epochs", flags.epochs);
  apply("patience", flags.patience);
  apply("seed", flags.seed);
  apply("agg", flags.agg);
  apply("ft", flags.ft);
  apply("topk", flags.topk);
  apply("eval_k", flags.eval_k);
  apply("out", flags.out);
  mbrec::finalize_layers(config);
  return config;
}

void print_metrics(const mbrec::MetricsReport& metrics) {
  std::cout << "label " << metrics.label << "\n";
  std::cout << "users " << metrics.users_evaluated << "\n";
  for (std::size_t i = 0; i < metrics.ks.size(); ++i) {
    std::cout << "recall@" << metrics.ks[i] << " "
              << mbrec::format_metric_value(metrics.recall[i]) << "\n";
    std::cout << "ndcg@" << metrics.ks[i] << " "
              << mbrec::format_metric_value(metrics.ndcg[i]) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-behavior cascading graph recommendation engine"};
  app.require_subcommand(1);

  FlagValues flags;

  CLI::App* prepare = app.add_subcommand("prepare", "ingest inputs, split, print stats");
  add_common_flags(prepare, flags);

  CLI::App* train = app.add_subcommand("train", "train and evaluate on the test holdout");
  add_common_flags(train, flags);

  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  add_common_flags(evaluate, flags);
  std::string checkpoint_path;
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation grid");
  add_common_flags(ablate, flags);
  std::string grid_ft;
  std::string grid_agg;
  std::string grid_orders;
  std::string grid_layers;
  ablate->add_option("--grid-ft", grid_ft, "ft variants, e.g. on,off");
  ablate->add_option("--grid-agg", grid_agg, "aggregation variants, e.g. sum,concat,last");
  ablate->add_option("--grid-orders", grid_orders, "behavior-order variants, comma-separated");
  ablate->add_option("--grid-layers", grid_layers, "uniform depth variants, e.g. 1,2,3,4");

  CLI::App* report = app.add_subcommand("report", "tabulate stored metrics files");
  std::string report_inputs;
  std::string report_format = "csv";
  std::string report_out;
  report->add_option("--metrics", report_inputs, "comma-separated metrics.json paths")
      ->required();
  report->add_option("--format", report_format, "csv or json");
  report->add_option("--out", report_out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) {
      mbrec::RunConfig config = build_config(flags);
      mbrec::run_prepare(config, std::cout);
    } else if (train->parsed()) {
      mbrec::RunConfig config = build_config(flags);
      const mbrec::TrainOutcome outcome = mbrec::run_train(config);
      std::cout << "checkpoint " << outcome.checkpoint_path << "\n";
      std::cout << "metrics " << outcome.metrics_path << "\n";
      std::cout << "log " << outcome.log_path << "\n";
      std::cout << "best_epoch " << outcome.fit_result.best_epoch << "\n";
      print_metrics(outcome.test_metrics);
    } else if (evaluate->parsed()) {
      mbrec::RunConfig config = build_config(flags);
      print_metrics(mbrec::run_evaluate(config, checkpoint_path));
    } else if (ablate->parsed()) {
      mbrec::RunConfig config = build_config(flags);
      mbrec::AblationGrid grid;
      if (!grid_ft.empty())
        for (const std::string& v : mbrec::split_string(grid_ft, ','))
          grid.transform_variants.push_back(mbrec::parse_on_off(v, "grid-ft"));
      if (!grid_agg.empty())
        for (const std::string& v : mbrec::split_string(grid_agg, ','))
          grid.aggregation_variants.push_back(mbrec::aggregation_from_string(v));
      if (!grid_orders.empty()) grid.order_variants = mbrec::split_string(grid_orders, ',');
      if (!grid_layers.empty())
        grid.uniform_layer_variants = mbrec::parse_index_list(grid_layers, "grid-layers");
      if (grid.transform_variants.empty() && grid.aggregation_variants.empty() &&
          grid.order_variants.empty() && grid.uniform_layer_variants.empty()) {
        grid.transform_variants = {true, false};
        grid.aggregation_variants = {mbrec::Aggregation::kSum, mbrec::Aggregation::kConcat,
                                     mbrec::Aggregation::kLastOnly};
      }
      const std::vector<mbrec::AblationRow> rows = mbrec::run_ablation(config, grid);
      std::filesystem::create_directories(config.out_dir);
      const std::string table_path = config.out_dir + "/ablation.csv";
      mbrec::write_ablation_csv(rows, table_path);
      std::cout << mbrec::ablation_to_csv(rows);
      std::cout << "table " << table_path << "\n";
    } else if (report->parsed()) {
      std::vector<mbrec::MetricsReport> reports;
      for (const std::string& path : mbrec::split_string(report_inputs, ','))
        reports.push_back(mbrec::load_metrics_json(path));
      mbrec::write_report(reports, mbrec::report_format_from_string(report_format),
                          report_out);
      std::cout << "report " << report_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
