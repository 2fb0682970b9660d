// Command line front end: fit, predict, eval, diagnose, synth, baseline.
// Every artifact lands under --out-dir; errors print one machine-parsable
// line on stderr and map to exit codes 2 (config), 3 (data), 4 (numeric).

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gpreg/config.hpp"
#include "gpreg/dataset.hpp"
#include "gpreg/errors.hpp"
#include "gpreg/model_io.hpp"
#include "gpreg/pipeline.hpp"
#include "gpreg/version.hpp"

namespace {

struct GlobalArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  int threads = 1;
  bool unlock_test = false;
};

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const gpreg::ConfigError*>(&e)) return "config";
  if (dynamic_cast<const gpreg::DataError*>(&e)) return "data";
  if (dynamic_cast<const gpreg::NumericError*>(&e)) return "numeric";
  return "internal";
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

std::string joined(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

gpreg::PipelineConfig load_config(const GlobalArgs& g,
                                  const std::string& subcommand) {
  if (g.config.empty())
    throw gpreg::ConfigError(subcommand + " requires --config <file>");
  return gpreg::load_pipeline_config(g.config, g.seed);
}

int run(int argc, char** argv) {
  CLI::App app{"gaussian process regression toolkit"};
  app.set_version_flag("--version", gpreg::kVersion);
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted before or after the command

  GlobalArgs g;
  app.add_option("--config", g.config, "pipeline config (TOML)");
  app.add_option("--seed", g.seed, "run seed");
  app.add_option("--out-dir", g.out_dir, "artifact directory");
  app.add_option("--threads", g.threads, "eigen thread count");
  app.add_flag("--unlock-test", g.unlock_test,
               "evaluate the held-back test split instead of validation");

  std::string model_path;
  std::string data_path;
  std::string slice_feature;
  std::int64_t synth_n = 20000;

  auto* fit = app.add_subcommand("fit", "train a model from a config");

  auto* predict =
      app.add_subcommand("predict", "predictions with uncertainty as CSV");
  predict->add_option("--model", model_path, "fitted model document")
      ->required();
  predict->add_option("--data", data_path,
                      "CSV to predict on (defaults to the fitted file)");

  auto* eval = app.add_subcommand("eval", "score a model on held-out rows");
  eval->add_option("--model", model_path, "fitted model document")->required();

  auto* diagnose =
      app.add_subcommand("diagnose", "residuals, draws, gradient self-checks");
  diagnose->add_option("--model", model_path, "fitted model document")
      ->required();
  diagnose->add_option("--feature", slice_feature,
                       "input feature for the sample-path slice");

  auto* synth = app.add_subcommand("synth", "generate a synthetic survey CSV");
  synth->add_option("--n", synth_n, "number of rows");

  auto* baseline =
      app.add_subcommand("baseline", "k-NN and linear reference scores");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the usage hint
    throw gpreg::ConfigError(std::string("command line: ") + e.what());
  }

  Eigen::setNbThreads(std::max(1, g.threads));
  std::filesystem::create_directories(g.out_dir);

  if (fit->parsed()) {
    const gpreg::PipelineConfig cfg = load_config(g, "fit");
    const gpreg::FitOutput out = gpreg::run_fit(cfg);
    gpreg::write_text_file(joined(g.out_dir, "model.json"),
                           out.document.dump(2) + "\n");
    gpreg::write_text_file(joined(g.out_dir, "train_report.json"),
                           out.train_report.dump(2) + "\n");
    std::printf("fit: objective %.6f, model.json written\n", out.objective);
  } else if (predict->parsed()) {
    const gpreg::LoadedModel m = gpreg::load_model(model_path);
    gpreg::CsvSchema schema;
    schema.features = m.cfg.data.features;
    gpreg::Dataset ds;
    if (!data_path.empty()) {
      // unlabeled input is fine here; only the features are read
      ds = gpreg::load_csv(data_path, schema);
    } else {
      ds = gpreg::detail::reload_fitted_data(m);
    }
    const std::string csv = gpreg::run_predict(m, ds);
    gpreg::write_text_file(joined(g.out_dir, "predictions.csv"), csv);
    std::printf("predict: %lld rows, predictions.csv written\n",
                static_cast<long long>(ds.rows()));
  } else if (eval->parsed()) {
    const gpreg::LoadedModel m = gpreg::load_model(model_path);
    const gpreg::EvalOutput out = gpreg::run_eval(m, g.unlock_test);
    gpreg::write_text_file(joined(g.out_dir, m.cfg.eval.report_json),
                           out.report.dump(2) + "\n");
    gpreg::write_text_file(joined(g.out_dir, m.cfg.eval.report_text),
                           out.table);
    std::fputs(out.table.c_str(), stdout);
  } else if (diagnose->parsed()) {
    const gpreg::LoadedModel m = gpreg::load_model(model_path);
    const gpreg::json out = gpreg::run_diagnose(m, slice_feature);
    gpreg::write_text_file(joined(g.out_dir, "diagnostics.json"),
                           out.dump(2) + "\n");
    std::printf("diagnose: gradient check %s, self check %d/%d "
                "hyperparameters within 30%%%s\n",
                out.at("gradient_check").at("pass").get<bool>() ? "pass"
                                                                : "FAIL",
                out.at("self_check").at("within_tol").get<int>(),
                out.at("self_check").at("param_count").get<int>(),
                out.at("self_check").at("ok").get<bool>() ? "" : " (LOW)");
  } else if (synth->parsed()) {
    const std::string path = joined(g.out_dir, "synthetic.csv");
    const gpreg::Dataset ds = gpreg::run_synth(synth_n, g.seed, path);
    std::printf("synth: %lld rows written to %s\n",
                static_cast<long long>(ds.rows()), path.c_str());
  } else if (baseline->parsed()) {
    const gpreg::PipelineConfig cfg = load_config(g, "baseline");
    const gpreg::EvalOutput out = gpreg::run_baseline(cfg, g.unlock_test);
    gpreg::write_text_file(joined(g.out_dir, "baseline_report.json"),
                           out.report.dump(2) + "\n");
    gpreg::write_text_file(joined(g.out_dir, "baseline_report.txt"),
                           out.table);
    std::fputs(out.table.c_str(), stdout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gpreg: error[%s]: %s\n", error_kind(e).c_str(),
                 one_line(e.what()).c_str());
    return gpreg::exit_code_for(e);
  }
}
