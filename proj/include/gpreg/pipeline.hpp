#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gpreg/baselines.hpp"
#include "gpreg/bcm.hpp"
#include "gpreg/config.hpp"
#include "gpreg/dataset.hpp"
#include "gpreg/gp.hpp"
#include "gpreg/kronecker.hpp"
#include "gpreg/metrics.hpp"
#include "gpreg/model_io.hpp"
#include "gpreg/split.hpp"
#include "gpreg/svgp.hpp"
#include "gpreg/synthetic.hpp"
#include "gpreg/train.hpp"
#include "gpreg/transform.hpp"
#include "gpreg/version.hpp"

namespace gpreg {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file '" + path + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

namespace detail {

inline std::optional<ColumnTransform::Kind> warp_kind(const std::string& s) {
  if (s == "log") return ColumnTransform::Kind::Log;
  if (s == "boxcox") return ColumnTransform::Kind::BoxCox;
  return std::nullopt;
}

inline void strided_subset(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           Eigen::Index cap, Eigen::MatrixXd& Xs,
                           Eigen::VectorXd& ys) {
  const Eigen::VectorXi idx = stride_subsample(X.rows(), cap);
  Xs.resize(idx.size(), X.cols());
  ys.resize(idx.size());
  for (Eigen::Index i = 0; i < idx.size(); ++i) {
    Xs.row(i) = X.row(idx[i]);
    ys[i] = y[idx[i]];
  }
}

inline CsvSchema schema_from(const DataConfig& d) {
  CsvSchema s;
  s.features = d.features;
  s.target = d.target;
  s.track = d.track;
  return s;
}

}  // namespace detail

struct FitOutput {
  json document;
  json train_report;
  double objective = 0.0;
};

// load -> split -> fit transforms on the training rows -> train in the
// configured scaling mode -> assemble the self-contained model document.
inline FitOutput run_fit(const PipelineConfig& cfg) {
  if (cfg.data.path.empty())
    throw ConfigError("[data] path is required to fit");
  const Dataset ds = load_csv(cfg.data.path, detail::schema_from(cfg.data));

  SplitSpec sp;
  sp.train = cfg.split.train;
  sp.val = cfg.split.val;
  sp.test = cfg.split.test;
  sp.unit = cfg.split.unit;
  sp.seed = cfg.split_seed();
  const SplitResult split = split_dataset(ds, sp);
  if (split.train.empty()) throw EmptyDataset("training split has no rows");
  const Dataset train = ds.select(split.train);

  std::optional<InputStandardizer> instd;
  if (cfg.transforms.standardize_inputs)
    instd = fit_input_standardizer(train.X);
  const TargetTransform tt = fit_target_transform(
      train.y, detail::warp_kind(cfg.transforms.target_warp),
      cfg.transforms.standardize_target);

  const Eigen::MatrixXd Xt = instd ? instd->apply(train.X) : train.X;
  tt.assert_fitted_on(train.y);  // guards against off-split fitted specs
  const Eigen::VectorXd yt = tt.apply(train.y);

  const GPModel proto = build_model(cfg);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.train_seed();

  json scale_json;
  scale_json["mode"] = scale_mode_name(cfg.scale.mode);
  json train_report;
  train_report["mode"] = scale_mode_name(cfg.scale.mode);
  GPModel fitted = proto;
  double objective = 0.0;

  switch (cfg.scale.mode) {
    case ScaleMode::Exact: {
      GPModel m = proto;
      initialize_hyperparams(m, Xt, yt, cfg.kernel.init);
      const TrainResult r = optimize(m, Xt, yt, tcfg);
      fitted = r.model;
      objective = r.objective;
      train_report["converged"] = r.converged;
      train_report["best_restart"] = r.best_restart;
      train_report["trace"] = r.trace;
      break;
    }
    case ScaleMode::Experts: {
      const Chunking ch =
          cfg.scale.chunking == "grid"
              ? chunk_grid(Xt, cfg.scale.tile)
              : chunk_kmeans(Xt, static_cast<int>(cfg.scale.chunks),
                             cfg.train_seed());
      const ExpertMode em = cfg.scale.expert_mode == "independent"
                                ? ExpertMode::Independent
                                : ExpertMode::SharedHypers;
      const ExpertEnsemble ens =
          fit_experts(proto, Xt, yt, ch, em, tcfg, cfg.scale.shared_subsample,
                      cfg.kernel.init);
      fitted = ens.models.front();
      json experts = json::array();
      double sum_lml = 0.0;
      for (std::size_t k = 0; k < ens.models.size(); ++k) {
        sum_lml += log_marginal_likelihood(ens.models[k], ens.caches[k],
                                           ens.caches[k].y);
        json e;
        std::vector<std::int64_t> rows(ens.rows[k].begin(),
                                       ens.rows[k].end());
        e["rows"] = iojson::ids_to_json(rows);
        e["params"] = model_params_json(ens.models[k]);
        experts.push_back(std::move(e));
      }
      objective = sum_lml;  // independent-blocks likelihood
      scale_json["aggregation"] = cfg.scale.aggregation;
      scale_json["failed_chunks"] = ens.failed_chunks;
      scale_json["experts"] = std::move(experts);
      train_report["experts"] = ens.models.size();
      train_report["failed_chunks"] = ens.failed_chunks;
      break;
    }
    case ScaleMode::Svgp: {
      GPModel m = proto;
      Eigen::MatrixXd Xs;
      Eigen::VectorXd ys;
      detail::strided_subset(Xt, yt, m.exact_cap, Xs, ys);
      initialize_hyperparams(m, Xs, ys, cfg.kernel.init);
      const SvgpResult r =
          svgp_fit(m, Xt, yt, static_cast<int>(cfg.scale.inducing), tcfg);
      fitted = r.model;
      objective = r.bound;
      scale_json["inducing"] = iojson::mat_to_json(r.Z);
      train_report["converged"] = r.converged;
      train_report["trace"] = r.trace;
      break;
    }
    case ScaleMode::Kronecker: {
      if (cfg.mean.kind != MeanSpec::Kind::Zero)
        throw ConfigError("grid mode requires mean.kind = \"zero\"");
      const GridSpec grid = infer_grid(Xt);
      Eigen::VectorXd y_grid(grid.total());
      for (Eigen::Index i = 0; i < Xt.rows(); ++i)
        y_grid[grid.flat_of_row[static_cast<std::size_t>(i)]] = yt[i];
      GPModel m = proto;
      Eigen::MatrixXd Xs;
      Eigen::VectorXd ys;
      detail::strided_subset(Xt, yt, m.exact_cap, Xs, ys);
      initialize_hyperparams(m, Xs, ys, cfg.kernel.init);
      const KroneckerSystem sys = kronecker_optimize(m, grid, y_grid, tcfg);
      fitted = sys.model;
      objective = sys.lml;
      break;
    }
  }

  train_report["objective"] = objective;
  train_report["params"] = model_params_json(fitted);
  train_report["version"] = kVersion;

  auto to_ids = [&](const std::vector<Eigen::Index>& rows) {
    std::vector<std::int64_t> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(ds.row_ids[static_cast<std::size_t>(r)]);
    return out;
  };

  json doc;
  doc["format"] = "gpreg-model";
  doc["version"] = kVersion;
  doc["seed"] = cfg.seed;
  doc["config"] = cfg.snapshot;
  {
    json d;
    d["path"] = cfg.data.path;
    d["rows"] = ds.rows();
    d["dropped_rows"] = ds.dropped_rows;
    d["fingerprint"] = fingerprint(ds.y);
    doc["data"] = std::move(d);
  }
  {
    json s;
    s["train_ids"] = iojson::ids_to_json(to_ids(split.train));
    s["val_ids"] = iojson::ids_to_json(to_ids(split.val));
    s["test_ids"] = iojson::ids_to_json(to_ids(split.test));
    s["train_units"] = split.train_units;
    s["val_units"] = split.val_units;
    s["test_units"] = split.test_units;
    doc["split"] = std::move(s);
  }
  doc["transforms"] = transforms_to_json(instd, tt);
  {
    json m;
    m["kernel"] = print_kernel_expr(fitted.kernel);
    m["params"] = model_params_json(fitted);
    doc["model"] = std::move(m);
  }
  doc["scale"] = std::move(scale_json);
  {
    json t;
    t["objective"] = objective;
    doc["train"] = std::move(t);
  }
  {
    json td;
    td["x"] = iojson::mat_to_json(Xt);
    td["y"] = iojson::vec_to_json(yt);
    doc["training_data"] = std::move(td);
  }

  return FitOutput{std::move(doc), std::move(train_report), objective};
}

// Predictions mapped back to the original target scale: medians plus the
// central 95% band from the observation distribution, and interval-based
// standard deviations for both the latent and the observation parts.
struct PredictionSet {
  PredictiveDistribution dist;  // transformed space
  PredictiveQuantiles obs;      // original scale, observation variance
  PredictiveQuantiles latent;   // original scale, latent variance
};

inline PredictionSet predict_original_scale(const LoadedModel& m,
                                            const Eigen::MatrixXd& X_raw) {
  const Eigen::MatrixXd Xt =
      m.input_std ? m.input_std->apply(X_raw) : X_raw;
  PredictionSet out;
  out.dist = model_predict(m, Xt);
  out.obs =
      inverse_predictive(m.target, out.dist.mean, out.dist.observation_variance);
  out.latent =
      inverse_predictive(m.target, out.dist.mean, out.dist.latent_variance);
  return out;
}

inline std::string render_predictions_csv(
    const std::vector<std::int64_t>& row_ids, const PredictionSet& p) {
  std::string out = "row_id,prediction,latent_std,obs_std,lower95,upper95\n";
  for (std::size_t i = 0; i < row_ids.size(); ++i) {
    const Eigen::Index k = static_cast<Eigen::Index>(i);
    out += std::to_string(row_ids[i]);
    out += ',';
    out += format_double(p.obs.median[k]);
    out += ',';
    out += format_double(p.latent.std_proxy[k]);
    out += ',';
    out += format_double(p.obs.std_proxy[k]);
    out += ',';
    out += format_double(p.obs.lower95[k]);
    out += ',';
    out += format_double(p.obs.upper95[k]);
    out += '\n';
  }
  return out;
}

inline std::string run_predict(const LoadedModel& m, const Dataset& ds) {
  const PredictionSet p = predict_original_scale(m, ds.X);
  return render_predictions_csv(ds.row_ids, p);
}

// --- metric reports ---

namespace detail {

inline json point_metrics(const std::vector<std::string>& which,
                          const Eigen::VectorXd& pred,
                          const Eigen::VectorXd& actual) {
  json out = json::object();
  std::optional<TailRmse> tails;
  auto tail = [&]() -> const TailRmse& {
    if (!tails) tails = tail_rmse(pred, actual);
    return *tails;
  };
  for (const auto& m : which) {
    if (m == "rmse") out["rmse"] = rmse(pred, actual);
    else if (m == "rmse_p5") out["rmse_p5"] = tail().low;
    else if (m == "rmse_p95") out["rmse_p95"] = tail().high;
    else if (m == "r2") out["r2"] = r2(pred, actual);
    else if (m == "mae") out["mae"] = mae(pred, actual);
    else if (m == "bias") out["bias"] = bias(pred, actual);
  }
  out["n"] = actual.size();
  return out;
}

inline void add_prob_metrics(json& out, const std::vector<std::string>& which,
                             const TargetTransform& tt,
                             const Eigen::VectorXd& actual,
                             const PredictionSet& p,
                             std::optional<double> bic_value) {
  for (const auto& m : which) {
    if (m == "mll")
      out["mll"] = mean_nlpd(tt, actual, p.dist.mean,
                             p.dist.observation_variance);
    else if (m == "coverage")
      out["coverage"] = coverage(actual, p.obs.lower95, p.obs.upper95);
    else if (m == "bic" && bic_value)
      out["bic"] = *bic_value;
  }
}

inline json report_meta(const std::string& set_label, const std::string& path,
                        Eigen::Index rows, const std::string& snapshot) {
  json meta;
  meta["version"] = kVersion;
  meta["set"] = set_label;
  meta["data_path"] = path;
  meta["rows_evaluated"] = rows;
  meta["config"] = snapshot;
  return meta;
}

inline std::string render_report_table(const json& report) {
  static const char* kColumns[] = {"rmse", "rmse_p5", "rmse_p95", "r2",
                                   "mll",  "mae",     "bias",     "bic",
                                   "coverage", "n"};
  const json& meta = report.at("_meta");
  std::string out = "set: " + meta.at("set").get<std::string>() +
                    "  rows: " + meta.at("rows_evaluated").dump() +
                    "  version: " + meta.at("version").get<std::string>() +
                    "\n\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-14s", "model");
  out += buf;
  for (const char* c : kColumns) {
    std::snprintf(buf, sizeof buf, " %10s", c);
    out += buf;
  }
  out += '\n';
  for (const auto& [name, metrics] : report.items()) {
    if (name == "_meta") continue;
    std::snprintf(buf, sizeof buf, "%-14s", name.c_str());
    out += buf;
    for (const char* c : kColumns) {
      if (metrics.contains(c)) {
        if (metrics.at(c).is_number_integer())
          std::snprintf(buf, sizeof buf, " %10lld",
                        static_cast<long long>(metrics.at(c).get<std::int64_t>()));
        else
          std::snprintf(buf, sizeof buf, " %10.4g",
                        metrics.at(c).get<double>());
      } else {
        std::snprintf(buf, sizeof buf, " %10s", "-");
      }
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// Reload the file a model was fitted on and map stored row ids back to
// positions, refusing silently changed data.
inline Dataset reload_fitted_data(const LoadedModel& m) {
  const Dataset ds =
      load_csv(m.cfg.data.path, schema_from(m.cfg.data));
  if (ds.rows() != m.data_rows || fingerprint(ds.y) != m.data_fingerprint)
    throw SchemaMismatch("data file '" + m.cfg.data.path +
                         "' does not match the file the model was fitted on");
  return ds;
}

inline std::vector<Eigen::Index> positions_of(
    const Dataset& ds, const std::vector<std::int64_t>& ids) {
  std::map<std::int64_t, Eigen::Index> where;
  for (std::size_t i = 0; i < ds.row_ids.size(); ++i)
    where[ds.row_ids[i]] = static_cast<Eigen::Index>(i);
  std::vector<Eigen::Index> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto it = where.find(id);
    if (it == where.end())
      throw SchemaMismatch("stored row id " + std::to_string(id) +
                           " not present in '" + ds.target_name + "' data");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace detail

struct EvalOutput {
  json report;
  std::string table;
};

inline EvalOutput run_eval(const LoadedModel& m, bool unlock_test) {
  const Dataset ds = detail::reload_fitted_data(m);
  const std::string label = unlock_test ? "test" : "validation";
  const auto& ids = unlock_test ? m.test_ids : m.val_ids;
  if (ids.empty())
    throw EmptyDataset(label + " split has no rows to evaluate");
  const Dataset ev = ds.select(detail::positions_of(ds, ids));

  const PredictionSet p = predict_original_scale(m, ev.X);
  json metrics =
      detail::point_metrics(m.cfg.eval.metrics, p.obs.median, ev.y);
  // the information criterion needs a true likelihood, which only the
  // dense-solve modes produce
  std::optional<double> bic_value;
  if (m.mode == ScaleMode::Exact || m.mode == ScaleMode::Kronecker)
    bic_value = bic(m.objective, m.model.param_count(), m.X.rows());
  detail::add_prob_metrics(metrics, m.cfg.eval.metrics, m.target, ev.y, p,
                           bic_value);

  json report;
  report["_meta"] = detail::report_meta(label, m.cfg.data.path,
                                        ev.rows(), m.cfg.snapshot);
  report[std::string("gp_") + scale_mode_name(m.mode)] = std::move(metrics);
  EvalOutput out;
  out.table = detail::render_report_table(report);
  out.report = std::move(report);
  return out;
}

// k-NN and linear regression under the same split and transforms, so their
// scores are comparable with the GP's report.
inline EvalOutput run_baseline(const PipelineConfig& cfg, bool unlock_test) {
  if (cfg.data.path.empty())
    throw ConfigError("[data] path is required for baselines");
  const Dataset ds = load_csv(cfg.data.path, detail::schema_from(cfg.data));

  SplitSpec sp;
  sp.train = cfg.split.train;
  sp.val = cfg.split.val;
  sp.test = cfg.split.test;
  sp.unit = cfg.split.unit;
  sp.seed = cfg.split_seed();
  const SplitResult split = split_dataset(ds, sp);
  if (split.train.empty()) throw EmptyDataset("training split has no rows");
  const std::string label = unlock_test ? "test" : "validation";
  const auto& rows = unlock_test ? split.test : split.val;
  if (rows.empty())
    throw EmptyDataset(label + " split has no rows to evaluate");

  const Dataset train = ds.select(split.train);
  const Dataset ev = ds.select(rows);

  std::optional<InputStandardizer> instd;
  if (cfg.transforms.standardize_inputs)
    instd = fit_input_standardizer(train.X);
  const TargetTransform tt = fit_target_transform(
      train.y, detail::warp_kind(cfg.transforms.target_warp),
      cfg.transforms.standardize_target);

  const Eigen::MatrixXd Xt = instd ? instd->apply(train.X) : train.X;
  const Eigen::VectorXd yt = tt.apply(train.y);
  const Eigen::MatrixXd Xe = instd ? instd->apply(ev.X) : ev.X;

  const Eigen::VectorXd knn_t =
      knn_predict(Xt, yt, Xe, static_cast<int>(cfg.eval.knn_k));
  const Eigen::VectorXd knn_pred = tt.inverse(knn_t);

  const LinearBaseline lin = fit_linear_baseline(Xt, yt, cfg.data.features);
  const Eigen::VectorXd lin_pred = tt.inverse(lin.predict(Xe));

  json report;
  report["_meta"] =
      detail::report_meta(label, cfg.data.path, ev.rows(), cfg.snapshot);
  report["knn"] = detail::point_metrics(cfg.eval.metrics, knn_pred, ev.y);
  report["linreg"] = detail::point_metrics(cfg.eval.metrics, lin_pred, ev.y);
  EvalOutput out;
  out.table = detail::render_report_table(report);
  out.report = std::move(report);
  return out;
}

// --- diagnose ---

inline json run_diagnose(const LoadedModel& m,
                         const std::string& slice_feature) {
  const PipelineConfig& cfg = m.cfg;
  json out;
  out["version"] = kVersion;

  // residuals on held-out rows (fall back to training rows if none exist)
  {
    const Dataset ds = detail::reload_fitted_data(m);
    const bool have_val = !m.val_ids.empty();
    const auto& ids = have_val ? m.val_ids : m.train_ids;
    const Dataset ev = ds.select(detail::positions_of(ds, ids));
    const PredictionSet p = predict_original_scale(m, ev.X);
    const ResidualDiagnostics rd =
        residual_diagnostics(p.obs.median, ev.y, p.obs.std_proxy, ev.X);
    json r;
    r["set"] = have_val ? "validation" : "train";
    r["n"] = rd.n;
    r["resid_mean"] = rd.resid_mean;
    r["resid_std"] = rd.resid_std;
    r["std_resid_mean"] = rd.std_resid_mean;
    r["std_resid_std"] = rd.std_resid_std;
    json corr = json::object();
    for (std::size_t j = 0; j < cfg.data.features.size(); ++j)
      corr[cfg.data.features[j]] = rd.feature_correlation[j];
    r["residual_feature_correlation"] = std::move(corr);
    out["residuals"] = std::move(r);
  }

  // five posterior draws along one input feature, other features held at
  // their training medians (transformed space, reported in original units)
  {
    std::size_t fi = 0;
    if (!slice_feature.empty()) {
      const auto it = std::find(cfg.data.features.begin(),
                                cfg.data.features.end(), slice_feature);
      if (it == cfg.data.features.end())
        throw ConfigError("no feature named '" + slice_feature + "'");
      fi = static_cast<std::size_t>(it - cfg.data.features.begin());
    }
    const Eigen::Index fcol = static_cast<Eigen::Index>(fi);
    const Eigen::Index n_grid = 101;

    Eigen::VectorXd medians(m.X.cols());
    for (Eigen::Index j = 0; j < m.X.cols(); ++j) {
      Eigen::VectorXd col = m.X.col(j);
      std::sort(col.data(), col.data() + col.size());
      medians[j] = col[col.size() / 2];
    }
    const double lo = m.X.col(fcol).minCoeff();
    const double hi = m.X.col(fcol).maxCoeff();
    Eigen::MatrixXd slice(n_grid, m.X.cols());
    for (Eigen::Index i = 0; i < n_grid; ++i) {
      slice.row(i) = medians.transpose();
      slice(i, fcol) =
          lo + (hi - lo) * static_cast<double>(i) /
                   static_cast<double>(n_grid - 1);
    }

    // an exact posterior over (a subsample of) the training rows gives the
    // draws; approximate modes borrow their fitted hyperparameters here
    Eigen::MatrixXd Xc;
    Eigen::VectorXd yc;
    detail::strided_subset(m.X, m.y, 2000, Xc, yc);
    const PosteriorCache cache = fit_cache(m.model, Xc, yc);
    const Eigen::MatrixXd draws =
        sample(m.model, slice, 5, detail::mix_seed(cfg.seed, 17), &cache);

    json s;
    s["feature"] = cfg.data.features[fi];
    Eigen::VectorXd axis = slice.col(fcol);
    if (m.input_std)
      for (Eigen::Index i = 0; i < axis.size(); ++i)
        axis[i] = m.input_std->cols[fi].inverse_one(axis[i]);
    s["x"] = iojson::vec_to_json(axis);
    json paths = json::array();
    for (int c = 0; c < 5; ++c)
      paths.push_back(iojson::vec_to_json(m.target.inverse(draws.col(c))));
    s["samples"] = std::move(paths);
    out["slice"] = std::move(s);
  }

  // analytic vs numeric likelihood gradients at the fitted parameters
  {
    Eigen::MatrixXd Xc;
    Eigen::VectorXd yc;
    detail::strided_subset(m.X, m.y, 200, Xc, yc);
    const GradientCheck gc = check_gradients(m.model, Xc, yc);
    json g;
    g["names"] = gc.names;
    g["analytic"] = iojson::vec_to_json(gc.analytic);
    g["numeric"] = iojson::vec_to_json(gc.numeric);
    g["max_rel_error"] = gc.max_rel_error;
    g["pass"] = gc.max_rel_error < 1e-5;
    out["gradient_check"] = std::move(g);
  }

  // refit on data generated by the fitted model and count how many
  // parameters come back within 30%; rich additive models routinely trade
  // variance between components on a small subsample, so "ok" flags only a
  // majority miss rather than demanding every parameter
  {
    Eigen::MatrixXd Xc;
    Eigen::VectorXd yc;
    detail::strided_subset(m.X, m.y, 400, Xc, yc);
    TrainConfig tcfg = m.cfg.train;
    tcfg.seed = detail::mix_seed(cfg.seed, 29);
    const SelfCheckReport sc =
        synthetic_self_check(m.model, Xc, detail::mix_seed(cfg.seed, 23),
                             tcfg);
    const int within = sc.within(0.3);
    const int total = static_cast<int>(sc.params.size());
    json s;
    s["ok"] = 2 * within >= total;
    s["all_within_tol"] = sc.ok(0.3);
    s["within_tol"] = within;
    s["param_count"] = total;
    s["tolerance"] = 0.3;
    json params = json::array();
    for (const auto& p : sc.params) {
      json e;
      e["name"] = p.name;
      e["truth"] = p.truth;
      e["recovered"] = p.recovered;
      params.push_back(std::move(e));
    }
    s["params"] = std::move(params);
    out["self_check"] = std::move(s);
  }

  return out;
}

inline Dataset run_synth(std::int64_t n, std::uint64_t seed,
                         const std::string& path) {
  const Dataset ds = synthesize_glacier(static_cast<int>(n), seed);
  write_csv(path, ds);
  return ds;
}

}  // namespace gpreg
