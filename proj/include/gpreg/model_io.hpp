#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gpreg/bcm.hpp"
#include "gpreg/config.hpp"
#include "gpreg/gp.hpp"
#include "gpreg/kronecker.hpp"
#include "gpreg/svgp.hpp"
#include "gpreg/toml.hpp"
#include "gpreg/train.hpp"
#include "gpreg/transform.hpp"
#include "gpreg/version.hpp"

namespace gpreg {
namespace iojson {

inline json vec_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Eigen::VectorXd vec_from_json(const json& j, const std::string& where) {
  if (!j.is_array())
    throw ParseError("model document: '" + where + "' is not an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      throw ParseError("model document: '" + where + "' holds a non-number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json mat_to_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

inline Eigen::MatrixXd mat_from_json(const json& j, const std::string& where) {
  if (!j.is_array())
    throw ParseError("model document: '" + where + "' is not an array");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = -1;
  Eigen::MatrixXd m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::VectorXd row =
        vec_from_json(j[static_cast<std::size_t>(i)], where);
    if (cols < 0) {
      cols = row.size();
      m.resize(rows, cols);
    } else if (row.size() != cols) {
      throw ParseError("model document: ragged rows in '" + where + "'");
    }
    m.row(i) = row;
  }
  if (rows == 0) m.resize(0, 0);
  return m;
}

inline json ids_to_json(const std::vector<std::int64_t>& ids) {
  json out = json::array();
  for (auto id : ids) out.push_back(id);
  return out;
}

inline std::vector<std::int64_t> ids_from_json(const json& j,
                                               const std::string& where) {
  if (!j.is_array())
    throw ParseError("model document: '" + where + "' is not an array");
  std::vector<std::int64_t> ids;
  for (const auto& e : j) {
    if (!e.is_number_integer())
      throw ParseError("model document: '" + where + "' holds a non-integer");
    ids.push_back(e.get<std::int64_t>());
  }
  return ids;
}

inline const json& field(const json& doc, const std::string& key) {
  const auto it = doc.find(key);
  if (it == doc.end())
    throw ParseError("model document: missing field '" + key + "'");
  return *it;
}

}  // namespace iojson

// --- transform (de)serialization ---

inline json column_transform_to_json(const ColumnTransform& t) {
  json j;
  switch (t.kind) {
    case ColumnTransform::Kind::ZScore:
      j["kind"] = "zscore";
      j["mean"] = t.mean;
      j["stddev"] = t.stddev;
      break;
    case ColumnTransform::Kind::Log:
      j["kind"] = "log";
      j["shift"] = t.shift;
      break;
    case ColumnTransform::Kind::BoxCox:
      j["kind"] = "boxcox";
      j["shift"] = t.shift;
      j["lambda"] = t.lambda;
      break;
  }
  return j;
}

inline ColumnTransform column_transform_from_json(const json& j) {
  using iojson::field;
  ColumnTransform t;
  const std::string kind = field(j, "kind").get<std::string>();
  if (kind == "zscore") {
    t.kind = ColumnTransform::Kind::ZScore;
    t.mean = field(j, "mean").get<double>();
    t.stddev = field(j, "stddev").get<double>();
  } else if (kind == "log") {
    t.kind = ColumnTransform::Kind::Log;
    t.shift = field(j, "shift").get<double>();
  } else if (kind == "boxcox") {
    t.kind = ColumnTransform::Kind::BoxCox;
    t.shift = field(j, "shift").get<double>();
    t.lambda = field(j, "lambda").get<double>();
  } else {
    throw ParseError("model document: unknown transform kind '" + kind + "'");
  }
  return t;
}

inline json transforms_to_json(
    const std::optional<InputStandardizer>& inputs,
    const TargetTransform& target) {
  json j;
  if (inputs) {
    json cols = json::array();
    for (const auto& c : inputs->cols)
      cols.push_back(column_transform_to_json(c));
    j["inputs"] = std::move(cols);
  } else {
    j["inputs"] = nullptr;
  }
  json t;
  t["warp"] =
      target.warp ? column_transform_to_json(*target.warp) : json(nullptr);
  t["zscore"] =
      target.zscore ? column_transform_to_json(*target.zscore) : json(nullptr);
  t["fit_rows"] = target.fit_rows;
  t["fit_hash"] = target.fit_hash;
  j["target"] = std::move(t);
  return j;
}

inline void transforms_from_json(const json& j,
                                 std::optional<InputStandardizer>& inputs,
                                 TargetTransform& target) {
  using iojson::field;
  const json& in = field(j, "inputs");
  if (in.is_null()) {
    inputs.reset();
  } else {
    InputStandardizer s;
    for (const auto& c : in) s.cols.push_back(column_transform_from_json(c));
    inputs = std::move(s);
  }
  const json& t = field(j, "target");
  target = TargetTransform{};
  if (!field(t, "warp").is_null())
    target.warp = column_transform_from_json(t["warp"]);
  if (!field(t, "zscore").is_null())
    target.zscore = column_transform_from_json(t["zscore"]);
  target.fit_rows = field(t, "fit_rows").get<std::int64_t>();
  target.fit_hash = field(t, "fit_hash").get<std::uint64_t>();
}

// --- fitted parameter maps ---

inline json params_to_json(const std::vector<std::string>& names,
                           const Eigen::VectorXd& values) {
  json j = json::object();
  for (std::size_t i = 0; i < names.size(); ++i)
    j[names[i]] = values[static_cast<Eigen::Index>(i)];
  return j;
}

inline std::map<std::string, double> params_from_json(const json& j) {
  std::map<std::string, double> out;
  for (const auto& [name, v] : j.items()) {
    if (!v.is_number())
      throw ParseError("model document: parameter '" + name +
                       "' is not a number");
    out[name] = v.get<double>();
  }
  return out;
}

inline json model_params_json(const GPModel& model) {
  return params_to_json(model.param_names(),
                        detail::constrained_values(model));
}

// A fitted pipeline restored from its JSON document: configuration,
// transforms, training tensors, and the per-mode prediction state.
struct LoadedModel {
  PipelineConfig cfg;
  ScaleMode mode = ScaleMode::Exact;
  std::optional<InputStandardizer> input_std;
  TargetTransform target;

  Eigen::MatrixXd X;  // training inputs, transformed space
  Eigen::VectorXd y;  // training targets, transformed space

  GPModel model;  // fitted hyperparameters (prototype for experts)
  PosteriorCache cache;      // exact
  ExpertEnsemble ensemble;   // experts
  Aggregation agg = Aggregation::RobustBCM;
  Eigen::MatrixXd Z;         // svgp
  SvgpCache sv;              // svgp
  KroneckerSystem kron;      // kronecker

  std::vector<std::int64_t> train_ids, val_ids, test_ids;
  std::int64_t data_rows = 0;
  std::uint64_t data_fingerprint = 0;
  double objective = 0.0;
};

inline const char* scale_mode_name(ScaleMode m) {
  switch (m) {
    case ScaleMode::Exact: return "exact";
    case ScaleMode::Experts: return "experts";
    case ScaleMode::Svgp: return "svgp";
    case ScaleMode::Kronecker: return "kronecker";
  }
  return "exact";
}

inline LoadedModel deserialize_model(const json& doc) {
  using iojson::field;
  if (!doc.is_object() ||
      field(doc, "format").get<std::string>() != "gpreg-model")
    throw ParseError("not a model document (missing format marker)");

  LoadedModel m;
  m.cfg = parse_pipeline_config(field(doc, "config").get<std::string>(),
                                field(doc, "seed").get<std::uint64_t>());
  m.mode = m.cfg.scale.mode;

  transforms_from_json(field(doc, "transforms"), m.input_std, m.target);

  const json& td = field(doc, "training_data");
  m.X = iojson::mat_from_json(field(td, "x"), "training_data.x");
  m.y = iojson::vec_from_json(field(td, "y"), "training_data.y");
  if (m.X.rows() != m.y.size())
    throw ParseError("model document: training x/y row mismatch");

  const json& sp = field(doc, "split");
  m.train_ids = iojson::ids_from_json(field(sp, "train_ids"), "train_ids");
  m.val_ids = iojson::ids_from_json(field(sp, "val_ids"), "val_ids");
  m.test_ids = iojson::ids_from_json(field(sp, "test_ids"), "test_ids");

  const json& data = field(doc, "data");
  m.data_rows = field(data, "rows").get<std::int64_t>();
  m.data_fingerprint = field(data, "fingerprint").get<std::uint64_t>();

  const json& tr = field(doc, "train");
  m.objective = field(tr, "objective").get<double>();

  m.model = build_model(m.cfg);
  const json& scale = field(doc, "scale");
  const std::string mode_name = field(scale, "mode").get<std::string>();
  if (mode_name != scale_mode_name(m.mode))
    throw ParseError("model document: scale mode '" + mode_name +
                     "' does not match the embedded config");

  const json& params = field(doc, "model");
  set_params_by_name(m.model, params_from_json(field(params, "params")));

  switch (m.mode) {
    case ScaleMode::Exact: {
      m.cache = fit_cache(m.model, m.X, m.y);
      break;
    }
    case ScaleMode::Experts: {
      m.agg = m.cfg.scale.aggregation == "bcm" ? Aggregation::BCM
                                               : Aggregation::RobustBCM;
      const json& experts = field(scale, "experts");
      for (const auto& e : experts) {
        GPModel em = build_model(m.cfg);
        set_params_by_name(em, params_from_json(field(e, "params")));
        std::vector<Eigen::Index> rows;
        for (auto r : iojson::ids_from_json(field(e, "rows"), "expert rows"))
          rows.push_back(static_cast<Eigen::Index>(r));
        Eigen::MatrixXd Xe(rows.size(), m.X.cols());
        Eigen::VectorXd ye(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          if (rows[i] < 0 || rows[i] >= m.X.rows())
            throw ParseError("model document: expert row out of range");
          Xe.row(static_cast<Eigen::Index>(i)) = m.X.row(rows[i]);
          ye[static_cast<Eigen::Index>(i)] = m.y[rows[i]];
        }
        m.ensemble.caches.push_back(fit_cache(em, Xe, ye));
        m.ensemble.models.push_back(std::move(em));
        m.ensemble.rows.push_back(std::move(rows));
      }
      m.ensemble.failed_chunks =
          field(scale, "failed_chunks").get<std::size_t>();
      if (m.ensemble.models.empty())
        throw ParseError("model document: expert list is empty");
      break;
    }
    case ScaleMode::Svgp: {
      m.Z = iojson::mat_from_json(field(scale, "inducing"), "inducing");
      m.sv = svgp_cache(m.model, m.Z, m.X, m.y);
      break;
    }
    case ScaleMode::Kronecker: {
      const GridSpec grid = infer_grid(m.X);
      Eigen::VectorXd y_grid(grid.total());
      for (Eigen::Index i = 0; i < m.X.rows(); ++i)
        y_grid[grid.flat_of_row[static_cast<std::size_t>(i)]] = m.y[i];
      m.kron = kronecker_fit(m.model, grid, y_grid);
      break;
    }
  }
  return m;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw ParseError("cannot parse '" + path + "' as JSON: " + e.what());
  }
  return doc;
}

inline LoadedModel load_model(const std::string& path) {
  return deserialize_model(read_json_file(path));
}

// Predictions in transformed space, batched to bound the size of the
// cross-covariance blocks.
inline PredictiveDistribution model_predict(const LoadedModel& m,
                                            const Eigen::MatrixXd& Xstar,
                                            Eigen::Index batch = 512) {
  PredictiveDistribution out;
  const Eigen::Index n = Xstar.rows();
  out.mean.resize(n);
  out.latent_variance.resize(n);
  out.observation_variance.resize(n);
  for (Eigen::Index at = 0; at < n || at == 0; at += batch) {
    const Eigen::Index len = std::min(batch, n - at);
    if (len <= 0) break;
    const Eigen::MatrixXd block = Xstar.middleRows(at, len);
    PredictiveDistribution p;
    switch (m.mode) {
      case ScaleMode::Exact:
        p = predict(m.model, m.cache, block);
        break;
      case ScaleMode::Experts:
        p = aggregate_predict(m.ensemble, block, m.agg);
        break;
      case ScaleMode::Svgp:
        p = svgp_predict(m.model, m.sv, block);
        break;
      case ScaleMode::Kronecker:
        p = kronecker_predict(m.kron, block);
        break;
    }
    out.mean.segment(at, len) = p.mean;
    out.latent_variance.segment(at, len) = p.latent_variance;
    out.observation_variance.segment(at, len) = p.observation_variance;
    out.clamped += p.clamped;
    out.prior_fallbacks += p.prior_fallbacks;
  }
  return out;
}

}  // namespace gpreg
