#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gpreg/errors.hpp"
#include "gpreg/gp.hpp"
#include "gpreg/kernel_dsl.hpp"
#include "gpreg/split.hpp"
#include "gpreg/toml.hpp"
#include "gpreg/train.hpp"
#include "gpreg/transform.hpp"

namespace gpreg {

enum class ScaleMode { Exact, Experts, Svgp, Kronecker };

struct DataConfig {
  std::string path;
  std::vector<std::string> features;
  std::string target;
  std::string track;  // "" = no track column
};

struct SplitConfig {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  SplitUnit unit = SplitUnit::ByRow;
  bool unit_given = false;  // default follows the track column otherwise
  std::uint64_t seed = 0;
  bool seed_given = false;  // default follows the run seed otherwise
};

struct TransformsConfig {
  bool standardize_inputs = true;
  std::string target_warp = "none";  // none | log | boxcox
  bool standardize_target = true;
};

struct KernelConfig {
  std::string expression;
  bool ard = true;
  std::map<std::string, double> init;  // constrained values by param name
  std::map<std::string, Bounds> bounds;
  std::map<std::string, LogGaussianPrior> priors;
};

struct MeanConfig {
  MeanSpec::Kind kind = MeanSpec::Kind::Zero;
  bool learnable = true;
  double constant = 0.0;
};

struct ScaleConfig {
  ScaleMode mode = ScaleMode::Exact;
  std::int64_t cap = 10000;            // exact-mode row limit
  std::string chunking = "kmeans";     // experts: kmeans | grid
  std::int64_t chunks = 16;            // experts + kmeans
  double tile = 0.0;                   // experts + grid, standardized units
  std::string expert_mode = "shared";  // shared | independent
  std::string aggregation = "rbcm";    // bcm | rbcm
  std::int64_t shared_subsample = 2000;
  std::int64_t inducing = 500;         // svgp
};

struct EvalConfig {
  std::vector<std::string> metrics{"rmse",    "rmse_p5", "rmse_p95", "r2",
                                   "mll",     "mae",     "bias"};
  std::string report_json = "report.json";
  std::string report_text = "report.txt";
  std::int64_t knn_k = 10;  // baseline command
};

struct PipelineConfig {
  DataConfig data;
  SplitConfig split;
  TransformsConfig transforms;
  KernelConfig kernel;
  MeanConfig mean;
  TrainConfig train;
  bool train_seed_given = false;
  double noise_variance = 0.1;
  bool learn_noise = true;
  ScaleConfig scale;
  EvalConfig eval;

  std::string snapshot;    // raw config text, embedded in artifacts
  std::uint64_t seed = 0;  // run seed (CLI); split/train default to it

  std::uint64_t split_seed() const {
    return split.seed_given ? split.seed : seed;
  }
  std::uint64_t train_seed() const {
    return train_seed_given ? train.seed : seed;
  }
};

namespace detail {

inline void require_keys(const json& section, const std::string& name,
                         const std::set<std::string>& allowed) {
  for (const auto& [key, value] : section.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in [" + name + "]");
  }
}

inline const json* find(const json& section, const std::string& key) {
  const auto it = section.find(key);
  return it == section.end() ? nullptr : &*it;
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string())
    throw ConfigError("'" + where + "' must be a string");
  return v.get<std::string>();
}

inline bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean())
    throw ConfigError("'" + where + "' must be true or false");
  return v.get<bool>();
}

inline double as_double(const json& v, const std::string& where) {
  if (!v.is_number())
    throw ConfigError("'" + where + "' must be a number");
  return v.get<double>();
}

inline std::int64_t as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer())
    throw ConfigError("'" + where + "' must be an integer");
  return v.get<std::int64_t>();
}

inline std::vector<std::string> as_string_list(const json& v,
                                               const std::string& where) {
  if (!v.is_array())
    throw ConfigError("'" + where + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(as_string(e, where));
  return out;
}

inline std::string choice(const json& v, const std::string& where,
                          const std::vector<std::string>& allowed) {
  const std::string s = as_string(v, where);
  if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
    std::string opts;
    for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
    throw ConfigError("'" + where + "' must be one of {" + opts + "}, got '" +
                      s + "'");
  }
  return s;
}

}  // namespace detail

inline PipelineConfig parse_pipeline_config(const std::string& text,
                                            std::uint64_t run_seed) {
  using namespace detail;
  const json doc = parse_toml(text);
  require_keys(doc, "top level",
               {"data", "split", "transforms", "kernel", "mean", "train",
                "scale", "eval"});

  PipelineConfig cfg;
  cfg.snapshot = text;
  cfg.seed = run_seed;

  if (const json* d = find(doc, "data")) {
    require_keys(*d, "data", {"path", "features", "target", "track"});
    if (const json* v = find(*d, "path")) cfg.data.path = as_string(*v, "data.path");
    if (const json* v = find(*d, "features"))
      cfg.data.features = as_string_list(*v, "data.features");
    if (const json* v = find(*d, "target"))
      cfg.data.target = as_string(*v, "data.target");
    if (const json* v = find(*d, "track"))
      cfg.data.track = as_string(*v, "data.track");
  }
  if (cfg.data.features.empty())
    throw ConfigError("[data] features must list at least one column");
  if (cfg.data.target.empty())
    throw ConfigError("[data] target column is required");
  {
    std::set<std::string> seen;
    for (const auto& f : cfg.data.features)
      if (!seen.insert(f).second)
        throw ConfigError("[data] duplicate feature column '" + f + "'");
    if (seen.count(cfg.data.target))
      throw ConfigError("[data] target '" + cfg.data.target +
                        "' also listed as a feature");
    if (!cfg.data.track.empty() && seen.count(cfg.data.track))
      throw ConfigError("[data] track '" + cfg.data.track +
                        "' also listed as a feature");
  }

  cfg.split.unit =
      cfg.data.track.empty() ? SplitUnit::ByRow : SplitUnit::ByTrack;
  if (const json* s = find(doc, "split")) {
    require_keys(*s, "split", {"train", "val", "test", "unit", "seed"});
    if (const json* v = find(*s, "train"))
      cfg.split.train = as_double(*v, "split.train");
    if (const json* v = find(*s, "val"))
      cfg.split.val = as_double(*v, "split.val");
    if (const json* v = find(*s, "test"))
      cfg.split.test = as_double(*v, "split.test");
    if (const json* v = find(*s, "unit")) {
      const std::string u = choice(*v, "split.unit", {"row", "track"});
      cfg.split.unit = u == "row" ? SplitUnit::ByRow : SplitUnit::ByTrack;
      cfg.split.unit_given = true;
    }
    if (const json* v = find(*s, "seed")) {
      cfg.split.seed = static_cast<std::uint64_t>(as_int(*v, "split.seed"));
      cfg.split.seed_given = true;
    }
  }
  if (cfg.split.unit == SplitUnit::ByTrack && cfg.data.track.empty())
    throw ConfigError("split.unit = \"track\" requires a [data] track column");

  if (const json* t = find(doc, "transforms")) {
    require_keys(*t, "transforms",
                 {"standardize_inputs", "target_warp", "standardize_target"});
    if (const json* v = find(*t, "standardize_inputs"))
      cfg.transforms.standardize_inputs =
          as_bool(*v, "transforms.standardize_inputs");
    if (const json* v = find(*t, "target_warp"))
      cfg.transforms.target_warp =
          choice(*v, "transforms.target_warp", {"none", "log", "boxcox"});
    if (const json* v = find(*t, "standardize_target"))
      cfg.transforms.standardize_target =
          as_bool(*v, "transforms.standardize_target");
  }

  if (const json* k = find(doc, "kernel")) {
    require_keys(*k, "kernel",
                 {"expression", "ard", "init", "bounds", "priors"});
    if (const json* v = find(*k, "expression"))
      cfg.kernel.expression = as_string(*v, "kernel.expression");
    if (const json* v = find(*k, "ard"))
      cfg.kernel.ard = as_bool(*v, "kernel.ard");
    if (const json* v = find(*k, "init")) {
      for (const auto& [name, val] : v->items())
        cfg.kernel.init[name] = as_double(val, "kernel.init." + name);
    }
    if (const json* v = find(*k, "bounds")) {
      for (const auto& [name, val] : v->items()) {
        if (!val.is_array() || val.size() != 2)
          throw ConfigError("kernel.bounds." + name +
                            " must be a [lo, hi] pair");
        Bounds b;
        b.lo = as_double(val[0], "kernel.bounds." + name);
        b.hi = as_double(val[1], "kernel.bounds." + name);
        cfg.kernel.bounds[name] = b;
      }
    }
    if (const json* v = find(*k, "priors")) {
      for (const auto& [name, val] : v->items()) {
        if (!val.is_object())
          throw ConfigError("kernel.priors." + name +
                            " must be { mean = ..., stddev = ... }");
        require_keys(val, "kernel.priors." + name, {"mean", "stddev"});
        LogGaussianPrior p;
        if (const json* m = find(val, "mean"))
          p.mean = as_double(*m, "kernel.priors." + name + ".mean");
        if (const json* s = find(val, "stddev"))
          p.stddev = as_double(*s, "kernel.priors." + name + ".stddev");
        cfg.kernel.priors[name] = p;
      }
    }
  }
  if (cfg.kernel.expression.empty())
    throw ConfigError("[kernel] expression is required");

  if (const json* m = find(doc, "mean")) {
    require_keys(*m, "mean", {"kind", "learnable", "constant"});
    if (const json* v = find(*m, "kind")) {
      const std::string kind =
          choice(*v, "mean.kind", {"zero", "constant", "linear"});
      cfg.mean.kind = kind == "zero"       ? MeanSpec::Kind::Zero
                      : kind == "constant" ? MeanSpec::Kind::Constant
                                           : MeanSpec::Kind::Linear;
    }
    if (const json* v = find(*m, "learnable"))
      cfg.mean.learnable = as_bool(*v, "mean.learnable");
    if (const json* v = find(*m, "constant"))
      cfg.mean.constant = as_double(*v, "mean.constant");
  }

  if (const json* t = find(doc, "train")) {
    require_keys(*t, "train",
                 {"learning_rate", "epochs", "restarts", "seed", "grad_tol",
                  "beta1", "beta2", "adam_eps", "noise_variance",
                  "learn_noise"});
    if (const json* v = find(*t, "learning_rate"))
      cfg.train.learning_rate = as_double(*v, "train.learning_rate");
    if (const json* v = find(*t, "epochs"))
      cfg.train.epochs = static_cast<int>(as_int(*v, "train.epochs"));
    if (const json* v = find(*t, "restarts"))
      cfg.train.restarts = static_cast<int>(as_int(*v, "train.restarts"));
    if (const json* v = find(*t, "seed")) {
      cfg.train.seed = static_cast<std::uint64_t>(as_int(*v, "train.seed"));
      cfg.train_seed_given = true;
    }
    if (const json* v = find(*t, "grad_tol"))
      cfg.train.grad_tol = as_double(*v, "train.grad_tol");
    if (const json* v = find(*t, "beta1"))
      cfg.train.beta1 = as_double(*v, "train.beta1");
    if (const json* v = find(*t, "beta2"))
      cfg.train.beta2 = as_double(*v, "train.beta2");
    if (const json* v = find(*t, "adam_eps"))
      cfg.train.adam_eps = as_double(*v, "train.adam_eps");
    if (const json* v = find(*t, "noise_variance"))
      cfg.noise_variance = as_double(*v, "train.noise_variance");
    if (const json* v = find(*t, "learn_noise"))
      cfg.learn_noise = as_bool(*v, "train.learn_noise");
  }
  if (cfg.train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (cfg.train.restarts < 1)
    throw ConfigError("train.restarts must be >= 1");
  if (!(cfg.train.learning_rate > 0.0))
    throw ConfigError("train.learning_rate must be positive");
  if (!(cfg.noise_variance >= 0.0))
    throw ConfigError("train.noise_variance must be >= 0");

  if (const json* s = find(doc, "scale")) {
    require_keys(*s, "scale",
                 {"mode", "cap", "chunking", "chunks", "tile", "expert_mode",
                  "aggregation", "shared_subsample", "inducing"});
    if (const json* v = find(*s, "mode")) {
      const std::string m =
          choice(*v, "scale.mode", {"exact", "experts", "svgp", "kronecker"});
      cfg.scale.mode = m == "exact"     ? ScaleMode::Exact
                       : m == "experts" ? ScaleMode::Experts
                       : m == "svgp"    ? ScaleMode::Svgp
                                        : ScaleMode::Kronecker;
    }
    if (const json* v = find(*s, "cap"))
      cfg.scale.cap = as_int(*v, "scale.cap");
    if (const json* v = find(*s, "chunking"))
      cfg.scale.chunking = choice(*v, "scale.chunking", {"kmeans", "grid"});
    if (const json* v = find(*s, "chunks"))
      cfg.scale.chunks = as_int(*v, "scale.chunks");
    if (const json* v = find(*s, "tile"))
      cfg.scale.tile = as_double(*v, "scale.tile");
    if (const json* v = find(*s, "expert_mode"))
      cfg.scale.expert_mode =
          choice(*v, "scale.expert_mode", {"shared", "independent"});
    if (const json* v = find(*s, "aggregation"))
      cfg.scale.aggregation =
          choice(*v, "scale.aggregation", {"bcm", "rbcm"});
    if (const json* v = find(*s, "shared_subsample"))
      cfg.scale.shared_subsample = as_int(*v, "scale.shared_subsample");
    if (const json* v = find(*s, "inducing"))
      cfg.scale.inducing = as_int(*v, "scale.inducing");
  }
  if (cfg.scale.cap < 1) throw ConfigError("scale.cap must be >= 1");
  if (cfg.scale.mode == ScaleMode::Experts) {
    if (cfg.scale.chunking == "kmeans" && cfg.scale.chunks < 1)
      throw ConfigError("scale.chunks must be >= 1");
    if (cfg.scale.chunking == "grid" && !(cfg.scale.tile > 0.0))
      throw ConfigError(
          "scale.tile must be a positive tile size for grid chunking");
    if (cfg.scale.shared_subsample < 1)
      throw ConfigError("scale.shared_subsample must be >= 1");
  }
  if (cfg.scale.mode == ScaleMode::Svgp && cfg.scale.inducing < 1)
    throw ConfigError("scale.inducing must be >= 1");

  if (const json* e = find(doc, "eval")) {
    require_keys(*e, "eval",
                 {"metrics", "report_json", "report_text", "knn_k"});
    if (const json* v = find(*e, "metrics")) {
      cfg.eval.metrics = as_string_list(*v, "eval.metrics");
      const std::set<std::string> known{"rmse", "rmse_p5", "rmse_p95", "r2",
                                        "mll",  "mae",     "bias",
                                        "bic",  "coverage"};
      for (const auto& m : cfg.eval.metrics)
        if (!known.count(m))
          throw ConfigError("unknown metric '" + m + "' in eval.metrics");
    }
    if (const json* v = find(*e, "report_json"))
      cfg.eval.report_json = as_string(*v, "eval.report_json");
    if (const json* v = find(*e, "report_text"))
      cfg.eval.report_text = as_string(*v, "eval.report_text");
    if (const json* v = find(*e, "knn_k"))
      cfg.eval.knn_k = as_int(*v, "eval.knn_k");
  }
  if (cfg.eval.knn_k < 1) throw ConfigError("eval.knn_k must be >= 1");

  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path,
                                           std::uint64_t run_seed) {
  return parse_pipeline_config(read_text_file(path), run_seed);
}

namespace detail {

// address a kernel or noise parameter by its reported name
template <typename F>
inline void with_param_named(GPModel& model, const std::string& name, F&& f) {
  const auto names = model.param_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end())
    throw UnknownParam("no parameter named '" + name + "'");
  const Eigen::Index i = it - names.begin();
  const Eigen::Index n_kernel = model.kernel.param_count();
  if (i < n_kernel) {
    Eigen::Index j = 0;
    model.kernel.visit_params([&](HyperParam& p) {
      if (j++ == i) f(p);
    });
  } else if (name == "noise.variance") {
    f(model.noise);
  } else {
    throw ConfigError("parameter '" + name +
                      "' is a mean coefficient; bounds and priors only "
                      "apply to positive kernel/noise parameters");
  }
}

}  // namespace detail

// Model skeleton from the config: parsed kernel bound to the feature order,
// mean and noise settings, bounds and priors attached. Initial values are
// applied later, after the data-driven heuristics.
inline GPModel build_model(const PipelineConfig& cfg) {
  GPModel model;
  model.kernel = parse_kernel_expr(cfg.kernel.expression);
  model.kernel.for_each_leaf([&](BaseKernel& k) { k.ard = cfg.kernel.ard; });
  model.kernel.bind(cfg.data.features);
  model.mean.kind = cfg.mean.kind;
  model.mean.learnable = cfg.mean.learnable;
  model.mean.constant = cfg.mean.constant;
  model.mean.ensure_dims(static_cast<Eigen::Index>(cfg.data.features.size()));
  model.noise = HyperParam("noise.variance", cfg.noise_variance);
  model.noise_learnable = cfg.learn_noise;
  model.exact_cap = cfg.scale.cap;
  for (const auto& [name, b] : cfg.kernel.bounds)
    detail::with_param_named(model, name,
                             [&](HyperParam& p) { p.set_bounds(b); });
  for (const auto& [name, p] : cfg.kernel.priors)
    detail::with_param_named(model, name,
                             [&](HyperParam& h) { h.set_prior(p); });
  return model;
}

}  // namespace gpreg
