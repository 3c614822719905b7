#pragma once

// Command-line front end: fit, predict, impute, bench, oracle-check.
// Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.

#include "vssgp/baselines.hpp"
#include "vssgp/imputation.hpp"
#include "vssgp/io.hpp"
#include "vssgp/oracles.hpp"
#include "vssgp/predict.hpp"
#include "vssgp/training.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace vssgp {

/// Model and optimizer settings shared by fit, impute and bench.
struct FitSettings {
  Index num_features = 10;
  std::string components = "1:0";
  std::string bound = "optimal";
  std::string optimizer = "lbfgs";
  Index iters = 200;
  Index minibatch = 0;
  std::uint64_t seed = 0;
  double tau = 10.0;
  bool variational_phases = false;
  std::string baseline = "none";
  bool standardize = false;
  double learning_rate = 1e-3;

  std::vector<std::pair<std::string, std::string>> echo() const {
    return {{"K", std::to_string(num_features)},
            {"components", components},
            {"bound", bound},
            {"optimizer", optimizer},
            {"iters", std::to_string(iters)},
            {"minibatch", std::to_string(minibatch)},
            {"seed", std::to_string(seed)},
            {"tau", detail::format_double(tau)},
            {"phases", variational_phases ? "variational" : "fixed"},
            {"baseline", baseline},
            {"standardize", standardize ? "1" : "0"}};
  }
};

/// "l:p[:w],..." -> one component per entry, the same lengthscale l and
/// period p in every input dimension (p = 0 means an infinite period) and
/// weight w (default 1).
inline KernelSpec parse_components(const std::string& text, Index input_dim) {
  KernelSpec spec;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::vector<double> parts;
    std::stringstream is(item);
    std::string field;
    while (std::getline(is, field, ':')) {
      const auto f = detail::trim(field);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v))
        throw ValidationError("--components: bad number '" + std::string(f) + "' in '" + item + "'");
      parts.push_back(v);
    }
    if (parts.size() < 2 || parts.size() > 3)
      throw ValidationError("--components: expected l:p or l:p:w, got '" + item + "'");
    if (parts[1] < 0.0) throw ValidationError("--components: period must be >= 0 (0 means infinite)");
    SMComponent c;
    c.weight = parts.size() == 3 ? parts[2] : 1.0;
    c.lengthscales = Vector::Constant(input_dim, parts[0]);
    c.inverse_periods = Vector::Constant(input_dim, parts[1] > 0.0 ? 1.0 / parts[1] : 0.0);
    spec.components.push_back(std::move(c));
  }
  spec.validate();
  return spec;
}

inline ModelFile fit_model(const Dataset& raw, const FitSettings& fs) {
  ModelFile model;
  Dataset data = raw;
  if (fs.standardize) {
    model.metadata.standardization = Standardization::from_data(raw);
    data = model.metadata.standardization->apply(raw);
  }
  const KernelSpec spec = parse_components(fs.components, data.input_dim());

  FitConfig config;
  config.max_iters = fs.iters;
  config.seed = fs.seed;
  config.sgd_step = fs.learning_rate;
  const BoundType bt = bound_type_from_string(fs.bound);
  if (bt == BoundType::Stochastic) {
    const Index batch = fs.minibatch > 0 ? fs.minibatch : std::min<Index>(data.size(), 100);
    config.bound = BoundKind::stochastic(batch, fs.seed);
  } else {
    config.bound = bt == BoundType::Factorised ? BoundKind::factorised() : BoundKind::optimal();
  }
  if (fs.optimizer == "lbfgs") config.optimizer = OptimizerKind::QuasiNewton;
  else if (fs.optimizer == "rmsprop") config.optimizer = OptimizerKind::AdaptiveSGD;
  else throw ValidationError("--optimizer must be lbfgs or rmsprop");
  if ((bt == BoundType::Stochastic) != (config.optimizer == OptimizerKind::AdaptiveSGD))
    throw ValidationError("the stochastic bound pairs with rmsprop; optimal and factorised pair with lbfgs");

  InitOptions init;
  init.noise_precision = fs.tau;
  init.variational_phases = fs.variational_phases;

  FitResult res;
  if (fs.baseline == "none") {
    res = fit(data, init_state(data, spec, fs.num_features, fs.seed, init), spec, config);
    model.metadata.method = "vssgp";
  } else if (fs.baseline == "ssgp") {
    res = fit_ssgp(data, spec, fs.num_features, config, init);
    model.metadata.method = "ssgp";
  } else if (fs.baseline == "rp") {
    res = fit_random_projections(data, spec, fs.num_features, config, fs.iters > 0, init);
    model.metadata.method = "rp";
  } else {
    throw ValidationError("--baseline must be none, ssgp or rp");
  }
  model.spec = std::move(res.spec);
  model.state = std::move(res.state);
  model.solve = std::move(res.solve);
  model.metadata.seed = fs.seed;
  model.metadata.iterations = static_cast<Index>(res.trace.entries.size());
  model.metadata.bound_kind = fs.baseline == "none" ? to_string(config.bound.type) : "optimal";
  return model;
}

struct Prediction {
  Matrix mean;    // N x D
  Matrix stddev;  // N x D
};

/// Predictions in the units of the original data.
inline Prediction predict_model(const ModelFile& model, const Matrix& inputs) {
  const auto& z = model.metadata.standardization;
  const Matrix x = z ? z->scale_inputs(inputs) : inputs;
  const auto preds = predict_batch(x, model.state, model.spec, model.solve ? &*model.solve : nullptr);
  Prediction p{stack_means(preds), stack_stddevs(preds)};
  if (z) {
    p.mean = p.mean.array().rowwise() * z->y_scale.array();
    p.stddev = p.stddev.array().rowwise() * z->y_scale.array();
  }
  return p;
}

/// Fit on the training rows of `task`, predict every row and score.
inline RunReport run_imputation(const ImputationTask& task, const FitSettings& fs, std::optional<double> sample_rate,
                                bool deterministic) {
  const auto start = std::chrono::steady_clock::now();
  const ModelFile model = fit_model(task.train_data(), fs);
  const Prediction p = predict_model(model, task.series.inputs);
  RunReport r;
  r.method = model.metadata.method;
  r.train_rmse = rmse_rows(p.mean, task.series.outputs, task.train_indices());
  r.test_rmse = rmse_rows(p.mean, task.series.outputs, task.test_indices());
  if (sample_rate) {
    if (task.series.output_dim() != 1) throw ValidationError("--sample-rate needs a single output column");
    const Vector truth = task.series.outputs.col(0);
    const Vector pred = p.mean.col(0);
    Vector composite = truth;
    for (Index i : task.test_indices()) composite(i) = pred(i);
    r.stft_rmse = std::make_pair(stft_rmse(pred, truth, *sample_rate), stft_rmse(composite, truth, *sample_rate));
  }
  r.seconds = deterministic ? 0.0
                            : std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.config = fs.echo();
  return r;
}

namespace detail {

inline void add_fit_options(CLI::App* cmd, FitSettings& fs) {
  cmd->add_option("--num-features,-K", fs.num_features, "Features per mixture component")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--components", fs.components, "Mixture components as l:p[:w],... (p = 0 for an infinite period)");
  cmd->add_option("--bound", fs.bound, "Objective")->check(CLI::IsMember({"optimal", "factorised", "stochastic"}));
  cmd->add_option("--optimizer", fs.optimizer, "Optimizer")->check(CLI::IsMember({"lbfgs", "rmsprop"}));
  cmd->add_option("--iters", fs.iters, "Optimizer iterations")->check(CLI::NonNegativeNumber);
  cmd->add_option("--minibatch", fs.minibatch, "Mini-batch size for the stochastic bound")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--learning-rate", fs.learning_rate, "RMSProp step size")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", fs.seed, "Seed for every random draw");
  cmd->add_option("--tau", fs.tau, "Initial noise precision")->check(CLI::PositiveNumber);
  auto* fixed = cmd->add_flag("--fixed-phases", "Hold phases fixed (default)");
  auto* var = cmd->add_flag("--variational-phases", fs.variational_phases, "Uniform posterior over phases");
  fixed->excludes(var);
  cmd->add_option("--baseline", fs.baseline, "Comparison method")->check(CLI::IsMember({"none", "ssgp", "rp"}));
  cmd->add_flag("--standardize", fs.standardize, "Divide inputs and outputs by their standard deviations");
}

inline std::vector<Index> parse_index_list(const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto f = trim(item);
    Index v = 0;
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || v < 1)
      throw ValidationError("bad positive integer '" + std::string(f) + "' in list '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("empty list");
  return out;
}

/// Output stream that is either a file or the given fallback.
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : fallback_(fallback) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw IoError("cannot write " + path);
    }
  }
  std::ostream& get() { return file_ ? *file_ : fallback_; }

 private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream& fallback_;
};

inline void print_check(std::ostream& out, const std::string& name, const oracle::CheckResult& r) {
  out << (r.passed ? "PASS " : "FAIL ") << name << ": " << r.detail << '\n';
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Variational sparse spectrum GP regression"};
  app.require_subcommand(1);

  FitSettings fs;
  std::string data_path, model_path, out_path, report_path, k_values = "5,10,20,40,80";
  Index segments = 5, seg_length = 10, n_seeds = 5, synthetic_n = 200;
  double sample_rate = 0.0, noise_sd = 0.1;
  bool deterministic = false;
  Index oracle_trials = 20, oracle_draws = 4;
  std::size_t oracle_samples = 100000;

  auto* fit_cmd = app.add_subcommand("fit", "Train a model and write it as JSON");
  fit_cmd->add_option("--data", data_path, "Training CSV (x1..xQ, y1..yD)")->required();
  fit_cmd->add_option("--model-out", model_path, "Model file to write")->required();
  detail::add_fit_options(fit_cmd, fs);

  auto* predict_cmd = app.add_subcommand("predict", "Predictive mean and standard deviation");
  predict_cmd->add_option("--model", model_path, "Model file")->required();
  predict_cmd->add_option("--data", data_path, "CSV with x1..xQ (y columns are ignored)")->required();
  predict_cmd->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* impute_cmd = app.add_subcommand("impute", "Remove segments, fit on the rest and score the gaps");
  impute_cmd->add_option("--data", data_path, "Series CSV")->required();
  impute_cmd->add_option("--segments", segments, "Number of removed segments")->check(CLI::NonNegativeNumber);
  impute_cmd->add_option("--seg-length", seg_length, "Length of each segment")->check(CLI::PositiveNumber);
  impute_cmd->add_option("--report-out", report_path, "Report CSV (default stdout)");
  impute_cmd->add_option("--sample-rate", sample_rate, "Sample rate in Hz; enables STFT RMSE")
      ->check(CLI::PositiveNumber);
  impute_cmd->add_flag("--deterministic", deterministic, "Report zero wall-clock time");
  detail::add_fit_options(impute_cmd, fs);

  auto* bench_cmd = app.add_subcommand("bench", "Sweep the number of features on an imputation task");
  bench_cmd->add_option("--data", data_path, "Series CSV (default: synthetic noisy sinusoid)");
  bench_cmd->add_option("--k-values", k_values, "Comma-separated values of K");
  bench_cmd->add_option("--seeds", n_seeds, "Number of seeds, starting at --seed")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--segments", segments, "Number of removed segments")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--seg-length", seg_length, "Length of each segment")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--n", synthetic_n, "Synthetic series length")->check(CLI::Range(Index{2}, Index{1000000}));
  bench_cmd->add_option("--noise", noise_sd, "Synthetic noise standard deviation")->check(CLI::NonNegativeNumber);
  bench_cmd->add_option("--out", out_path, "Report CSV (default stdout)");
  bench_cmd->add_flag("--deterministic", deterministic, "Report zero wall-clock time");
  detail::add_fit_options(bench_cmd, fs);

  auto* oracle_cmd = app.add_subcommand("oracle-check", "Monte Carlo and finite-difference self checks");
  oracle_cmd->add_option("--trials", oracle_trials, "Random parameter draws per identity")
      ->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--samples", oracle_samples, "Monte Carlo samples")->check(CLI::Range(2, 100000000));
  oracle_cmd->add_option("--draws", oracle_draws, "Random instances per gradient check")
      ->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--seed", fs.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*fit_cmd) {
      const Dataset data = load_csv(data_path);
      const ModelFile model = fit_model(data, fs);
      save_model(model_path, model);
      out << "fitted " << model.metadata.method << " on " << data.size() << " rows in "
          << model.metadata.iterations << " iterations\n";
    } else if (*predict_cmd) {
      const ModelFile model = load_model(model_path);
      const Matrix x = load_csv_inputs(data_path);
      if (x.cols() != model.state.input_dim())
        throw ValidationError("predict: data has " + std::to_string(x.cols()) + " inputs, model expects " +
                              std::to_string(model.state.input_dim()));
      const Prediction p = predict_model(model, x);
      detail::Sink sink(out_path, out);
      write_csv_columns(sink.get(), {{"x", &x}, {"mean_y", &p.mean}, {"std_y", &p.stddev}});
    } else if (*impute_cmd) {
      const Dataset data = load_csv(data_path);
      const ImputationTask task = make_imputation_task(data, segments, seg_length, fs.seed);
      const RunReport r = run_imputation(task, fs, sample_rate > 0.0 ? std::optional(sample_rate) : std::nullopt,
                                         deterministic);
      detail::Sink sink(report_path, out);
      write_report_header(sink.get());
      write_report_row(sink.get(), r);
    } else if (*bench_cmd) {
      const std::vector<Index> ks = detail::parse_index_list(k_values);
      std::optional<Dataset> file_data;
      if (!data_path.empty()) file_data = load_csv(data_path);
      detail::Sink sink(out_path, out);
      write_report_header(sink.get());
      const std::uint64_t base = fs.seed;
      for (Index k : ks) {
        for (Index i = 0; i < n_seeds; ++i) {
          FitSettings run = fs;
          run.num_features = k;
          run.seed = base + static_cast<std::uint64_t>(i);
          const Dataset data = file_data ? *file_data : synthetic_sinusoid(synthetic_n, noise_sd, run.seed);
          const ImputationTask task = make_imputation_task(data, segments, seg_length, run.seed);
          write_report_row(sink.get(), run_imputation(task, run, std::nullopt, deterministic));
        }
      }
    } else if (*oracle_cmd) {
      bool ok = true;
      auto report = [&](const std::string& name, const oracle::CheckResult& r) {
        detail::print_check(out, name, r);
        ok = ok && r.passed;
      };
      report("gaussian identities (Monte Carlo)", oracle::gaussian_identity_check(oracle_trials, oracle_samples, fs.seed));
      report("uniform phase identity (quadrature)", oracle::uniform_phase_check(oracle_trials, fs.seed));
      report("phase average (quadrature)", oracle::phase_average_check(oracle_trials, fs.seed));
      report("kernel convergence (Monte Carlo)", oracle::kernel_convergence_check(oracle_samples, fs.seed));
      report("optimal bound gradient (finite differences)",
             oracle::gradient_check(BoundType::OptimalCoefficients, oracle_draws, fs.seed));
      report("factorised bound gradient (finite differences)",
             oracle::gradient_check(BoundType::Factorised, oracle_draws, fs.seed));
      return ok ? 0 : 2;
    }
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace vssgp
