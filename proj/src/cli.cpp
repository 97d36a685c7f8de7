#include "dblogit/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <set>

#include "dblogit/dml.hpp"
#include "dblogit/hd.hpp"
#include "dblogit/simgen.hpp"

namespace dblogit {

namespace {

using nlohmann::json;

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct OutputTarget {
  std::ofstream file;
  std::ostream* stream = nullptr;
  std::ostream& get() { return *stream; }
  void open(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      stream = &fallback;
      return;
    }
    file.open(path);
    if (!file) fail("cannot open output file '" + path + "'");
    stream = &file;
  }
};

struct DataFlags {
  std::string input, y_col, a_col;
  std::vector<std::string> x_cols = {"rest"};
  bool expand_basis = false;
  double downsample_prevalence = 0.0;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
  cmd->add_option("--input", flags.input, "input CSV file (header row required)")
      ->required();
  cmd->add_option("--y", flags.y_col, "response column name")->required();
  cmd->add_option("--a", flags.a_col, "exposure column name")->required();
  cmd->add_option("--x", flags.x_cols,
                  "covariate column names, or 'rest' for all remaining columns");
  cmd->add_flag("--expand-basis", flags.expand_basis,
                "expand covariates: originals, pairwise products, natural-spline "
                "columns for continuous variables (>= 10 distinct values)");
  cmd->add_option("--downsample-prevalence", flags.downsample_prevalence,
                  "downsample controls to this case prevalence before fitting");
}

Dataset load_dataset(const DataFlags& flags, std::uint64_t seed) {
  ColumnSchema schema;
  schema.y_col = flags.y_col;
  schema.a_col = flags.a_col;
  if (flags.x_cols.size() == 1 && flags.x_cols[0] == "rest") {
    schema.x_rest = true;
  } else {
    schema.x_cols = flags.x_cols;
  }
  Dataset d = read_delimited(flags.input, schema);
  if (flags.expand_basis) {
    std::vector<bool> continuous(static_cast<std::size_t>(d.p()));
    for (Eigen::Index j = 0; j < d.p(); ++j) {
      std::set<double> distinct(d.x.col(j).data(), d.x.col(j).data() + d.n());
      continuous[static_cast<std::size_t>(j)] = distinct.size() >= 10;
    }
    d.x = basis_expand(d.x, continuous);
  }
  if (flags.downsample_prevalence > 0.0)
    d = downsample_controls(d, flags.downsample_prevalence, mix_seed(seed, 0xD5));
  d.validate();
  return d;
}

json inference_json(const InferenceResult& inf) {
  return json{{"beta_hat", inf.beta_hat},
              {"se", inf.se},
              {"sigma_hat", inf.sigma_hat},
              {"i_bar", inf.i_bar},
              {"ci_low", inf.ci_low},
              {"ci_high", inf.ci_high},
              {"normal_ci_low", inf.normal_ci_low},
              {"normal_ci_high", inf.normal_ci_high},
              {"p_value", inf.p_value},
              {"bootstrap_draws", inf.bootstrap_draws},
              {"degenerate", inf.degenerate}};
}

void emit_fit_record(const json& record, const std::string& format,
                     std::ostream& os) {
  if (format == "json-record") {
    os << record.dump() << "\n";
    return;
  }
  const json& inf = record.at("inference");
  if (format == "csv-records") {
    os << "beta_hat,se,ci_low,ci_high,normal_ci_low,normal_ci_high,p_value,"
          "bootstrap_draws\n";
    os << csv_double(inf["beta_hat"]) << "," << csv_double(inf["se"]) << ","
       << csv_double(inf["ci_low"]) << "," << csv_double(inf["ci_high"]) << ","
       << csv_double(inf["normal_ci_low"]) << ","
       << csv_double(inf["normal_ci_high"]) << ","
       << csv_double(inf["p_value"]) << "," << inf["bootstrap_draws"] << "\n";
    return;
  }
  // table
  os << "command        " << record["command"].get<std::string>() << "\n";
  os << "beta_hat       " << inf["beta_hat"].get<double>() << "\n";
  os << "se             " << inf["se"].get<double>() << "\n";
  os << "ci (bootstrap) [" << inf["ci_low"].get<double>() << ", "
     << inf["ci_high"].get<double>() << "]\n";
  os << "ci (normal)    [" << inf["normal_ci_low"].get<double>() << ", "
     << inf["normal_ci_high"].get<double>() << "]\n";
  os << "p_value        " << inf["p_value"].get<double>() << "\n";
}

LearnerSpec base_spec(LearnerKind kind, Objective obj, double dropout) {
  LearnerSpec spec;
  spec.kind = kind;
  spec.objective = obj;
  spec.dropout_prob = dropout;
  return spec;
}

void apply_hyper(LearnerSpec& spec, const std::vector<std::string>& hyper) {
  for (const auto& kv : hyper) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      fail("bad --hyper '" + kv + "', expected key=value");
    const std::string key = kv.substr(0, eq);
    static const std::set<std::string> keys_by_kind[] = {
        {"rounds", "depth", "shrinkage", "min_leaf"},
        {"trees", "min_leaf", "mtry", "bootstrap"},
        {"lambda", "cv_folds"},
        {"k", "cv_folds"},
    };
    if (keys_by_kind[static_cast<int>(spec.kind)].count(key))
      spec.hyper[key] = std::stod(kv.substr(eq + 1));
  }
}

struct DmlFlags {
  std::string learner = "boosted-trees";
  int k_outer = 5, k_inner = 5;
  std::string r_variant = "difference";
  double dropout = 0.0;
  std::vector<std::string> hyper;
};

void add_dml_flags(CLI::App* cmd, DmlFlags& flags) {
  cmd->add_option("--learner", flags.learner,
                  "boosted-trees | random-forest | penalized-linear | k-nearest | best");
  cmd->add_option("--k-outer", flags.k_outer, "outer cross-fitting folds");
  cmd->add_option("--k-inner", flags.k_inner, "inner refitting folds");
  cmd->add_option("--r-variant", flags.r_variant, "difference | ratio");
  cmd->add_option("--dropout", flags.dropout,
                  "training-matrix dropout probability for the learners");
  cmd->add_option("--hyper", flags.hyper,
                  "learner hyperparameter key=value (repeatable)");
}

DmlConfig make_dml_config(const DmlFlags& flags, const Dataset& d,
                          std::uint64_t seed, int bootstrap_draws, int threads,
                          std::vector<std::string>* chosen) {
  DmlConfig cfg;
  cfg.k_outer = flags.k_outer;
  cfg.k_inner = flags.k_inner;
  cfg.r_variant = parse_r_variant(flags.r_variant);
  cfg.seed = seed;
  cfg.bootstrap_draws = bootstrap_draws;
  cfg.threads = threads;

  if (flags.learner == "best") {
    // Per nuisance component, pick the kind with the best cross-validated
    // sum-squared loss on its actual task; the pseudo-outcome learner
    // follows the exposure-regression choice.
    const std::vector<LearnerKind> kinds = {
        LearnerKind::kBoostedTrees, LearnerKind::kRandomForest,
        LearnerKind::kPenalizedLinear, LearnerKind::kKNearest};
    auto candidates = [&](Objective obj) {
      std::vector<LearnerSpec> specs;
      for (const auto kind : kinds) {
        LearnerSpec s = base_spec(kind, obj, flags.dropout);
        s.seed = mix_seed(seed, 0xBE);
        apply_hyper(s, flags.hyper);
        specs.push_back(s);
      }
      return specs;
    };
    const FoldAssignment folds = make_folds(d.n(), 5, mix_seed(seed, 0xBF));

    std::vector<Eigen::Index> controls;
    for (Eigen::Index i = 0; i < d.n(); ++i)
      if (d.y[i] == 0.0) controls.push_back(i);
    Eigen::MatrixXd cx(static_cast<Eigen::Index>(controls.size()), d.p());
    Eigen::VectorXd ca(static_cast<Eigen::Index>(controls.size()));
    for (std::size_t t = 0; t < controls.size(); ++t) {
      cx.row(static_cast<Eigen::Index>(t)) = d.x.row(controls[t]);
      ca[static_cast<Eigen::Index>(t)] = d.a[controls[t]];
    }
    const FoldAssignment cfolds =
        make_folds(cx.rows(), 5, mix_seed(seed, 0xC0));
    cfg.learner_m = select_best(candidates(Objective::kSquared), cx, ca, cfolds);

    Eigen::MatrixXd ax(d.n(), d.p() + 1);
    ax.col(0) = d.a;
    ax.rightCols(d.p()) = d.x;
    cfg.learner_full =
        select_best(candidates(Objective::kLogistic), ax, d.y, folds);
    cfg.learner_a = select_best(candidates(Objective::kSquared), d.x, d.a, folds);
    cfg.learner_t = cfg.learner_a;
    cfg.learner_t.objective = Objective::kSquared;
  } else {
    const LearnerKind kind = parse_learner_kind(flags.learner);
    cfg.learner_m = base_spec(kind, Objective::kSquared, flags.dropout);
    cfg.learner_full = base_spec(kind, Objective::kLogistic, flags.dropout);
    cfg.learner_a = base_spec(kind, Objective::kSquared, flags.dropout);
    cfg.learner_t = base_spec(kind, Objective::kSquared, flags.dropout);
    apply_hyper(cfg.learner_m, flags.hyper);
    apply_hyper(cfg.learner_full, flags.hyper);
    apply_hyper(cfg.learner_a, flags.hyper);
    apply_hyper(cfg.learner_t, flags.hyper);
  }
  if (chosen) {
    chosen->push_back(learner_kind_name(cfg.learner_m.kind));
    chosen->push_back(learner_kind_name(cfg.learner_full.kind));
    chosen->push_back(learner_kind_name(cfg.learner_a.kind));
    chosen->push_back(learner_kind_name(cfg.learner_t.kind));
  }
  return cfg;
}

struct SimulateFlags {
  std::string config = "hd-i";
  Eigen::Index n = 1000;
  Eigen::Index p = 0;  // 0 = config default
  int reps = 300;
  std::string estimator = "hd";
  std::string plot_data_path;
};

void emit_sim_records(const SimReport& report, const GeneratorSpec& spec,
                      const std::string& estimator, const std::string& format,
                      std::ostream& os) {
  if (format == "json-record") {
    for (const auto& rec : report.records) {
      json j{{"type", "replicate"}, {"replicate", rec.replicate}, {"ok", rec.ok}};
      if (rec.ok) {
        j["beta_hat"] = rec.beta_hat;
        j["se"] = rec.se;
        j["ci_low"] = rec.ci_low;
        j["ci_high"] = rec.ci_high;
        j["p_value"] = rec.p_value;
      } else {
        j["error"] = rec.error;
      }
      os << j.dump() << "\n";
    }
    const json summary{{"type", "summary"},
                       {"config", sim_config_name(spec.config)},
                       {"estimator", estimator},
                       {"n", spec.n},
                       {"p", spec.p},
                       {"seed", spec.seed},
                       {"replicates", static_cast<int>(report.records.size())},
                       {"failures", report.failures},
                       {"true_beta", report.true_beta},
                       {"mse", report.mse},
                       {"bias", report.bias},
                       {"cp", report.cp}};
    os << summary.dump() << "\n";
    return;
  }
  if (format == "csv-records") {
    os << "replicate,ok,beta_hat,se,ci_low,ci_high,p_value\n";
    for (const auto& rec : report.records) {
      os << rec.replicate << "," << (rec.ok ? 1 : 0);
      if (rec.ok) {
        os << "," << csv_double(rec.beta_hat) << "," << csv_double(rec.se) << ","
           << csv_double(rec.ci_low) << "," << csv_double(rec.ci_high) << ","
           << csv_double(rec.p_value);
      } else {
        os << ",,,,,";
      }
      os << "\n";
    }
    return;
  }
  os << "config      " << sim_config_name(spec.config) << "\n";
  os << "estimator   " << estimator << "\n";
  os << "n           " << spec.n << "\n";
  os << "replicates  " << report.records.size() << " (" << report.failures
     << " failed)\n";
  os << "true beta   " << report.true_beta << "\n";
  os << "mse         " << report.mse << "\n";
  os << "bias        " << report.bias << "\n";
  os << "cp          " << report.cp << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"double/debiased inference for the exposure coefficient in a "
               "logistic partially linear model"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config-file", "", "read flags from a key=value file");

  std::uint64_t seed = 1;
  int threads = 1;
  int bootstrap_draws = 500;
  std::string output_path, format = "json-record";
  app.add_option("--seed", seed, "RNG seed")->capture_default_str();
  app.add_option("--threads", threads, "worker threads for replicates/folds");
  app.add_option("--bootstrap-draws", bootstrap_draws,
                 "multiplier bootstrap draws (0 disables)");
  app.add_option("--output", output_path, "result record file (default stdout)");
  app.add_option("--format", format, "json-record | table | csv-records")
      ->check(CLI::IsMember({"json-record", "table", "csv-records"}));

  DataFlags hd_data, dml_data;
  int hd_cv_folds = 5;
  std::string hd_link = "identity";
  CLI::App* fit_hd_cmd = app.add_subcommand("fit-hd", "high-dimensional sparse fit");
  add_data_flags(fit_hd_cmd, hd_data);
  fit_hd_cmd->add_option("--cv-folds", hd_cv_folds, "folds for lambda selection");
  fit_hd_cmd->add_option("--link", hd_link, "link for m(x): identity | expit")
      ->check(CLI::IsMember({"identity", "expit"}));

  DmlFlags dml_flags;
  CLI::App* fit_dml_cmd =
      app.add_subcommand("fit-dml", "cross-fitted machine-learning fit");
  add_data_flags(fit_dml_cmd, dml_data);
  add_dml_flags(fit_dml_cmd, dml_flags);

  SimulateFlags sim;
  DmlFlags sim_dml_flags;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "Monte Carlo study");
  sim_cmd->add_option("--config", sim.config, "hd-i | hd-ii | hd-iii | ml");
  sim_cmd->add_option("--n", sim.n, "sample size per replicate");
  sim_cmd->add_option("--p", sim.p, "covariate dimension (0 = config default)");
  sim_cmd->add_option("--reps", sim.reps, "number of replicates");
  sim_cmd->add_option("--estimator", sim.estimator, "hd | dml | oracle")
      ->check(CLI::IsMember({"hd", "dml", "oracle"}));
  sim_cmd->add_option("--emit-plot-data", sim.plot_data_path,
                      "write replicate,beta_hat,ci_low,ci_high tuples to this file");
  add_dml_flags(sim_cmd, sim_dml_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    OutputTarget target;
    target.open(output_path, out);

    if (fit_hd_cmd->parsed()) {
      const Dataset d = load_dataset(hd_data, seed);
      HdConfig cfg;
      cfg.cv_folds = hd_cv_folds;
      cfg.link = hd_link == "expit" ? Link::kExpit : Link::kIdentity;
      cfg.seed = seed;
      cfg.bootstrap_draws = bootstrap_draws;
      const HdFit fit = fit_hd(d, cfg);
      json record{{"command", "fit-hd"},
                  {"n", d.n()},
                  {"p", d.p()},
                  {"seed", seed},
                  {"inference", inference_json(fit.inference)},
                  {"diagnostics",
                   json{{"beta_init", fit.beta_init},
                        {"beta_tilde", fit.beta_tilde},
                        {"lambda_gamma_tilde", fit.lambda_gamma_tilde},
                        {"lambda_alpha", fit.lambda_alpha},
                        {"lambda_gamma_hat", fit.lambda_gamma_hat},
                        {"kkt_gamma_tilde", fit.kkt_gamma_tilde},
                        {"kkt_alpha", fit.kkt_alpha},
                        {"kkt_gamma_hat", fit.kkt_gamma_hat},
                        {"preliminary_equation_residual",
                         fit.preliminary_equation_residual},
                        {"final_equation_residual", fit.final_equation_residual},
                        {"fold_seed", fit.fold_seed},
                        {"exponent_cap_events", fit.exponent_cap_events}}},
                  {"warnings", fit.warnings}};
      emit_fit_record(record, format, target.get());
    } else if (fit_dml_cmd->parsed()) {
      const Dataset d = load_dataset(dml_data, seed);
      std::vector<std::string> chosen;
      const DmlConfig cfg =
          make_dml_config(dml_flags, d, seed, bootstrap_draws, threads, &chosen);
      const DmlFit fit = fit_dml(d, cfg);
      json record{{"command", "fit-dml"},
                  {"n", d.n()},
                  {"p", d.p()},
                  {"seed", seed},
                  {"inference", inference_json(fit.inference)},
                  {"diagnostics",
                   json{{"k_outer", cfg.k_outer},
                        {"k_inner", cfg.k_inner},
                        {"r_variant", r_variant_name(cfg.r_variant)},
                        {"learners", chosen},
                        {"breve_betas", fit.breve_betas},
                        {"equation_residual", fit.equation_residual},
                        {"fold_seed", fit.fold_seed}}},
                  {"warnings", fit.warnings}};
      emit_fit_record(record, format, target.get());
    } else {
      GeneratorSpec spec;
      spec.config = parse_sim_config(sim.config);
      spec.n = sim.n;
      spec.p = sim.p > 0 ? sim.p : (spec.config == SimConfig::kMl ? 20 : 200);
      spec.seed = seed;

      Estimator estimator;
      if (sim.estimator == "hd") {
        estimator = [bootstrap_draws](const GeneratedData& gen, std::uint64_t s) {
          HdConfig cfg;
          cfg.seed = s;
          cfg.bootstrap_draws = bootstrap_draws;
          const HdFit fit = fit_hd(gen.data, cfg);
          ReplicateRecord rec;
          rec.beta_hat = fit.inference.beta_hat;
          rec.se = fit.inference.se;
          rec.ci_low = fit.inference.ci_low;
          rec.ci_high = fit.inference.ci_high;
          rec.p_value = fit.inference.p_value;
          return rec;
        };
      } else if (sim.estimator == "dml") {
        const DmlFlags flags = sim_dml_flags;
        estimator = [flags, bootstrap_draws](const GeneratedData& gen,
                                             std::uint64_t s) {
          const DmlConfig cfg =
              make_dml_config(flags, gen.data, s, bootstrap_draws, 1, nullptr);
          const DmlFit fit = fit_dml(gen.data, cfg);
          ReplicateRecord rec;
          rec.beta_hat = fit.inference.beta_hat;
          rec.se = fit.inference.se;
          rec.ci_low = fit.inference.ci_low;
          rec.ci_high = fit.inference.ci_high;
          rec.p_value = fit.inference.p_value;
          return rec;
        };
      } else {
        estimator = [bootstrap_draws](const GeneratedData& gen, std::uint64_t s) {
          if (!gen.m0_available)
            fail("oracle estimator: no closed-form m0 for this config");
          NuisanceSet eta;
          eta.r = gen.r0;
          eta.m = gen.m0;
          eta.psi = [r0 = gen.r0](RowView x) { return expit(-r0(x)); };
          const NuisanceValues nv = evaluate_nuisances(gen.data, eta);
          RootOptions ropts;
          ropts.tol = 1e-10;
          const double beta = solve_beta(gen.data, nv, 0.0, ropts);
          const InferenceResult inf = inference_with_bootstrap(
              gen.data, beta, nv, nullptr, bootstrap_draws, 0.95, mix_seed(s, 2));
          ReplicateRecord rec;
          rec.beta_hat = inf.beta_hat;
          rec.se = inf.se;
          rec.ci_low = inf.ci_low;
          rec.ci_high = inf.ci_high;
          rec.p_value = inf.p_value;
          return rec;
        };
      }

      const SimReport report = run_replicates(spec, estimator, sim.reps, threads);
      emit_sim_records(report, spec, sim.estimator, format, target.get());
      if (!sim.plot_data_path.empty()) {
        std::ofstream plot(sim.plot_data_path);
        if (!plot) fail("cannot open plot data file '" + sim.plot_data_path + "'");
        plot << "replicate,beta_hat,ci_low,ci_high\n";
        for (const auto& rec : report.records)
          if (rec.ok)
            plot << rec.replicate << "," << csv_double(rec.beta_hat) << ","
                 << csv_double(rec.ci_low) << "," << csv_double(rec.ci_high) << "\n";
      }
      err << "# " << report.records.size() << " replicates in "
          << report.total_seconds << " s (cumulative worker time)\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  (void)t0;
  return 0;
}

}  // namespace dblogit
