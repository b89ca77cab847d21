// snm: fit skew-normal approximations to binary-regression posteriors and score them.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "snm/snm.hpp"

namespace {

using namespace snm;

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kNoSolution = 3, kNotConverged = 4 };

struct CliError : std::runtime_error {
  CliError(int code, std::string tag, const std::string& msg) : std::runtime_error(msg), code(code), tag(std::move(tag)) {}
  int code;
  std::string tag;
};

void emit_error(const std::string& tag, const std::string& message) {
  std::cerr << Json{{"error", tag}, {"message", message}}.dump() << std::endl;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
  if (!f) throw InputError("failed writing '" + path + "'");
}

// Data and model flags shared by the commands that read a CSV.
struct DataOpts {
  std::string data;
  std::string response = "y";
  std::vector<std::string> categorical;
  std::string positive_label;
  bool standardize = false;
  std::string model = "probit";
  double prior_var = 1e4;

  void add(CLI::App* c, bool standardize_default) {
    standardize = standardize_default;
    c->add_option("--data", data, "Input CSV with a header row")->required()->check(CLI::ExistingFile);
    c->add_option("--response", response, "Name of the binary response column")->capture_default_str();
    c->add_option("--categorical", categorical, "Columns to one-hot encode (first level dropped)")->delimiter(',');
    c->add_option("--positive-label", positive_label, "Response value coded as 1 (default: the larger level)");
    if (standardize_default) {
      c->add_flag("!--no-standardize", standardize, "Keep numeric covariates on their original scale");
    } else {
      c->add_flag("--standardize", standardize, "Standardize numeric covariates to mean 0, variance 1");
    }
    c->add_option("--model", model, "Likelihood")->check(CLI::IsMember({"probit", "logistic"}))->capture_default_str();
    c->add_option("--prior-var", prior_var, "Prior variance of each coefficient")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }

  BenchmarkData load() const {
    BenchmarkSchema s;
    s.response_column = response;
    s.categorical_columns = categorical;
    s.standardize = standardize;
    if (!positive_label.empty()) s.positive_label = positive_label;
    return load_benchmark(data, s);
  }
};

struct ImportanceOpts {
  std::size_t n_samples = 50000;
  double df = 5.0;

  void add(CLI::App* c) {
    c->add_option("--is-samples", n_samples, "Importance sampling draws")->capture_default_str();
    c->add_option("--t-df", df, "Degrees of freedom of the t proposal")->capture_default_str();
  }

  void apply(ImportanceConfig& cfg) const {
    cfg.n_samples = n_samples;
    cfg.df = df;
  }
};

struct McmcOpts {
  std::size_t iter = 50000;
  std::size_t warmup = 5000;
  std::size_t chains = 4;

  void add(CLI::App* c) {
    c->add_option("--mcmc-iter", iter, "Metropolis iterations per chain, warmup included")->capture_default_str();
    c->add_option("--mcmc-warmup", warmup, "Adaptive warmup iterations per chain")->capture_default_str();
    c->add_option("--chains", chains, "Number of chains")->capture_default_str();
  }

  MhConfig config(std::uint64_t seed) const {
    MhConfig m;
    m.n_iter = iter;
    m.n_warmup = warmup;
    m.n_chains = chains;
    m.seed = seed;
    return m;
  }
};

Json data_block(const BenchmarkData& b) {
  return Json{{"n", b.data.n()}, {"p", b.data.p()}, {"dropped_rows", b.n_dropped}, {"columns", b.column_names}};
}

Json outcome_block(const MethodOutcome& o) {
  Json j{{"method", o.method}, {"status", o.status}, {"fallback", o.fallback}};
  if (o.match) {
    j["kappa"] = o.match->kappa ? Json(*o.match->kappa) : Json(nullptr);
    j["adjust"] = o.match->adjust ? Json(*o.match->adjust) : Json(nullptr);
    j["max_residual"] = o.match->residuals.empty() ? Json(nullptr) : Json(o.match->max_residual());
    if (!o.match->reason.empty()) j["reason"] = o.match->reason;
  }
  j["diagnostics"] = Json::object();
  for (const auto& [k, v] : o.diagnostics) j["diagnostics"][k] = v;
  return j;
}

void require_seed(const std::optional<std::uint64_t>& seed, const std::string& why) {
  if (!seed) throw CliError(kUsage, "usage", "--seed is required: " + why);
}

// ---------------------------------------------------------------------------

struct FitCmd {
  DataOpts data;
  ImportanceOpts is;
  std::string scheme;
  std::string mean_source = "is";
  std::string cov_source = "is";
  std::string base;
  std::optional<std::uint64_t> seed;
  bool no_adjust = false;
  std::string out;

  void add(CLI::App* c) {
    data.add(c, false);
    c->add_option("--scheme", scheme, "Approximation")
        ->required()
        ->check(CLI::IsMember({"laplace", "mm", "dm", "mmh", "mmc"}));
    c->add_option("--mean-source", mean_source, "Posterior mean used by mmh")
        ->check(CLI::IsMember({"jensen", "il", "is", "external"}))
        ->capture_default_str();
    c->add_option("--cov-source", cov_source, "Posterior mean and covariance used by mmc")
        ->check(CLI::IsMember({"is", "external"}))
        ->capture_default_str();
    c->add_option("--base", base, "Gaussian approximation JSON for external sources")->check(CLI::ExistingFile);
    c->add_option("--seed", seed, "Seed for importance sampling (required when it is used)");
    c->add_flag("--no-adjust", no_adjust, "Fail instead of shrinking when mm or mmc has no exact solution");
    c->add_option("--out", out, "Write the fitted parameters as JSON");
    is.add(c);
  }

  MethodSpec spec() const {
    std::string label = scheme;
    if (scheme == "mmh") label = "mmh-" + std::string(mean_source == "external" ? "ext" : mean_source);
    if (scheme == "mmc" && cov_source == "external") label = "mmc-ext";
    return MethodSpec::parse(label);
  }

  int run() const {
    const MethodSpec sp = spec();
    if (sp.uses_importance()) require_seed(seed, "scheme " + sp.label() + " uses importance sampling");
    std::optional<GaussianApprox> ext;
    if (sp.needs_external()) {
      if (base.empty()) throw CliError(kUsage, "usage", "--base is required for " + sp.label());
      ext = gaussian_from_json(read_json_file(base));
    }
    const BenchmarkData b = data.load();
    const GlmModel model(b.data, glm_kind_from_string(data.model), data.prior_var);
    MethodConfig cfg;
    is.apply(cfg.importance);
    if (seed) cfg.importance.seed = *seed;
    cfg.allow_adjust = !no_adjust;
    cfg.record_timing = false;
    const MethodOutcome o = run_method(model, sp, cfg, ext ? &*ext : nullptr);

    Json status = outcome_block(o);
    status["data"] = data_block(b);
    if (o.fallback) {
      std::cout << status.dump(2) << std::endl;
      throw CliError(kNoSolution, "no_exact_solution", sp.label() + ": " + o.match->reason);
    }
    // Gaussian methods are written as Gaussian approximations so they can serve as a --base.
    const Json params = to_json(o.approx);
    status["params"] = params;
    if (!out.empty()) write_file(out, params.dump(2) + "\n");
    std::cout << status.dump(2) << std::endl;
    return kOk;
  }
};

struct PosthocCmd {
  DataOpts data;
  std::string base;
  std::string adjust;
  bool no_adjust = false;
  std::string out;

  void add(CLI::App* c) {
    data.add(c, false);
    c->add_option("--base", base, "Gaussian approximation JSON to adjust")->required()->check(CLI::ExistingFile);
    c->add_option("--adjust", adjust, "Adjustment scheme")->required()->check(CLI::IsMember({"mmh", "mmc"}));
    c->add_flag("--no-adjust", no_adjust, "Fall back instead of shrinking when mmc has no exact solution");
    c->add_option("--out", out, "Write the adjusted parameters (or the base on fallback) as JSON");
  }

  int run() const {
    const GaussianApprox g = gaussian_from_json(read_json_file(base));
    const BenchmarkData b = data.load();
    const GlmModel model(b.data, glm_kind_from_string(data.model), data.prior_var);
    MethodConfig cfg;
    cfg.allow_adjust = !no_adjust;
    cfg.record_timing = false;
    const MethodOutcome o = run_method(model, MethodSpec::parse("posthoc-" + adjust), cfg, &g);
    const MsnParams params = as_msn(o.approx);
    Json status = outcome_block(o);
    status["data"] = data_block(b);
    status["params"] = to_json(params);
    if (!out.empty()) write_file(out, to_json(params).dump(2) + "\n");
    std::cout << status.dump(2) << std::endl;
    if (o.fallback) throw CliError(kNoSolution, "no_exact_solution", "posthoc-" + adjust + ": " + o.match->reason);
    return kOk;
  }
};

struct EvalCmd {
  std::string params;
  std::string reference;
  std::string out;

  void add(CLI::App* c) {
    c->add_option("--params", params, "MSN or Gaussian approximation JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--reference", reference, "Reference marginals CSV (coordinate,grid,density)")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--out", out, "Write per-coordinate accuracies as CSV");
  }

  int run() const {
    const Approximation a = approximation_from_json(read_json_file(params));
    std::ifstream f(reference);
    if (!f) throw InputError("cannot open '" + reference + "'");
    const auto ref = read_marginals_csv(f);
    const Eigen::Index p = std::visit([](const auto& x) { return x.dim(); }, a);
    if (static_cast<Eigen::Index>(ref.size()) != p) {
      throw DimensionError("reference has " + std::to_string(ref.size()) + " coordinates, approximation has " +
                           std::to_string(p));
    }
    const Vector acc = std::visit([&](const auto& x) { return marginal_accuracies(ref, x); }, a);
    std::ostringstream csv;
    csv << "coordinate,accuracy\n";
    for (Eigen::Index j = 0; j < p; ++j) csv << j << ',' << format_double(acc[j]) << '\n';
    csv << "mean," << format_double(acc.mean()) << '\n';
    if (!out.empty()) write_file(out, csv.str());
    std::cout << Json{{"accuracy", vector_json(acc)}, {"mean_accuracy", acc.mean()}}.dump(2) << std::endl;
    return kOk;
  }
};

struct ReferenceCmd {
  DataOpts data;
  McmcOpts mcmc;
  std::string method = "auto";
  std::optional<std::uint64_t> seed;
  std::size_t grid_points = 0;
  std::string out;

  void add(CLI::App* c) {
    data.add(c, false);
    c->add_option("--method", method, "Gold standard: quad (p <= 3), mcmc, or auto")
        ->check(CLI::IsMember({"auto", "quad", "mcmc"}))
        ->capture_default_str();
    c->add_option("--seed", seed, "Seed for the Metropolis chains (required for mcmc)");
    c->add_option("--grid-points", grid_points, "Quadrature points per axis (0: automatic)")->capture_default_str();
    c->add_option("--out", out, "Write the marginals CSV")->required();
    mcmc.add(c);
  }

  int run() const {
    const BenchmarkData b = data.load();
    const GlmModel model(b.data, glm_kind_from_string(data.model), data.prior_var);
    EvalKind kind = eval_kind_from_string(method);
    if (kind == EvalKind::Auto) kind = model.dim() <= kMaxQuadratureDim ? EvalKind::Quadrature : EvalKind::Mcmc;
    if (kind == EvalKind::Mcmc) require_seed(seed, "the reference is sampled by MCMC");
    GridReferenceOptions g;
    g.n_points = static_cast<Eigen::Index>(grid_points);
    const GaussianApprox base = laplace(model);
    const ReferenceResult r = build_reference(model, base, kind, mcmc.config(seed.value_or(0)), g);
    Json status{{"reference", r.kind}, {"converged", r.converged}, {"data", data_block(b)}};
    if (std::isfinite(r.max_rhat)) status["max_rhat"] = r.max_rhat;
    std::cout << status.dump(2) << std::endl;
    if (!r.converged) throw CliError(kNotConverged, "not_converged", "MCMC reference did not reach R-hat < 1.1");
    std::ostringstream csv;
    write_marginals_csv(csv, r.marginals);
    write_file(out, csv.str());
    return kOk;
  }
};

struct MarginalsCmd {
  std::string params;
  Eigen::Index points = 8001;
  std::string out;

  void add(CLI::App* c) {
    c->add_option("--params", params, "MSN or Gaussian approximation JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--points", points, "Grid points per coordinate")->capture_default_str();
    c->add_option("--out", out, "Write the marginals CSV")->required();
  }

  int run() const {
    if (points < 3) throw InputError("--points must be at least 3");
    std::ostringstream csv;
    write_marginals_csv(csv, approximation_marginals(approximation_from_json(read_json_file(params)), points));
    write_file(out, csv.str());
    return kOk;
  }
};

// Flags shared by simulate and benchmark.
struct ExperimentOpts {
  ImportanceOpts is;
  McmcOpts mcmc;
  std::vector<std::string> methods{"laplace", "mm", "dm", "mmh-is", "mmc"};
  std::string eval = "auto";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string summary;
  unsigned jobs = 1;
  bool deterministic = false;
  bool no_adjust = false;

  void add(CLI::App* c) {
    c->add_option("--methods", methods, "Comma-separated methods to score")->delimiter(',')->capture_default_str();
    c->add_option("--eval", eval, "Gold standard: quad, mcmc, or auto (quad for p <= 3)")
        ->check(CLI::IsMember({"auto", "quad", "mcmc"}))
        ->capture_default_str();
    c->add_option("--seed", seed, "Seed for data, importance sampling and MCMC")->required();
    c->add_option("--out", out, "Write one JSON report per line")->required();
    c->add_option("--summary", summary, "Also write the per-method summary as CSV");
    c->add_option("--jobs", jobs, "Replicates evaluated in parallel")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_flag("--deterministic", deterministic, "Record zero elapsed time so reports are byte-reproducible");
    c->add_flag("--no-adjust", no_adjust, "Do not shrink mm/mmc solutions above their thresholds");
    is.add(c);
    mcmc.add(c);
  }

  ExperimentConfig config() const {
    ExperimentConfig cfg;
    cfg.methods = parse_methods(methods);
    cfg.eval = eval_kind_from_string(eval);
    is.apply(cfg.method.importance);
    cfg.method.allow_adjust = !no_adjust;
    cfg.method.record_timing = !deterministic;
    cfg.mcmc = mcmc.config(*seed);
    cfg.jobs = jobs;
    return cfg;
  }

  void write(const std::vector<AccuracyReport>& reports) const {
    write_file(out, to_jsonl(reports));
    const auto rows = summarize(reports);
    std::ostringstream csv;
    csv << "method,n,mean_accuracy,mean_seconds,n_failed\n";
    std::printf("%-12s %6s %9s %11s %7s\n", "method", "n", "Acc.", "Time (s)", "failed");
    for (const auto& r : rows) {
      csv << r.method << ',' << r.n << ',' << format_double(r.mean_accuracy) << ',' << format_double(r.mean_seconds)
          << ',' << r.n_failed << '\n';
      std::printf("%-12s %6zu %9.2f %11.4f %7zu\n", r.method.c_str(), r.n, 100.0 * r.mean_accuracy, r.mean_seconds,
                  r.n_failed);
    }
    if (!summary.empty()) write_file(summary, csv.str());
  }
};

struct SimulateCmd {
  ExperimentOpts exp;
  Eigen::Index p = 2;
  Eigen::Index n_mult = 2;
  std::string design = "indep";
  std::string model = "probit";
  std::size_t reps = 20;
  double rho = 0.9;
  double prior_var = 1e4;
  std::size_t max_attempts = 0;

  void add(CLI::App* c) {
    c->add_option("--p", p, "Number of coefficients including the intercept")->capture_default_str();
    c->add_option("--n-mult", n_mult, "Observations per coefficient (n = n-mult * p)")->capture_default_str();
    c->add_option("--design", design, "Covariates")->check(CLI::IsMember({"indep", "ar1"}))->capture_default_str();
    c->add_option("--rho", rho, "AR(1) coefficient")->capture_default_str();
    c->add_option("--model", model, "Likelihood")->check(CLI::IsMember({"probit", "logistic"}))->capture_default_str();
    c->add_option("--reps", reps, "Non-separated replicates to evaluate")->capture_default_str();
    c->add_option("--max-attempts", max_attempts, "Cap on simulated datasets (0: 20 reps + 100)")->capture_default_str();
    c->add_option("--prior-var", prior_var, "Prior variance of each coefficient")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    exp.add(c);
  }

  int run() const {
    SimDesign d;
    d.p = p;
    d.n_multiplier = n_mult;
    d.covariates = covariates_from_string(design);
    d.model_kind = glm_kind_from_string(model);
    d.n_reps = reps;
    d.seed = *exp.seed;
    d.rho = rho;
    d.prior_variance = prior_var;
    ExperimentConfig cfg = exp.config();
    cfg.max_attempts = max_attempts;
    const ExperimentResult r = run_experiment(d, cfg);
    std::printf("datasets simulated: %zu, separated (discarded): %zu, reference not converged (discarded): %zu, "
                "replicates used: %zu\n",
                r.n_attempted, r.n_separated, r.n_not_converged, r.n_used);
    exp.write(r.reports);
    if (r.n_used == 0) {
      if (r.n_not_converged > 0) throw CliError(kNotConverged, "not_converged", "no replicate had a converged reference");
      throw CliError(kUsage, "input", "every simulated dataset was separated");
    }
    return kOk;
  }
};

struct BenchmarkCmd {
  DataOpts data;
  ExperimentOpts exp;

  void add(CLI::App* c) {
    data.add(c, true);
    exp.add(c);
  }

  int run() const {
    const BenchmarkData b = data.load();
    std::printf("n = %lld, p = %lld, dropped rows = %zu\n", static_cast<long long>(b.data.n()),
                static_cast<long long>(b.data.p()), b.n_dropped);
    if (detect_separation(b.data)) std::printf("warning: the data are separated\n");
    const GlmModel model(b.data, glm_kind_from_string(data.model), data.prior_var);
    const DatasetEvaluation ev = evaluate_dataset(model, data.data, 0, exp.config(), *exp.seed);
    if (ev.discarded) throw CliError(kNotConverged, "not_converged", "MCMC reference did not reach R-hat < 1.1");
    exp.write(ev.reports);
    return kOk;
  }
};

// Lets --config appear after the subcommand name.
std::vector<std::string> hoist_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc), front, rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      front.push_back(args[i]);
      front.push_back(args[++i]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      front.push_back(args[i]);
    } else {
      rest.push_back(args[i]);
    }
  }
  front.insert(front.end(), rest.begin(), rest.end());
  return front;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skew-normal matching approximations for Bayesian probit and logistic regression."};
  app.name("snm");
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; [command] sections hold long option names")->check(CLI::ExistingFile);
  app.allow_config_extras(CLI::config_extras_mode::error);

  FitCmd fit;
  PosthocCmd posthoc;
  EvalCmd eval;
  ReferenceCmd reference;
  MarginalsCmd marginals;
  SimulateCmd simulate;
  BenchmarkCmd benchmark;
  fit.add(app.add_subcommand("fit", "Fit an approximation to a posterior and write its parameters"));
  posthoc.add(app.add_subcommand("posthoc", "Add skewness to an existing Gaussian approximation"));
  eval.add(app.add_subcommand("eval", "Score an approximation against reference marginals"));
  reference.add(app.add_subcommand("reference", "Compute gold-standard posterior marginals"));
  marginals.add(app.add_subcommand("marginals", "Export the analytic marginals of an approximation"));
  simulate.add(app.add_subcommand("simulate", "Run a simulation study and write accuracy reports"));
  benchmark.add(app.add_subcommand("benchmark", "Score methods on one benchmark dataset"));

  std::vector<std::string> args = hoist_config(argc, argv);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return kUsage;
  }

  try {
    if (app.got_subcommand("fit")) return fit.run();
    if (app.got_subcommand("posthoc")) return posthoc.run();
    if (app.got_subcommand("eval")) return eval.run();
    if (app.got_subcommand("reference")) return reference.run();
    if (app.got_subcommand("marginals")) return marginals.run();
    if (app.got_subcommand("simulate")) return simulate.run();
    if (app.got_subcommand("benchmark")) return benchmark.run();
  } catch (const CliError& e) {
    emit_error(e.tag, e.what());
    return e.code;
  } catch (const InputError& e) {
    emit_error("input", e.what());
    return kUsage;
  } catch (const DimensionError& e) {
    emit_error("dimension", e.what());
    return kUsage;
  } catch (const UnsupportedError& e) {
    emit_error("unsupported", e.what());
    return kUsage;
  } catch (const ConstraintError& e) {
    emit_error("constraint", e.what());
    return kUsage;
  } catch (const NonConvergenceError& e) {
    emit_error("numerical", e.what());
    return kInternal;
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return kInternal;
  }
  return kInternal;
}
