#pragma once

// Simulation designs, benchmark ingestion, method runners and accuracy reports.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "snm/errors.hpp"
#include "snm/estimators.hpp"
#include "snm/linalg.hpp"
#include "snm/matching.hpp"
#include "snm/models.hpp"
#include "snm/msn.hpp"
#include "snm/reference.hpp"

namespace snm {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// ---------------------------------------------------------------------------
// Simulated data.

enum class Covariates { IndependentGaussian, AR1 };

inline const char* to_string(Covariates c) { return c == Covariates::AR1 ? "ar1" : "indep"; }

inline Covariates covariates_from_string(const std::string& s) {
  if (s == "indep" || s == "independent") return Covariates::IndependentGaussian;
  if (s == "ar1") return Covariates::AR1;
  throw InputError("unknown covariate design '" + s + "'");
}

struct SimDesign {
  Eigen::Index p = 2;
  Eigen::Index n_multiplier = 2;
  Covariates covariates = Covariates::IndependentGaussian;
  GlmKind model_kind = GlmKind::Probit;
  std::size_t n_reps = 50;
  std::uint64_t seed = 1;
  double rho = 0.9;
  double prior_variance = 1e4;

  Eigen::Index n() const { return n_multiplier * p; }

  void validate() const {
    if (p < 1) throw InputError("design: p must be at least 1");
    if (n_multiplier < 1) throw InputError("design: n multiplier must be at least 1");
    if (n_reps < 1) throw InputError("design: need at least one replicate");
    if (!(std::abs(rho) < 1.0)) throw InputError("design: rho must lie in (-1, 1)");
    if (!(prior_variance > 0.0) || !std::isfinite(prior_variance)) {
      throw InputError("design: prior variance must be positive");
    }
  }
};

// (2, -2, 2, ...) / p.
inline Vector true_theta(Eigen::Index p) {
  Vector t(p);
  for (Eigen::Index j = 0; j < p; ++j) t[j] = (j % 2 == 0 ? 2.0 : -2.0) / static_cast<double>(p);
  return t;
}

inline GlmData simulate_dataset(const SimDesign& design, std::size_t rep_index) {
  design.validate();
  const Eigen::Index p = design.p, n = design.n();
  std::mt19937_64 rng(derive_seed(design.seed, rep_index));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double innov = std::sqrt(1.0 - design.rho * design.rho);

  Matrix X(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < p; ++j) {
      const double e = normal(rng);
      X(i, j) = (design.covariates == Covariates::AR1 && j > 1) ? design.rho * X(i, j - 1) + innov * e : e;
    }
  }
  const Vector eta = X * true_theta(p);
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double prob = design.model_kind == GlmKind::Probit ? norm_cdf(eta[i]) : logistic(eta[i]);
    y[i] = unif(rng) < prob ? 1.0 : 0.0;
  }
  return GlmData(std::move(X), std::move(y));
}

// ---------------------------------------------------------------------------
// Separation: is there theta != 0 with z_i' theta >= 0 for all i, one strictly?

namespace detail {

// max c'x subject to A x <= b, x >= 0, with b >= 0. Bland's rule.
inline double simplex_max(const Matrix& A, const Vector& b, const Vector& c) {
  const Eigen::Index m = A.rows(), n = A.cols();
  Matrix T = Matrix::Zero(m + 1, n + m + 1);
  T.topLeftCorner(m, n) = A;
  T.block(0, n, m, m).setIdentity();
  T.col(n + m).head(m) = b;
  T.row(m).head(n) = -c.transpose();
  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<std::size_t>(i)] = n + i;

  const double eps = 1e-12 * (1.0 + A.cwiseAbs().maxCoeff());
  const Eigen::Index max_iter = 50 * (m + n) + 100;
  for (Eigen::Index it = 0; it < max_iter; ++it) {
    Eigen::Index enter = -1;
    for (Eigen::Index j = 0; j < n + m; ++j) {
      if (T(m, j) < -eps) {
        enter = j;
        break;
      }
    }
    if (enter < 0) return T(m, n + m);
    Eigen::Index leave = -1;
    double best = INFINITY;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (T(i, enter) > eps) {
        const double r = T(i, n + m) / T(i, enter);
        if (r < best - 1e-15 ||
            (r <= best + 1e-15 && leave >= 0 && basis[static_cast<std::size_t>(i)] < basis[static_cast<std::size_t>(leave)])) {
          best = r;
          leave = i;
        }
      }
    }
    if (leave < 0) return INFINITY;
    T.row(leave) /= T(leave, enter);
    for (Eigen::Index i = 0; i <= m; ++i) {
      if (i != leave && T(i, enter) != 0.0) T.row(i) -= T(i, enter) * T.row(leave);
    }
    basis[static_cast<std::size_t>(leave)] = enter;
  }
  throw NonConvergenceError("separation LP: iteration limit", NAN);
}

}  // namespace detail

// Optimum of max sum_i z_i' theta over z_i' theta >= 0, |theta|_inf <= 1.
inline double separation_score(const GlmData& data) {
  const Matrix& Z = data.Z();
  const Eigen::Index n = Z.rows(), p = Z.cols();
  if (n == 0) return 0.0;
  // theta = u - v with 0 <= u, v <= 1.
  Matrix A = Matrix::Zero(n + 2 * p, 2 * p);
  A.topLeftCorner(n, p) = -Z;
  A.topRightCorner(n, p) = Z;
  A.bottomRows(2 * p).setIdentity();
  Vector b = Vector::Zero(n + 2 * p);
  b.tail(2 * p).setOnes();
  const Vector s = Z.colwise().sum().transpose();
  Vector c(2 * p);
  c << s, -s;
  return detail::simplex_max(A, b, c);
}

inline bool detect_separation(const GlmData& data) {
  return separation_score(data) > 1e-9 * (1.0 + data.Z().cwiseAbs().sum());
}

// ---------------------------------------------------------------------------
// Benchmark CSV files.

struct BenchmarkSchema {
  std::string response_column = "y";
  std::vector<std::string> categorical_columns;
  bool standardize = true;
  // Response value coded as 1; defaults to the larger of the two levels.
  std::optional<std::string> positive_label;
};

struct BenchmarkData {
  GlmData data;
  std::vector<std::string> column_names;
  std::size_t n_dropped = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw InputError("csv: unterminated quote");
  out.push_back(trim(cur));
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "?"; }

// Numeric order when both parse, lexicographic otherwise.
inline bool level_less(const std::string& a, const std::string& b) {
  const auto x = parse_number(a), y = parse_number(b);
  if (x && y) return *x < *y;
  return a < b;
}

}  // namespace detail

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw InputError("csv: row " + std::to_string(t.rows.size() + 2) + " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw InputError("csv: empty file");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open '" + path + "'");
  return read_csv(f);
}

inline BenchmarkData load_benchmark(const CsvTable& table, const BenchmarkSchema& schema) {
  const auto& H = table.header;
  const auto find = [&](const std::string& name) {
    const auto it = std::find(H.begin(), H.end(), name);
    if (it == H.end()) throw InputError("column '" + name + "' not found");
    return static_cast<std::size_t>(it - H.begin());
  };
  const std::size_t resp = find(schema.response_column);
  std::set<std::size_t> cat;
  for (const auto& c : schema.categorical_columns) {
    const auto k = find(c);
    if (k == resp) throw InputError("response column cannot be categorical");
    cat.insert(k);
  }

  std::vector<const std::vector<std::string>*> kept;
  std::size_t dropped = 0;
  for (const auto& r : table.rows) {
    const bool miss = std::any_of(r.begin(), r.end(), detail::is_missing);
    if (miss) {
      ++dropped;
    } else {
      kept.push_back(&r);
    }
  }
  if (kept.empty()) throw InputError("benchmark: no complete rows");
  const auto n = static_cast<Eigen::Index>(kept.size());

  std::vector<std::string> levels;
  for (const auto* r : kept) {
    const auto& v = (*r)[resp];
    if (std::find(levels.begin(), levels.end(), v) == levels.end()) levels.push_back(v);
  }
  std::sort(levels.begin(), levels.end(), detail::level_less);
  if (levels.size() > 2) throw InputError("benchmark: response '" + schema.response_column + "' is not binary");
  std::optional<std::string> one;
  if (schema.positive_label) {
    one = *schema.positive_label;
    if (std::find(levels.begin(), levels.end(), *one) == levels.end()) {
      throw InputError("benchmark: positive label '" + *one + "' does not occur");
    }
  } else if (levels.size() == 2) {
    one = levels[1];
  } else {
    const auto v = detail::parse_number(levels[0]);
    if (!v || (*v != 0.0 && *v != 1.0)) throw InputError("benchmark: single response level must be 0 or 1");
    if (*v == 1.0) one = levels[0];
  }
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = one && (*kept[static_cast<std::size_t>(i)])[resp] == *one ? 1.0 : 0.0;

  std::vector<Vector> cols;
  std::vector<std::string> names{"(Intercept)"};
  for (std::size_t k = 0; k < H.size(); ++k) {
    if (k == resp) continue;
    if (cat.count(k)) {
      std::vector<std::string> lv;
      for (const auto* r : kept) {
        if (std::find(lv.begin(), lv.end(), (*r)[k]) == lv.end()) lv.push_back((*r)[k]);
      }
      std::sort(lv.begin(), lv.end(), detail::level_less);
      for (std::size_t l = 1; l < lv.size(); ++l) {
        Vector c(n);
        for (Eigen::Index i = 0; i < n; ++i) c[i] = (*kept[static_cast<std::size_t>(i)])[k] == lv[l] ? 1.0 : 0.0;
        cols.push_back(std::move(c));
        names.push_back(H[k] + "=" + lv[l]);
      }
      continue;
    }
    Vector c(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = (*kept[static_cast<std::size_t>(i)])[k];
      const auto v = detail::parse_number(s);
      if (!v) throw InputError("column '" + H[k] + "' has non-numeric value '" + s + "'; declare it categorical");
      c[i] = *v;
    }
    if (schema.standardize && n > 1) {
      const double mean = c.mean();
      const double sd = std::sqrt((c.array() - mean).square().sum() / static_cast<double>(n - 1));
      c.array() -= mean;
      if (sd > 0.0) c /= sd;
    }
    cols.push_back(std::move(c));
    names.push_back(H[k]);
  }

  Matrix X(n, static_cast<Eigen::Index>(cols.size()) + 1);
  X.col(0).setOnes();
  for (std::size_t k = 0; k < cols.size(); ++k) X.col(static_cast<Eigen::Index>(k) + 1) = cols[k];
  return {GlmData(std::move(X), std::move(y)), std::move(names), dropped};
}

inline BenchmarkData load_benchmark(const std::string& path, const BenchmarkSchema& schema) {
  return load_benchmark(read_csv_file(path), schema);
}

// ---------------------------------------------------------------------------
// Methods.

enum class MethodKind { Laplace, MM, DM, MMH, MMC, PostHocMMH, PostHocMMC, Reference };
enum class MeanSource { Jensen, ImprovedLaplace, ImportanceSampling, External };
enum class CovSource { ImportanceSampling, External };

struct MethodSpec {
  MethodKind kind = MethodKind::Laplace;
  MeanSource mean_source = MeanSource::ImportanceSampling;
  CovSource cov_source = CovSource::ImportanceSampling;

  bool needs_external() const {
    return kind == MethodKind::PostHocMMH || kind == MethodKind::PostHocMMC ||
           (kind == MethodKind::MMH && mean_source == MeanSource::External) ||
           (kind == MethodKind::MMC && cov_source == CovSource::External);
  }

  bool uses_importance() const {
    return kind == MethodKind::MM || (kind == MethodKind::MMH && mean_source == MeanSource::ImportanceSampling) ||
           (kind == MethodKind::MMC && cov_source == CovSource::ImportanceSampling);
  }

  std::string label() const {
    switch (kind) {
      case MethodKind::Laplace:
        return "laplace";
      case MethodKind::MM:
        return "mm";
      case MethodKind::DM:
        return "dm";
      case MethodKind::MMH:
        switch (mean_source) {
          case MeanSource::Jensen:
            return "mmh-jensen";
          case MeanSource::ImprovedLaplace:
            return "mmh-il";
          case MeanSource::ImportanceSampling:
            return "mmh-is";
          case MeanSource::External:
            return "mmh-ext";
        }
        break;
      case MethodKind::MMC:
        return cov_source == CovSource::External ? "mmc-ext" : "mmc";
      case MethodKind::PostHocMMH:
        return "posthoc-mmh";
      case MethodKind::PostHocMMC:
        return "posthoc-mmc";
      case MethodKind::Reference:
        return "reference";
    }
    return "?";
  }

  static MethodSpec parse(const std::string& s) {
    static const char* const names[] = {"laplace", "mm",      "dm",          "mmh-jensen",  "mmh-il",   "mmh-is",
                                        "mmh-ext", "mmc",     "mmc-is",      "mmc-ext",     "posthoc-mmh",
                                        "posthoc-mmc", "reference"};
    MethodSpec m;
    if (s == "laplace") {
      m.kind = MethodKind::Laplace;
    } else if (s == "mm") {
      m.kind = MethodKind::MM;
    } else if (s == "dm") {
      m.kind = MethodKind::DM;
    } else if (s == "mmh-jensen" || s == "mmh-il" || s == "mmh-is" || s == "mmh-ext") {
      m.kind = MethodKind::MMH;
      m.mean_source = s == "mmh-jensen" ? MeanSource::Jensen
                      : s == "mmh-il"   ? MeanSource::ImprovedLaplace
                      : s == "mmh-is"   ? MeanSource::ImportanceSampling
                                        : MeanSource::External;
    } else if (s == "mmc" || s == "mmc-is") {
      m.kind = MethodKind::MMC;
    } else if (s == "mmc-ext") {
      m.kind = MethodKind::MMC;
      m.cov_source = CovSource::External;
    } else if (s == "posthoc-mmh") {
      m.kind = MethodKind::PostHocMMH;
    } else if (s == "posthoc-mmc") {
      m.kind = MethodKind::PostHocMMC;
    } else if (s == "reference") {
      m.kind = MethodKind::Reference;
    } else {
      std::string all;
      for (const char* n : names) all += std::string(all.empty() ? "" : ", ") + n;
      throw InputError("unknown method '" + s + "' (expected one of " + all + ")");
    }
    return m;
  }
};

inline std::vector<MethodSpec> parse_methods(const std::vector<std::string>& names) {
  std::vector<MethodSpec> out;
  for (const auto& n : names) out.push_back(MethodSpec::parse(n));
  return out;
}

struct MethodConfig {
  ImportanceConfig importance;
  LossWeights weights;
  bool allow_adjust = true;
  KappaGrid grid;
  NewtonOptions newton;
  bool record_timing = true;
};

using Approximation = std::variant<MsnParams, GaussianApprox>;

inline MsnParams as_msn(const Approximation& a) {
  if (const auto* m = std::get_if<MsnParams>(&a)) return *m;
  const auto& g = std::get<GaussianApprox>(a);
  return MsnParams::gaussian(g.mean, g.cov);
}

struct MethodOutcome {
  std::string method;
  Approximation approx;
  std::optional<MatchResult> match;
  double seconds = 0.0;
  // "baseline" for Gaussian methods, otherwise the match status.
  std::string status = "baseline";
  // The approximation is the base because matching failed.
  bool fallback = false;
  std::map<std::string, std::string> diagnostics;
};

namespace detail {

inline std::string fmt(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace detail

inline MethodOutcome run_method(const Target& model, const MethodSpec& spec, const MethodConfig& cfg = {},
                                const GaussianApprox* external = nullptr) {
  if (spec.kind == MethodKind::Reference) throw InputError("the reference passthrough has no standalone runner");
  if (spec.needs_external() && external == nullptr) {
    throw InputError("method " + spec.label() + " needs an external Gaussian approximation");
  }
  if (external) require_same_size(model.dim(), external->dim(), "run_method: external base");
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, std::string> diag;

  const DerivativeStats st = find_mode(model, Vector::Zero(model.dim()), cfg.newton);
  const GaussianApprox lap = laplace(st);
  std::optional<ImportanceResult> is;
  if (spec.uses_importance()) {
    is = importance_moments(model, st, cfg.importance);
    diag["is_ess"] = detail::fmt(is->ess);
    if (is->unreliable) diag["is_unreliable"] = "true";
  }
  const auto importance_stats = [&] {
    if (!is_spd(is->stats.cov)) throw NonConvergenceError("importance covariance is not positive definite", NAN);
    return MomentStats(is->stats.mean, is->stats.cov, is->stats.tum);
  };

  std::optional<MatchResult> match;
  const GaussianApprox* fallback = &lap;
  switch (spec.kind) {
    case MethodKind::Laplace:
      break;
    case MethodKind::MM:
      match = match_moments(importance_stats(), cfg.weights);
      break;
    case MethodKind::DM:
      match = match_derivatives(st, cfg.grid);
      break;
    case MethodKind::MMH:
    case MethodKind::PostHocMMH: {
      Vector mean;
      const MeanSource src = spec.kind == MethodKind::PostHocMMH ? MeanSource::External : spec.mean_source;
      switch (src) {
        case MeanSource::Jensen: {
          const auto* glm = dynamic_cast<const GlmModel*>(&model);
          if (glm == nullptr) throw UnsupportedError("Jensen mean needs a regression model");
          mean = jensen_mean(*glm, lap);
          break;
        }
        case MeanSource::ImprovedLaplace:
          mean = improved_laplace_mean(model, lap);
          break;
        case MeanSource::ImportanceSampling:
          mean = is->stats.mean;
          break;
        case MeanSource::External:
          mean = external->mean;
          fallback = external;
          break;
      }
      match = match_mmh(st, mean, cfg.grid);
      break;
    }
    case MethodKind::MMC:
    case MethodKind::PostHocMMC: {
      const bool ext = spec.kind == MethodKind::PostHocMMC || spec.cov_source == CovSource::External;
      if (ext) fallback = external;
      const MomentStats ms = ext ? MomentStats(external->mean, external->cov) : importance_stats();
      match = match_mmc(st.mode, ms, cfg.weights, cfg.allow_adjust, cfg.grid);
      break;
    }
    case MethodKind::Reference:
      break;
  }

  MethodOutcome out{spec.label(), lap, std::nullopt, 0.0, "baseline", false, {}};
  if (match) {
    out.status = to_string(match->status);
    if (match->kappa) diag["kappa"] = detail::fmt(*match->kappa);
    if (match->adjust) diag["adjust"] = detail::fmt(*match->adjust);
    if (match->ok()) {
      out.approx = match->get();
    } else {
      out.approx = *fallback;
      out.fallback = true;
      diag["fallback"] = fallback->source;
      diag["reason"] = match->reason;
    }
    out.match = std::move(match);
  }
  if (cfg.record_timing) {
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  out.diagnostics = std::move(diag);
  return out;
}

// ---------------------------------------------------------------------------
// Reports.

struct AccuracyReport {
  std::string method;
  std::string dataset;
  long replicate = -1;
  Vector per_marginal_accuracy;
  double mean_accuracy = 0.0;
  double elapsed_seconds = 0.0;
  std::string status;
  std::map<std::string, std::string> diagnostics;

  static AccuracyReport make(std::string method, Vector acc, double seconds, std::string status) {
    AccuracyReport r;
    r.method = std::move(method);
    r.mean_accuracy = acc.size() ? acc.mean() : NAN;
    r.per_marginal_accuracy = std::move(acc);
    r.elapsed_seconds = seconds;
    r.status = std::move(status);
    return r;
  }
};

// Total marginal accuracy gained and lost going from base to adjusted.
struct AccuracyChange {
  double improvement = 0.0;
  double deterioration = 0.0;
  double net() const { return improvement - deterioration; }
};

inline AccuracyChange accuracy_change(const AccuracyReport& base, const AccuracyReport& adjusted) {
  require_same_size(base.per_marginal_accuracy.size(), adjusted.per_marginal_accuracy.size(), "accuracy_change");
  AccuracyChange c;
  for (Eigen::Index j = 0; j < base.per_marginal_accuracy.size(); ++j) {
    const double d = adjusted.per_marginal_accuracy[j] - base.per_marginal_accuracy[j];
    (d > 0.0 ? c.improvement : c.deterioration) += std::abs(d);
  }
  return c;
}

struct MethodSummary {
  std::string method;
  std::size_t n = 0;
  double mean_accuracy = 0.0;
  double mean_seconds = 0.0;
  std::size_t n_failed = 0;
};

// One row per method in order of first appearance.
inline std::vector<MethodSummary> summarize(const std::vector<AccuracyReport>& reports) {
  std::vector<MethodSummary> out;
  for (const auto& r : reports) {
    auto it = std::find_if(out.begin(), out.end(), [&](const MethodSummary& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method});
      it = out.end() - 1;
    }
    ++it->n;
    it->mean_accuracy += r.mean_accuracy;
    it->mean_seconds += r.elapsed_seconds;
    if (r.status == "failed") ++it->n_failed;
  }
  for (auto& s : out) {
    s.mean_accuracy /= static_cast<double>(s.n);
    s.mean_seconds /= static_cast<double>(s.n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiments.

enum class EvalKind { Auto, Quadrature, Mcmc };

inline EvalKind eval_kind_from_string(const std::string& s) {
  if (s == "auto") return EvalKind::Auto;
  if (s == "quad" || s == "quadrature") return EvalKind::Quadrature;
  if (s == "mcmc") return EvalKind::Mcmc;
  throw InputError("unknown evaluation '" + s + "'");
}

inline constexpr Eigen::Index kMaxQuadratureDim = 3;

struct ReferenceResult {
  std::vector<MarginalCurve> marginals;
  std::string kind;
  bool converged = true;
  double max_rhat = NAN;
};

inline ReferenceResult build_reference(const Target& target, const GaussianApprox& base, EvalKind eval,
                                       const MhConfig& mh = {}, const GridReferenceOptions& grid = {}) {
  if (eval == EvalKind::Auto) eval = target.dim() <= kMaxQuadratureDim ? EvalKind::Quadrature : EvalKind::Mcmc;
  ReferenceResult r;
  if (eval == EvalKind::Quadrature) {
    r.kind = "quadrature";
    r.marginals = grid_marginals(target, base, grid);
    return r;
  }
  r.kind = "mcmc";
  const McmcResult mc = mh_sample(target, base, mh);
  r.max_rhat = mc.diagnostics.rhat.maxCoeff();
  r.converged = mc.diagnostics.converged();
  if (r.converged) r.marginals = mcmc_marginals(mc);
  return r;
}

struct ExperimentConfig {
  std::vector<MethodSpec> methods;
  EvalKind eval = EvalKind::Auto;
  MethodConfig method;
  MhConfig mcmc;
  GridReferenceOptions grid;
  unsigned jobs = 1;
  // Cap on simulated datasets; 0 selects 20 n_reps + 100.
  std::size_t max_attempts = 0;
};

struct DatasetEvaluation {
  std::vector<AccuracyReport> reports;
  ReferenceResult reference;
  bool discarded = false;
};

// Scores every method on one dataset. External methods use the Laplace base.
inline DatasetEvaluation evaluate_dataset(const GlmModel& model, const std::string& dataset, long replicate,
                                          const ExperimentConfig& cfg, std::uint64_t seed) {
  DatasetEvaluation ev;
  const GaussianApprox base = laplace(find_mode(model, Vector::Zero(model.dim()), cfg.method.newton));
  MhConfig mh = cfg.mcmc;
  mh.seed = derive_seed(seed, 1);
  ev.reference = build_reference(model, base, cfg.eval, mh, cfg.grid);
  if (!ev.reference.converged) {
    ev.discarded = true;
    return ev;
  }
  MethodConfig mcfg = cfg.method;
  mcfg.importance.seed = derive_seed(seed, 2);
  for (const auto& spec : cfg.methods) {
    AccuracyReport rep;
    if (spec.kind == MethodKind::Reference) {
      Vector acc(model.dim());
      for (Eigen::Index j = 0; j < acc.size(); ++j) {
        const auto& c = ev.reference.marginals[static_cast<std::size_t>(j)];
        acc[j] = l1_accuracy(c, [&](double x) { return c(x); });
      }
      rep = AccuracyReport::make(spec.label(), std::move(acc), 0.0, "baseline");
    } else {
      MethodOutcome o = run_method(model, spec, mcfg, &base);
      Vector acc = std::visit([&](const auto& a) { return marginal_accuracies(ev.reference.marginals, a); }, o.approx);
      rep = AccuracyReport::make(o.method, std::move(acc), o.seconds, o.status);
      rep.diagnostics = std::move(o.diagnostics);
    }
    rep.dataset = dataset;
    rep.replicate = replicate;
    rep.diagnostics["reference"] = ev.reference.kind;
    ev.reports.push_back(std::move(rep));
  }
  return ev;
}

struct ExperimentResult {
  std::vector<AccuracyReport> reports;
  std::size_t n_attempted = 0;
  std::size_t n_separated = 0;
  std::size_t n_not_converged = 0;
  std::size_t n_used = 0;
};

namespace detail {

// Runs f(i) for i in [0, n) on up to jobs threads; the first failure in index order is rethrown.
template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& f) {
  std::vector<std::exception_ptr> errs(n);
  const auto body = [&](std::size_t i) {
    try {
      f(i);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  };
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(jobs, n); ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) body(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// Simulates datasets until n_reps non-separated ones are found, then scores
// each of them. Replicate i always uses dataset index i of the design seed.
inline ExperimentResult run_experiment(const SimDesign& design, const ExperimentConfig& cfg) {
  design.validate();
  if (cfg.methods.empty()) throw InputError("experiment: no methods");
  const std::size_t cap = cfg.max_attempts ? cfg.max_attempts : 20 * design.n_reps + 100;
  ExperimentResult res;
  std::vector<std::pair<std::size_t, GlmData>> accepted;
  while (accepted.size() < design.n_reps && res.n_attempted < cap) {
    const std::size_t a = res.n_attempted++;
    GlmData data = simulate_dataset(design, a);
    if (detect_separation(data)) {
      ++res.n_separated;
    } else {
      accepted.emplace_back(a, std::move(data));
    }
  }

  const std::string label = "sim-p" + std::to_string(design.p) + "-n" + std::to_string(design.n()) + "-" +
                            to_string(design.covariates) + "-" + to_string(design.model_kind);
  std::vector<std::optional<DatasetEvaluation>> evals(accepted.size());
  detail::parallel_for(accepted.size(), cfg.jobs, [&](std::size_t i) {
    const auto& [a, data] = accepted[i];
    const GlmModel model(data, design.model_kind, design.prior_variance);
    evals[i] = evaluate_dataset(model, label, static_cast<long>(a), cfg, derive_seed(design.seed, a, 1));
  });
  for (auto& e : evals) {
    if (e->discarded) {
      ++res.n_not_converged;
      continue;
    }
    ++res.n_used;
    for (auto& r : e->reports) res.reports.push_back(std::move(r));
  }
  return res;
}

}  // namespace snm
