#pragma once

// JSON for parameters, match results and reports; CSV for marginal curves.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "snm/errors.hpp"
#include "snm/estimators.hpp"
#include "snm/harness.hpp"
#include "snm/matching.hpp"
#include "snm/msn.hpp"
#include "snm/reference.hpp"

namespace snm {

using Json = nlohmann::ordered_json;

inline Json vector_json(const Vector& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

inline Json matrix_json(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vector_json(m.row(i).transpose()));
  return a;
}

inline Vector vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw InputError(what + ": expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InputError(what + ": expected an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw InputError(what + ": expected an array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector r = vector_from_json(j[static_cast<std::size_t>(i)], what);
    if (r.size() != n) throw InputError(what + ": matrix must be square");
    m.row(i) = r.transpose();
  }
  return m;
}

inline const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw InputError(std::string("json: missing field '") + key + "'");
  return j.at(key);
}

inline Json to_json(const MsnParams& p) {
  return Json{{"kind", "msn"}, {"mu", vector_json(p.mu())}, {"sigma", matrix_json(p.sigma())}, {"d", vector_json(p.d())}};
}

inline Json to_json(const GaussianApprox& g) {
  return Json{{"kind", "gaussian"}, {"mean", vector_json(g.mean)}, {"cov", matrix_json(g.cov)}, {"source", g.source}};
}

inline GaussianApprox gaussian_from_json(const Json& j) {
  if (j.contains("mu") && !j.contains("mean")) {
    const Vector d = vector_from_json(field(j, "d"), "d");
    if (d.cwiseAbs().maxCoeff() != 0.0) throw InputError("expected a Gaussian approximation, got skewness d != 0");
    return GaussianApprox(vector_from_json(field(j, "mu"), "mu"), matrix_from_json(field(j, "sigma"), "sigma"),
                          "external");
  }
  const std::string source = j.contains("source") ? j.at("source").get<std::string>() : "external";
  return GaussianApprox(vector_from_json(field(j, "mean"), "mean"), matrix_from_json(field(j, "cov"), "cov"), source);
}

inline MsnParams msn_from_json(const Json& j) {
  if (j.contains("mean") && !j.contains("mu")) {
    const GaussianApprox g = gaussian_from_json(j);
    return MsnParams::gaussian(g.mean, g.cov);
  }
  return MsnParams(vector_from_json(field(j, "mu"), "mu"), matrix_from_json(field(j, "sigma"), "sigma"),
                   vector_from_json(field(j, "d"), "d"));
}

inline Approximation approximation_from_json(const Json& j) {
  if (j.contains("mu")) return msn_from_json(j);
  return gaussian_from_json(j);
}

inline Json to_json(const Approximation& a) {
  return std::visit([](const auto& x) { return to_json(x); }, a);
}

inline Json to_json(const MatchResult& r) {
  Json j{{"status", to_string(r.status)}};
  if (!r.reason.empty()) j["reason"] = r.reason;
  j["kappa"] = r.kappa ? Json(*r.kappa) : Json(nullptr);
  j["adjust"] = r.adjust ? Json(*r.adjust) : Json(nullptr);
  j["max_residual"] = r.residuals.empty() ? Json(nullptr) : Json(r.max_residual());
  j["residuals"] = r.residuals;
  j["n_kappa_roots"] = r.n_kappa_roots;
  j["params"] = r.params ? to_json(*r.params) : Json(nullptr);
  return j;
}

inline MatchStatus match_status_from_string(const std::string& s) {
  if (s == "exact") return MatchStatus::Exact;
  if (s == "adjusted") return MatchStatus::Adjusted;
  if (s == "failed") return MatchStatus::Failed;
  throw InputError("unknown match status '" + s + "'");
}

inline MatchResult match_result_from_json(const Json& j) {
  MatchResult r;
  r.status = match_status_from_string(field(j, "status").get<std::string>());
  if (j.contains("reason")) r.reason = j.at("reason").get<std::string>();
  if (j.contains("kappa") && !j.at("kappa").is_null()) r.kappa = j.at("kappa").get<double>();
  if (j.contains("adjust") && !j.at("adjust").is_null()) r.adjust = j.at("adjust").get<double>();
  if (j.contains("residuals")) r.residuals = j.at("residuals").get<std::vector<double>>();
  if (j.contains("n_kappa_roots")) r.n_kappa_roots = j.at("n_kappa_roots").get<int>();
  if (j.contains("params") && !j.at("params").is_null()) r.params = msn_from_json(j.at("params"));
  return r;
}

inline Json to_json(const AccuracyReport& r) {
  Json j{{"method", r.method}, {"dataset", r.dataset}, {"replicate", r.replicate}};
  j["accuracy"] = vector_json(r.per_marginal_accuracy);
  j["mean_accuracy"] = r.mean_accuracy;
  j["elapsed_seconds"] = r.elapsed_seconds;
  j["status"] = r.status;
  j["diagnostics"] = Json::object();
  for (const auto& [k, v] : r.diagnostics) j["diagnostics"][k] = v;
  return j;
}

inline AccuracyReport report_from_json(const Json& j) {
  AccuracyReport r;
  r.method = field(j, "method").get<std::string>();
  r.dataset = field(j, "dataset").get<std::string>();
  r.replicate = field(j, "replicate").get<long>();
  r.per_marginal_accuracy = vector_from_json(field(j, "accuracy"), "accuracy");
  r.mean_accuracy = field(j, "mean_accuracy").get<double>();
  r.elapsed_seconds = field(j, "elapsed_seconds").get<double>();
  r.status = field(j, "status").get<std::string>();
  if (j.contains("diagnostics")) {
    for (const auto& [k, v] : j.at("diagnostics").items()) r.diagnostics[k] = v.get<std::string>();
  }
  return r;
}

inline std::string to_jsonl(const std::vector<AccuracyReport>& reports) {
  std::string out;
  for (const auto& r : reports) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<AccuracyReport> reports_from_jsonl(std::istream& in) {
  std::vector<AccuracyReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(report_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw InputError(std::string("report line: ") + e.what());
    }
  }
  return out;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open '" + path + "'");
  try {
    return Json::parse(f);
  } catch (const Json::exception& e) {
    throw InputError("'" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Marginal curves in long format: coordinate,grid,density.

inline std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_marginals_csv(std::ostream& os, const std::vector<MarginalCurve>& curves) {
  os << "coordinate,grid,density\n";
  for (std::size_t j = 0; j < curves.size(); ++j) {
    const auto& c = curves[j];
    for (Eigen::Index i = 0; i < c.grid.size(); ++i) {
      os << j << ',' << format_double(c.grid[i]) << ',' << format_double(c.density[i]) << '\n';
    }
  }
}

inline std::vector<MarginalCurve> read_marginals_csv(std::istream& in) {
  const CsvTable t = read_csv(in);
  if (t.header != std::vector<std::string>{"coordinate", "grid", "density"}) {
    throw InputError("marginals csv: header must be coordinate,grid,density");
  }
  std::map<long, std::pair<std::vector<double>, std::vector<double>>> by;
  for (const auto& r : t.rows) {
    const auto j = detail::parse_number(r[0]);
    const auto x = detail::parse_number(r[1]);
    const auto d = detail::parse_number(r[2]);
    if (!j || !x || !d || *j < 0 || *j != std::floor(*j)) throw InputError("marginals csv: malformed row");
    auto& [g, v] = by[static_cast<long>(*j)];
    g.push_back(*x);
    v.push_back(*d);
  }
  std::vector<MarginalCurve> out;
  long expect = 0;
  for (auto& [j, gv] : by) {
    if (j != expect++) throw InputError("marginals csv: coordinates must be 0, 1, ..., p-1");
    out.emplace_back(Eigen::Map<Vector>(gv.first.data(), static_cast<Eigen::Index>(gv.first.size())),
                     Eigen::Map<Vector>(gv.second.data(), static_cast<Eigen::Index>(gv.second.size())),
                     "coordinate " + std::to_string(j));
  }
  if (out.empty()) throw InputError("marginals csv: no rows");
  return out;
}

// Analytic marginal densities of an approximation on mean +- half_width sd.
inline std::vector<MarginalCurve> approximation_marginals(const Approximation& a, Eigen::Index n_points = 8001,
                                                          double half_width = 8.0) {
  const MsnParams P = as_msn(a);
  const MomentStats m = moments(P);
  std::vector<MarginalCurve> out;
  for (Eigen::Index j = 0; j < P.dim(); ++j) {
    const MsnParams mj = marginal(P, j);
    const double sd = std::sqrt(m.cov(j, j));
    const Vector g = Vector::LinSpaced(n_points, m.mean[j] - half_width * sd, m.mean[j] + half_width * sd);
    Vector d(n_points);
    for (Eigen::Index i = 0; i < n_points; ++i) d[i] = density_1d(mj, g[i]);
    out.emplace_back(g, d, "coordinate " + std::to_string(j));
  }
  return out;
}

}  // namespace snm
