#pragma once

// JSON ingestion of model files and JSON serialization of solver and study
// results.
//
// Model file layout:
//   { "n": 1, "m": 1,
//     "dynamics": { "A": [[-1]], "Abar": ..., "B": [[1]], "C": ..., "Cbar": ...,
//                   "D": ..., "Gamma": ..., "Gammabar": ..., "b": [0],
//                   "sigma": [1], "gamma": [0] },
//     "cost": { "Q": [[1]], "Qbar": ..., "S": ..., "R": [[1]], "q": ..., "r": ... },
//     "initial_law": { "type": "point_mass" | "gaussian", "mean": [0],
//                      "covariance": [[1]] } }
// Matrices are row-major nested arrays; a bare number is accepted for a 1x1
// matrix or a length-1 vector. Absent coefficients are zero.

#include "lqmf/analyze.hpp"
#include "lqmf/ergodic.hpp"
#include "lqmf/model.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace lqmf {

using json = nlohmann::json;

namespace detail {

[[noreturn]] inline void json_fail(const std::string& path, const std::string& what) {
  throw InputError(path + ": " + what);
}

inline double read_number(const json& j, const std::string& path) {
  if (!j.is_number()) json_fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) json_fail(path, "non-finite value");
  return v;
}

inline int read_dimension(const json& root, const char* key) {
  const std::string path = std::string("/") + key;
  if (!root.contains(key)) json_fail(path, "missing");
  const json& j = root.at(key);
  if (!j.is_number_integer() || j.get<long long>() < 1) json_fail(path, "expected a positive integer");
  return j.get<int>();
}

inline Mat read_matrix(const json& j, int rows, int cols, const std::string& path) {
  Mat M(rows, cols);
  if (j.is_number()) {
    if (rows != 1 || cols != 1)
      json_fail(path, "expected a " + std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
    M(0, 0) = read_number(j, path);
    return M;
  }
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    json_fail(path, "expected " + std::to_string(rows) + " rows");
  for (int i = 0; i < rows; ++i) {
    const json& row = j[i];
    const std::string rp = path + "/" + std::to_string(i);
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      json_fail(rp, "expected " + std::to_string(cols) + " columns");
    for (int c = 0; c < cols; ++c) M(i, c) = read_number(row[c], rp + "/" + std::to_string(c));
  }
  return M;
}

inline Vec read_vector(const json& j, int size, const std::string& path) {
  Vec v(size);
  if (j.is_number()) {
    if (size != 1) json_fail(path, "expected a vector of length " + std::to_string(size));
    v(0) = read_number(j, path);
    return v;
  }
  if (!j.is_array() || static_cast<int>(j.size()) != size)
    json_fail(path, "expected a vector of length " + std::to_string(size));
  for (int i = 0; i < size; ++i) v(i) = read_number(j[i], path + "/" + std::to_string(i));
  return v;
}

inline const json* section(const json& root, const char* key) {
  if (!root.contains(key)) return nullptr;
  const json& j = root.at(key);
  if (!j.is_object()) json_fail(std::string("/") + key, "expected an object");
  return &j;
}

inline void reject_unknown(const json& obj, const std::string& path,
                           const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key())) json_fail(path + "/" + it.key(), "unknown key");
}

template <class T>
void read_opt(const json* obj, const std::string& path, const char* key, T& out, int rows,
              int cols) {
  if (!obj || !obj->contains(key)) return;
  if constexpr (std::is_same_v<T, Vec>)
    out = read_vector(obj->at(key), rows, path + "/" + key);
  else
    out = read_matrix(obj->at(key), rows, cols, path + "/" + key);
}

}  // namespace detail

/// Parses a model document. Errors name the offending JSON pointer.
inline Problem parse_problem(const json& root) {
  if (!root.is_object()) detail::json_fail("", "expected a JSON object");
  detail::reject_unknown(root, "", {"n", "m", "dynamics", "cost", "initial_law", "name"});
  const int n = detail::read_dimension(root, "n");
  const int m = detail::read_dimension(root, "m");

  Problem pr;
  pr.model = ModelSpec::zeros(n, m);
  pr.cost = CostSpec::zeros(n, m);
  pr.initial = InitialLaw::point_mass(Vec::Zero(n));

  const json* dyn = detail::section(root, "dynamics");
  if (dyn) {
    detail::reject_unknown(*dyn, "/dynamics", {"A", "Abar", "B", "C", "Cbar", "D", "Gamma",
                                               "Gammabar", "b", "sigma", "gamma"});
    ModelSpec& md = pr.model;
    const std::string p = "/dynamics";
    detail::read_opt(dyn, p, "A", md.A, n, n);
    detail::read_opt(dyn, p, "Abar", md.Abar, n, n);
    detail::read_opt(dyn, p, "B", md.B, n, m);
    detail::read_opt(dyn, p, "C", md.C, n, n);
    detail::read_opt(dyn, p, "Cbar", md.Cbar, n, n);
    detail::read_opt(dyn, p, "D", md.D, n, m);
    detail::read_opt(dyn, p, "Gamma", md.Gamma, n, n);
    detail::read_opt(dyn, p, "Gammabar", md.Gammabar, n, n);
    detail::read_opt(dyn, p, "b", md.b, n, 1);
    detail::read_opt(dyn, p, "sigma", md.sigma, n, 1);
    detail::read_opt(dyn, p, "gamma", md.gamma, n, 1);
  }
  const json* cst = detail::section(root, "cost");
  if (cst) {
    detail::reject_unknown(*cst, "/cost", {"Q", "Qbar", "S", "R", "q", "r"});
    CostSpec& cs = pr.cost;
    const std::string p = "/cost";
    detail::read_opt(cst, p, "Q", cs.Q, n, n);
    detail::read_opt(cst, p, "Qbar", cs.Qbar, n, n);
    detail::read_opt(cst, p, "S", cs.S, m, n);
    detail::read_opt(cst, p, "R", cs.R, m, m);
    detail::read_opt(cst, p, "q", cs.q, n, 1);
    detail::read_opt(cst, p, "r", cs.r, m, 1);
    try {
      cs.validate_and_symmetrize(n, m);
    } catch (const InputError& e) {
      detail::json_fail("/cost", e.what());
    }
  }
  const json* law = detail::section(root, "initial_law");
  if (law) {
    detail::reject_unknown(*law, "/initial_law", {"type", "mean", "covariance"});
    std::string type = "point_mass";
    if (law->contains("type")) {
      if (!law->at("type").is_string()) detail::json_fail("/initial_law/type", "expected a string");
      type = law->at("type").get<std::string>();
    }
    Vec mean = Vec::Zero(n);
    detail::read_opt(law, "/initial_law", "mean", mean, n, 1);
    if (type == "point_mass") {
      if (law->contains("covariance"))
        detail::json_fail("/initial_law/covariance", "not allowed for a point mass");
      pr.initial = InitialLaw::point_mass(mean);
    } else if (type == "gaussian") {
      Mat cov = Mat::Zero(n, n);
      detail::read_opt(law, "/initial_law", "covariance", cov, n, n);
      if (asymmetry(cov) > CostSpec::kSymmetryTolerance)
        detail::json_fail("/initial_law/covariance", "not symmetric");
      pr.initial = InitialLaw::gaussian(mean, cov);
    } else {
      detail::json_fail("/initial_law/type", "expected \"point_mass\" or \"gaussian\"");
    }
    try {
      pr.initial.validate(n);
    } catch (const InputError& e) {
      detail::json_fail("/initial_law", e.what());
    }
  }
  try {
    pr.model.validate();
  } catch (const InputError& e) {
    detail::json_fail("/dynamics", e.what());
  }
  return pr;
}

inline Problem parse_problem_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("malformed JSON: ") + e.what());
  }
  return parse_problem(root);
}

inline Problem load_problem(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot open model file: " + file);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_problem_text(ss.str());
}

// Serialization. Matrices are row-major nested arrays.

inline json to_json(const Mat& M) {
  json a = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

// NaN and infinities are not JSON numbers; they are written as null.
inline json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json problem_to_json(const Problem& pr) {
  const ModelSpec& md = pr.model;
  const CostSpec& cs = pr.cost;
  json j;
  j["n"] = md.n;
  j["m"] = md.m;
  j["dynamics"] = {{"A", to_json(md.A)},         {"Abar", to_json(md.Abar)},
                   {"B", to_json(md.B)},         {"C", to_json(md.C)},
                   {"Cbar", to_json(md.Cbar)},   {"D", to_json(md.D)},
                   {"Gamma", to_json(md.Gamma)}, {"Gammabar", to_json(md.Gammabar)},
                   {"b", to_json(md.b)},         {"sigma", to_json(md.sigma)},
                   {"gamma", to_json(md.gamma)}};
  j["cost"] = {{"Q", to_json(cs.Q)}, {"Qbar", to_json(cs.Qbar)}, {"S", to_json(cs.S)},
               {"R", to_json(cs.R)}, {"q", to_json(cs.q)},       {"r", to_json(cs.r)}};
  json law = {{"mean", to_json(pr.initial.mean)}};
  if (pr.initial.sampler == Sampler::gaussian) {
    law["type"] = "gaussian";
    law["covariance"] = to_json(pr.initial.covariance());
  } else {
    law["type"] = "point_mass";
  }
  j["initial_law"] = law;
  return j;
}

inline json to_json(const AssumptionReport& r) {
  json j = {{"h1_ok", r.h1_ok},
            {"min_eig_R", number_or_null(r.min_eig_R)},
            {"min_eig_Q_minus_SRS", number_or_null(r.min_eig_Q_tilde)},
            {"min_eig_Q_plus_Qbar_minus_SRS", number_or_null(r.min_eig_Qhat_tilde)},
            {"h2_checked", r.h2_checked}};
  if (r.h2_checked) {
    j["h2_ok"] = r.h2_ok;
    j["margin_mean_loop"] = number_or_null(r.margin_mean_loop);
    j["margin_state_loop"] = number_or_null(r.margin_state_loop);
  }
  return j;
}

inline json to_json(const StationaryMoments& s) {
  return {{"mean", to_json(s.mean)}, {"second_moment", to_json(s.second_moment)}};
}

inline json to_json(const ErgodicSolution& s) {
  return {{"P", to_json(s.P)},
          {"Pibar", to_json(s.Pibar)},
          {"Pi", to_json(s.Pi())},
          {"p", to_json(s.p)},
          {"c0", s.c0},
          {"Theta", to_json(s.Theta)},
          {"Thetabar", to_json(s.Thetabar)},
          {"theta", to_json(s.theta)},
          {"zeta_star", s.zeta_star},
          {"state_moments", to_json(s.state_moments)},
          {"condmean_moments", to_json(s.condmean_moments)},
          {"residuals",
           {{"psi1", s.residual_psi1},
            {"psibar2", s.residual_psibar2},
            {"psi3", s.residual_psi3},
            {"psi4", s.residual_psi4}}},
          {"margins", {{"state_loop", s.margin_state_loop}, {"mean_loop", s.margin_mean_loop}}},
          {"newton_iterations", s.newton_iterations}};
}

inline json to_json(const DecayFit& f) {
  json j = {{"fitted_rate", f.fitted_rate},
            {"fitted_prefactor", f.fitted_prefactor},
            {"r_squared", f.r_squared},
            {"points", f.x.size()}};
  if (f.exact_zero) j["exact_zero"] = true;
  return j;
}

inline json to_json(const CostEstimate& e) {
  return {{"estimate", e.estimate}, {"std_error", number_or_null(e.std_error)}};
}

}  // namespace lqmf
