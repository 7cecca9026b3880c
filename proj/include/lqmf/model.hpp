#pragma once

// Problem data for the linear-quadratic mean-field control problem with
// common noise:
//
//   dX = (A X + Abar E[X|F0] + B u + b) dt
//      + (C X + Cbar E[X|F0] + D u + sigma) dW
//      + (Gamma X + Gammabar E[X|F0] + gamma) dW0
//
//   f(x, xbar, u) = x'Qx + 2u'Sx + u'Ru + 2q'x + 2r'u + xbar'Qbar xbar

#include "lqmf/kernels.hpp"
#include "lqmf/types.hpp"

#include <optional>
#include <string>

namespace lqmf {

struct ModelSpec {
  int n = 0;
  int m = 0;
  Mat A, Abar, C, Cbar, Gamma, Gammabar;
  Mat B, D;
  Vec b, sigma, gamma;

  /// All-zero model of the given dimensions.
  static ModelSpec zeros(int n, int m) {
    ModelSpec s;
    s.n = n;
    s.m = m;
    s.A = s.Abar = s.C = s.Cbar = s.Gamma = s.Gammabar = Mat::Zero(n, n);
    s.B = s.D = Mat::Zero(n, m);
    s.b = s.sigma = s.gamma = Vec::Zero(n);
    return s;
  }

  void validate() const {
    if (n <= 0 || m <= 0) throw InputError("model: n and m must be positive");
    auto sq = [&](const Mat& M, const char* name) {
      if (M.rows() != n || M.cols() != n)
        throw InputError(std::string("model: ") + name + " must be n x n");
      if (!M.allFinite())
        throw InputError(std::string("model: ") + name + " has non-finite entries");
    };
    auto nm = [&](const Mat& M, const char* name) {
      if (M.rows() != n || M.cols() != m)
        throw InputError(std::string("model: ") + name + " must be n x m");
      if (!M.allFinite())
        throw InputError(std::string("model: ") + name + " has non-finite entries");
    };
    auto vn = [&](const Vec& v, const char* name) {
      if (v.size() != n)
        throw InputError(std::string("model: ") + name + " must have length n");
      if (!v.allFinite())
        throw InputError(std::string("model: ") + name + " has non-finite entries");
    };
    sq(A, "A");
    sq(Abar, "Abar");
    sq(C, "C");
    sq(Cbar, "Cbar");
    sq(Gamma, "Gamma");
    sq(Gammabar, "Gammabar");
    nm(B, "B");
    nm(D, "D");
    vn(b, "b");
    vn(sigma, "sigma");
    vn(gamma, "gamma");
  }

  [[nodiscard]] bool bar_free() const {
    return Abar.isZero(0.0) && Cbar.isZero(0.0) && Gammabar.isZero(0.0);
  }
};

struct CostSpec {
  Mat Q, Qbar, S, R;
  Vec q, r;

  static CostSpec zeros(int n, int m) {
    CostSpec c;
    c.Q = c.Qbar = Mat::Zero(n, n);
    c.S = Mat::Zero(m, n);
    c.R = Mat::Zero(m, m);
    c.q = Vec::Zero(n);
    c.r = Vec::Zero(m);
    return c;
  }

  /// Checks dimensions and symmetrizes Q, Qbar, R. Asymmetry above 1e-12 is
  /// rejected with the offending matrix named.
  void validate_and_symmetrize(int n, int m) {
    auto check = [&](Mat& M, int rows, int cols, const char* name, bool symmetric) {
      if (M.rows() != rows || M.cols() != cols)
        throw InputError(std::string("cost: ") + name + " has wrong dimensions");
      if (!M.allFinite())
        throw InputError(std::string("cost: ") + name + " has non-finite entries");
      if (symmetric) {
        if (asymmetry(M) > kSymmetryTolerance)
          throw InputError(std::string("cost: ") + name + " is not symmetric");
        M = symmetrize(M);
      }
    };
    check(Q, n, n, "Q", true);
    check(Qbar, n, n, "Qbar", true);
    check(S, m, n, "S", false);
    check(R, m, m, "R", true);
    if (q.size() != n || !q.allFinite()) throw InputError("cost: q must be a finite n-vector");
    if (r.size() != m || !r.allFinite()) throw InputError("cost: r must be a finite m-vector");
  }

  static constexpr double kSymmetryTolerance = 1e-12;
};

enum class Sampler { point_mass, gaussian };

/// First two moments of the initial law plus how to draw from it.
struct InitialLaw {
  Vec mean;
  Mat second_moment;
  Sampler sampler = Sampler::point_mass;

  static InitialLaw point_mass(const Vec& x) {
    return {x, x * x.transpose(), Sampler::point_mass};
  }
  static InitialLaw gaussian(const Vec& mean, const Mat& covariance) {
    return {mean, symmetrize(covariance) + mean * mean.transpose(), Sampler::gaussian};
  }

  [[nodiscard]] Mat covariance() const { return symmetrize(second_moment - mean * mean.transpose()); }

  void validate(int n) const {
    if (mean.size() != n) throw InputError("initial_law: mean must have length n");
    if (second_moment.rows() != n || second_moment.cols() != n)
      throw InputError("initial_law: second moment must be n x n");
    if (!mean.allFinite() || !second_moment.allFinite())
      throw InputError("initial_law: non-finite entries");
    if (min_eigenvalue(covariance()) < -1e-10)
      throw InputError("initial_law: covariance is not positive semidefinite");
  }
};

/// The full problem as read from a model file.
struct Problem {
  ModelSpec model;
  CostSpec cost;
  InitialLaw initial;
};

struct AssumptionReport {
  bool h1_ok = false;
  bool h2_ok = false;
  // min eigenvalues of R, Q - S'R^{-1}S, Q + Qbar - S'R^{-1}S
  double min_eig_R = 0.0;
  double min_eig_Q_tilde = 0.0;
  double min_eig_Qhat_tilde = 0.0;
  // mean-square stability margins of the mean loop and the fluctuation loop
  double margin_mean_loop = 0.0;
  double margin_state_loop = 0.0;
  bool h2_checked = false;
};

inline constexpr double kPositiveDefiniteThreshold = 1e-10;

inline AssumptionReport validate_h1(const CostSpec& cost_in) {
  CostSpec cost = cost_in;
  const int n = static_cast<int>(cost.Q.rows());
  const int m = static_cast<int>(cost.R.rows());
  cost.validate_and_symmetrize(n, m);

  AssumptionReport rep;
  rep.min_eig_R = min_eigenvalue(cost.R);
  if (rep.min_eig_R > kPositiveDefiniteThreshold) {
    const Mat SRS = cost.S.transpose() * cost.R.ldlt().solve(cost.S);
    rep.min_eig_Q_tilde = min_eigenvalue(cost.Q - SRS);
    rep.min_eig_Qhat_tilde = min_eigenvalue(cost.Q + cost.Qbar - SRS);
  } else {
    rep.min_eig_Q_tilde = rep.min_eig_Qhat_tilde = -INFINITY;
  }
  rep.h1_ok = rep.min_eig_R > kPositiveDefiniteThreshold &&
              rep.min_eig_Q_tilde > kPositiveDefiniteThreshold &&
              rep.min_eig_Qhat_tilde > kPositiveDefiniteThreshold;
  return rep;
}

/// Certifies the candidate pair (theta, thetabar) as a stabilizer: the mean
/// loop [A+Abar+B thetabar, Gamma+Gammabar] and the fluctuation loop
/// [A+B theta, C+D theta, Gamma] must both be mean-square stable.
inline AssumptionReport validate_h2(const ModelSpec& model, const Mat& theta, const Mat& thetabar) {
  model.validate();
  if (theta.rows() != model.m || theta.cols() != model.n || thetabar.rows() != model.m ||
      thetabar.cols() != model.n)
    throw InputError("validate_h2: gains must be m x n");
  AssumptionReport rep;
  rep.h2_checked = true;
  rep.margin_mean_loop = mean_square_stability_margin(
      model.A + model.Abar + model.B * thetabar, {model.Gamma + model.Gammabar});
  rep.margin_state_loop = mean_square_stability_margin(
      model.A + model.B * theta, {model.C + model.D * theta, model.Gamma});
  rep.h2_ok = rep.margin_mean_loop < 0.0 && rep.margin_state_loop < 0.0;
  return rep;
}

inline double running_cost(const CostSpec& cost, const Vec& x, const Vec& xbar, const Vec& u) {
  return x.dot(cost.Q * x) + 2.0 * u.dot(cost.S * x) + u.dot(cost.R * u) + 2.0 * cost.q.dot(x) +
         2.0 * cost.r.dot(u) + xbar.dot(cost.Qbar * xbar);
}

}  // namespace lqmf
