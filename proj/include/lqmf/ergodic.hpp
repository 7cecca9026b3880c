#pragma once

// Ergodic mean-field control: the algebraic system
//   Psi1(P) = 0, Psibar2(P, Pibar) = 0, Psi3(P, Pi, p) = 0, Psi4(P, Pi, p) = c0,
// its stationary feedback, and the stationary constant zeta*.

#include "lqmf/kernels.hpp"
#include "lqmf/mfc_riccati.hpp"
#include "lqmf/model.hpp"
#include "lqmf/types.hpp"

#include <sstream>

namespace lqmf {

struct AreOptions {
  double tol = 1e-10;          // residual bound on Psi1 and Psibar2 (max-abs norm)
  double flatness = 1e-4;      // horizon-limit stopping threshold
  double max_horizon = 200.0;  // give up on the horizon limit past this tau
  double step = 0.01;          // RK4 step for the horizon limit
  int max_newton = 20;
};

struct AreSolution {
  Mat P;
  Mat Pibar;
  double residual_P = 0.0;
  double residual_Pibar = 0.0;
  double horizon_used = 0.0;  // tau at which the horizon limit flattened
  int newton_iterations = 0;
};

namespace detail {

inline double max_abs(const Mat& M) { return M.size() == 0 ? 0.0 : M.cwiseAbs().maxCoeff(); }

[[noreturn]] inline void throw_non_stabilizable(double tau, const std::string& why) {
  std::ostringstream os;
  os << "model appears non-stabilizable (H2 fails): " << why << " at tau = " << tau;
  throw SolverError(os.str());
}

// One Newton-Kleinman step for P: freeze Theta = Theta(P) and solve the
// linear equation of the closed loop for the next iterate.
inline Mat newton_step_P(const RiccatiMaps& maps, const Mat& P) {
  const ModelSpec& md = maps.model();
  const CostSpec& cs = maps.cost();
  const Mat Th = maps.Theta(P);
  const Mat Qt = cs.Q + Th.transpose() * cs.S + cs.S.transpose() * Th +
                 Th.transpose() * cs.R * Th;
  return lyapunov_solve({md.A + md.B * Th, {md.C + md.D * Th, md.Gamma}, symmetrize(Qt)});
}

// Newton-Kleinman step for Pibar with P frozen. The Pibar equation is an LQ
// Riccati equation with weight R(P), cross term D'P Chat + S and state weight
// Qhat + Chat'P Chat.
inline Mat newton_step_Pibar(const RiccatiMaps& maps, const Mat& P, const Mat& Pibar) {
  const ModelSpec& md = maps.model();
  const CostSpec& cs = maps.cost();
  const Mat Rp = maps.calR(P);
  const Mat Sp = md.D.transpose() * P * maps.Chat() + cs.S;
  const Mat Qp = cs.Q + cs.Qbar + maps.Chat().transpose() * P * maps.Chat();
  const Mat Thb = maps.Thetabar(P, Pibar);
  const Mat Qt = Qp + Thb.transpose() * Sp + Sp.transpose() * Thb + Thb.transpose() * Rp * Thb;
  return lyapunov_solve({maps.Ahat() + md.B * Thb, {maps.Gammahat()}, symmetrize(Qt)});
}

}  // namespace detail

/// Stabilizing solution (P, Pibar): horizon limit of the finite Riccati flow to
/// enter the basin, then Newton-Kleinman polish.
inline AreSolution solve_are(const ModelSpec& model, const CostSpec& cost,
                             const AreOptions& opt = {}) {
  model.validate();
  detail::require_h1(cost);
  const RiccatiMaps maps(model, cost);
  const Eigen::Index n = model.n;

  // Horizon limit in tau = T - t: dP/dtau = Psi1(P), dPibar/dtau = Psibar2(P, Pibar).
  auto field = [&](const QuadState& s) {
    const PsiFields f = psi_fields(maps, s.P, s.M, Vec::Zero(n));
    return QuadState{f.psi1, f.psibar2, Vec::Zero(n), 0.0};
  };
  QuadState x = QuadState::zeros(n);
  const double h = opt.step;
  double tau = 0.0;
  AreSolution out;
  try {
    for (;;) {
      const QuadState k1 = field(x);
      if (!is_finite(k1)) detail::throw_non_stabilizable(tau, "Riccati flow diverged");
      if (detail::max_abs(k1.P) <= opt.flatness && detail::max_abs(k1.M) <= opt.flatness) break;
      if (tau >= opt.max_horizon)
        detail::throw_non_stabilizable(tau, "horizon limit did not flatten");
      const QuadState k2 = field(x + (0.5 * h) * k1);
      const QuadState k3 = field(x + (0.5 * h) * k2);
      const QuadState k4 = field(x + h * k3);
      x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      x.P = symmetrize(x.P);
      x.M = symmetrize(x.M);
      tau += h;
      if (!is_finite(x)) detail::throw_non_stabilizable(tau, "Riccati flow diverged");
    }
  } catch (const SolverError& e) {
    const std::string what = e.what();
    if (what.rfind("model appears non-stabilizable", 0) == 0) throw;
    detail::throw_non_stabilizable(tau, what);
  }
  out.horizon_used = tau;

  Mat P = x.P;
  Mat Pibar = x.M;
  auto res_P = [&](const Mat& X) { return detail::max_abs(psi_fields(maps, X, X, Vec::Zero(n)).psi1); };
  double rP = res_P(P);
  int it = 0;
  for (; it < opt.max_newton && rP > 0.0; ++it) {
    Mat next = detail::newton_step_P(maps, P);
    const double rn = res_P(next);
    if (!(rn < rP)) break;
    P = std::move(next);
    rP = rn;
    if (rP <= 1e-15 * (1.0 + detail::max_abs(P))) break;
  }
  auto res_M = [&](const Mat& X) {
    return detail::max_abs(psi_fields(maps, P, X, Vec::Zero(n)).psibar2);
  };
  double rM = res_M(Pibar);
  int jt = 0;
  for (; jt < opt.max_newton && rM > 0.0; ++jt) {
    Mat next = detail::newton_step_Pibar(maps, P, Pibar);
    const double rn = res_M(next);
    if (!(rn < rM)) break;
    Pibar = std::move(next);
    rM = rn;
    if (rM <= 1e-15 * (1.0 + detail::max_abs(Pibar))) break;
  }
  out.P = symmetrize(P);
  out.Pibar = symmetrize(Pibar);
  out.residual_P = rP;
  out.residual_Pibar = rM;
  out.newton_iterations = it + jt;

  if (!(rP <= opt.tol) || !(rM <= opt.tol)) {
    std::ostringstream os;
    os << "solve_are: residuals " << rP << ", " << rM << " exceed tolerance " << opt.tol;
    throw SolverError(os.str());
  }
  if (!(min_eigenvalue(out.P) > 0.0) || !(min_eigenvalue(out.Pibar) > 0.0))
    throw SolverError("solve_are: solution is not positive definite");
  const AssumptionReport h2 = validate_h2(model, maps.Theta(out.P), maps.Thetabar(out.P, out.Pibar));
  if (!h2.h2_ok) {
    std::ostringstream os;
    os << "model appears non-stabilizable (H2 fails): stabilizer margins "
       << h2.margin_state_loop << ", " << h2.margin_mean_loop;
    throw SolverError(os.str());
  }
  return out;
}

struct ErgodicAffine {
  Vec p;
  double c0 = 0.0;
};

/// Solves the linear equation Psi3 = 0 for p and evaluates c0 = Psi4.
inline ErgodicAffine solve_ergodic_affine(const ModelSpec& model, const CostSpec& cost,
                                          const Mat& P, const Mat& Pibar) {
  const RiccatiMaps maps(model, cost);
  const Eigen::Index n = model.n;
  // Psi3 is affine in p with linear part (Ahat + B Thetabar)'.
  const Mat F = (maps.Ahat() + model.B * maps.Thetabar(P, Pibar)).transpose();
  const Vec rest = psi_fields(maps, P, Pibar, Vec::Zero(n)).psi3;
  Eigen::PartialPivLU<Mat> lu(F);
  if (!(lu.rcond() > 1e-12)) throw SolverError("affine stationary system singular");
  ErgodicAffine out;
  out.p = -lu.solve(rest);
  out.c0 = psi_fields(maps, P, Pibar, out.p).psi4;
  return out;
}

struct ErgodicSolution {
  Mat P, Pibar;
  Vec p;
  double c0 = 0.0;
  Mat Theta, Thetabar;
  Vec theta;
  double zeta_star = 0.0;
  StationaryMoments state_moments;
  StationaryMoments condmean_moments;
  // audit data
  double residual_psi1 = 0.0;
  double residual_psibar2 = 0.0;
  double residual_psi3 = 0.0;
  double residual_psi4 = 0.0;
  double margin_state_loop = 0.0;
  double margin_mean_loop = 0.0;
  int newton_iterations = 0;

  [[nodiscard]] Mat Pi() const { return Pibar - P; }
};

inline FeedbackLaw ergodic_feedback(const ErgodicSolution& sol) {
  FeedbackLaw law;
  law.times = {0.0};
  law.Theta = {sol.Theta};
  law.Thetabar = {sol.Thetabar};
  law.theta = {sol.theta};
  return law;
}

struct ZetaReport {
  double zeta_star = 0.0;
  StationaryMoments state;
  StationaryMoments condmean;
};

/// Stationary moments of the ergodic closed loop and zeta*.
///
/// The conditional mean m = E[X|F0] follows
///   dm = ((A + Abar + B Thetabar) m + B theta + b) dt + ((Gamma + Gammabar) m + gamma) dW0.
/// Writing the state loop as
///   dX = (A1 X + A2 m + b1) dt + (C1 X + C2 m + s1) dW + (Gamma X + Gammabar m + gamma) dW0
/// with A1 = A + B Theta, A2 = Abar + B (Thetabar - Theta), C1 = C + D Theta,
/// C2 = Cbar + D (Thetabar - Theta), b1 = B theta + b, s1 = D theta + sigma, and
/// using E[X m'] = E[m m'] = M0, E[X] = mu, the second moment V of X solves
///   A1 V + V A1' + C1 V C1' + Gamma V Gamma'
///   + A2 M0 + M0 A2' + b1 mu' + mu b1'
///   + C1 M0 C2' + C2 M0 C1' + C2 M0 C2' + (C1 + C2) mu s1' + s1 mu' (C1 + C2)' + s1 s1'
///   + Gamma M0 Gammabar' + Gammabar M0 Gamma' + Gammabar M0 Gammabar'
///   + (Gamma + Gammabar) mu gamma' + gamma mu' (Gamma + Gammabar)' + gamma gamma' = 0.
/// Then zeta* = tr(Pi M0) + 2 <p, mu> + tr(P V).
inline ZetaReport stationary_constant_zeta(const ModelSpec& md, const Mat& P, const Mat& Pibar,
                                           const Vec& p, const Mat& Theta, const Mat& Thetabar,
                                           const Vec& theta) {
  ZetaReport z;
  const Mat Gh = md.Gamma + md.Gammabar;
  z.condmean = stationary_affine_moments(md.A + md.Abar + md.B * Thetabar, md.B * theta + md.b,
                                         Gh, md.gamma, "conditional mean");
  const Vec& mu = z.condmean.mean;
  const Mat& M0 = z.condmean.second_moment;

  const Mat A1 = md.A + md.B * Theta;
  const Mat A2 = md.Abar + md.B * (Thetabar - Theta);
  const Mat C1 = md.C + md.D * Theta;
  const Mat C2 = md.Cbar + md.D * (Thetabar - Theta);
  const Vec b1 = md.B * theta + md.b;
  const Vec s1 = md.D * theta + md.sigma;
  const Mat& G = md.Gamma;
  const Mat& Gb = md.Gammabar;
  const Vec& g = md.gamma;
  const Mat C12 = C1 + C2;

  if (!(mean_square_stability_margin(A1, {C1, G}) < 0.0))
    throw SolverError("no stationary law: the state loop is not mean-square stable");
  Mat forcing = A2 * M0 + M0 * A2.transpose() + b1 * mu.transpose() + mu * b1.transpose() +
                C1 * M0 * C2.transpose() + C2 * M0 * C1.transpose() + C2 * M0 * C2.transpose() +
                C12 * mu * s1.transpose() + s1 * mu.transpose() * C12.transpose() +
                s1 * s1.transpose() + G * M0 * Gb.transpose() + Gb * M0 * G.transpose() +
                Gb * M0 * Gb.transpose() + Gh * mu * g.transpose() +
                g * mu.transpose() * Gh.transpose() + g * g.transpose();
  z.state.tag = "state";
  z.state.mean = mu;
  z.state.second_moment =
      lyapunov_solve({A1.transpose(), {C1.transpose(), G.transpose()}, symmetrize(forcing)});
  const Mat Pi = Pibar - P;
  z.zeta_star = (Pi * M0).trace() + 2.0 * p.dot(mu) + (P * z.state.second_moment).trace();
  return z;
}

inline ZetaReport stationary_constant_zeta(const ModelSpec& model, const ErgodicSolution& s) {
  return stationary_constant_zeta(model, s.P, s.Pibar, s.p, s.Theta, s.Thetabar, s.theta);
}

inline ErgodicSolution solve_ergodic(const ModelSpec& model, const CostSpec& cost,
                                     const AreOptions& opt = {}) {
  const AreSolution are = solve_are(model, cost, opt);
  const ErgodicAffine aff = solve_ergodic_affine(model, cost, are.P, are.Pibar);
  const RiccatiMaps maps(model, cost);

  ErgodicSolution s;
  s.P = are.P;
  s.Pibar = are.Pibar;
  s.p = aff.p;
  s.c0 = aff.c0;
  s.Theta = maps.Theta(s.P);
  s.Thetabar = maps.Thetabar(s.P, s.Pibar);
  s.theta = maps.theta(s.p, s.P);
  s.newton_iterations = are.newton_iterations;

  const PsiFields f = psi_fields(maps, s.P, s.Pibar, s.p);
  s.residual_psi1 = detail::max_abs(f.psi1);
  s.residual_psibar2 = detail::max_abs(f.psibar2);
  s.residual_psi3 = f.psi3.size() ? f.psi3.cwiseAbs().maxCoeff() : 0.0;
  s.residual_psi4 = std::abs(f.psi4 - s.c0);
  const AssumptionReport h2 = validate_h2(model, s.Theta, s.Thetabar);
  s.margin_state_loop = h2.margin_state_loop;
  s.margin_mean_loop = h2.margin_mean_loop;

  const ZetaReport z = stationary_constant_zeta(model, s);
  s.zeta_star = z.zeta_star;
  s.state_moments = z.state;
  s.condmean_moments = z.condmean;
  return s;
}

/// Relative value U(mu0) - zeta*.
inline double relative_value(const ErgodicSolution& s, const InitialLaw& law) {
  const Vec& mu = law.mean;
  return mu.dot(s.Pi() * mu) + 2.0 * s.p.dot(mu) + (s.P * law.second_moment).trace() -
         s.zeta_star;
}

struct HorizonCostCheck {
  double T = 0.0;
  double value = 0.0;          // U_T(mu0)
  double per_unit_time = 0.0;  // U_T(mu0) / T
  double gap = 0.0;            // |U_T/T - c0|
  bool consistent = false;     // gap <= 10 / T
};

/// Independent estimate of c0 through the finite-horizon value U_T(mu0) / T.
inline HorizonCostCheck ergodic_cost_from_horizon(const ModelSpec& model, const CostSpec& cost,
                                                  const InitialLaw& law, double T, double c0) {
  if (!(T > 0.0)) throw InputError("ergodic_cost_from_horizon: T must be positive");
  const RiccatiPath path = solve_mfc_riccati(model, cost, T);
  HorizonCostCheck out;
  out.T = T;
  out.value = value_mfc(path, law, cost, model).value;
  out.per_unit_time = out.value / T;
  out.gap = std::abs(out.per_unit_time - c0);
  out.consistent = out.gap <= 10.0 / T;
  return out;
}

}  // namespace lqmf
