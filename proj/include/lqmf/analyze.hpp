#pragma once

// Empirical rate studies: exponential fits of turnpike profiles, log-log
// slopes of the large-population gaps, and long-horizon value limits.

#include "lqmf/ergodic.hpp"
#include "lqmf/mfc_riccati.hpp"
#include "lqmf/simulate.hpp"
#include "lqmf/soc_riccati.hpp"
#include "lqmf/types.hpp"

#include <string>
#include <vector>

namespace lqmf {

/// Least-squares fit of log(value) against the abscissa (or log abscissa).
struct DecayFit {
  std::vector<double> x;
  std::vector<double> y;
  double fitted_rate = 0.0;       // lambda in y ~ K exp(-lambda x), or the log-log slope
  double fitted_prefactor = 0.0;  // K
  double r_squared = 0.0;
  bool exact_zero = false;        // series identically zero, fit skipped
};

namespace detail {

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 1.0;
};

inline LineFit least_squares_line(const std::vector<double>& u, const std::vector<double>& v) {
  const std::size_t n = u.size();
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= double(n);
  mv /= double(n);
  double suu = 0.0, suv = 0.0, svv = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    suu += (u[i] - mu) * (u[i] - mu);
    suv += (u[i] - mu) * (v[i] - mv);
    svv += (v[i] - mv) * (v[i] - mv);
  }
  LineFit f;
  f.slope = suu > 0.0 ? suv / suu : 0.0;
  f.intercept = mv - f.slope * mu;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = v[i] - (f.intercept + f.slope * u[i]);
    ssr += r * r;
  }
  // a series with no spread is fitted exactly
  f.r2 = svv > 1e-300 ? std::max(0.0, 1.0 - ssr / svv) : 1.0;
  return f;
}

inline void check_series(const std::vector<double>& x, const std::vector<double>& y,
                         const char* who) {
  if (x.size() != y.size()) throw InputError(std::string(who) + ": length mismatch");
  if (x.size() < 3) throw InputError(std::string(who) + ": needs at least 3 points");
  for (std::size_t i = 1; i < x.size(); ++i)
    if (!(x[i] > x[i - 1]))
      throw InputError(std::string(who) + ": abscissas must be strictly increasing");
  for (double v : y)
    if (!(v > 0.0) || !std::isfinite(v))
      throw InputError(std::string(who) + ": values must be strictly positive");
}

}  // namespace detail

/// y ~ K exp(-lambda x).
inline DecayFit fit_exp_decay(const std::vector<double>& x, const std::vector<double>& y) {
  detail::check_series(x, y, "fit_exp_decay");
  std::vector<double> ly(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) ly[i] = std::log(y[i]);
  const detail::LineFit f = detail::least_squares_line(x, ly);
  DecayFit out;
  out.x = x;
  out.y = y;
  out.fitted_rate = -f.slope;
  out.fitted_prefactor = std::exp(f.intercept);
  out.r_squared = f.r2;
  return out;
}

/// y ~ K x^slope; fitted_rate holds the slope.
inline DecayFit fit_log_log(const std::vector<double>& x, const std::vector<double>& y) {
  detail::check_series(x, y, "fit_log_log");
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(x[i] > 0.0)) throw InputError("fit_log_log: abscissas must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const detail::LineFit f = detail::least_squares_line(lx, ly);
  DecayFit out;
  out.x = x;
  out.y = y;
  out.fitted_rate = f.slope;
  out.fitted_prefactor = std::exp(f.intercept);
  out.r_squared = f.r2;
  return out;
}

inline constexpr double kExactZero = 1e-14;

namespace detail {

// Fits y against x unless the series vanishes identically.
inline DecayFit fit_or_zero(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0;
  for (double v : y) mx = std::max(mx, std::abs(v));
  if (mx <= kExactZero) {
    DecayFit f;
    f.x = x;
    f.y = y;
    f.exact_zero = true;
    f.r_squared = 1.0;
    return f;
  }
  return fit_exp_decay(x, y);
}

}  // namespace detail

struct TurnpikeRates {
  DecayFit P, Pibar, p, Theta, Thetabar, theta;
  // Whole-horizon distance series, indexed by node (t ascending).
  std::vector<double> t;
  std::vector<double> dP, dPibar, dp, dTheta, dThetabar, dtheta;
};

/// Distances of the finite-horizon Riccati solution and gains from their
/// ergodic limits, fitted against the time to go T - t over [1, T/2].
inline TurnpikeRates riccati_turnpike_rates(const ModelSpec& model, const CostSpec& cost,
                                            double T, int steps,
                                            const ErgodicSolution* ergodic = nullptr) {
  if (!(T >= 4.0)) throw InputError("riccati_turnpike_rates: T must be at least 4");
  const ErgodicSolution es = ergodic ? *ergodic : solve_ergodic(model, cost);
  const RiccatiPath path = solve_mfc_riccati(model, cost, T, steps);
  const FeedbackLaw law = feedback_from_path(model, cost, path);

  TurnpikeRates r;
  std::vector<double> tau;
  struct Track {
    std::vector<double>* all;
    std::vector<double> win;
  };
  Track tr[6] = {{&r.dP, {}},     {&r.dPibar, {}},    {&r.dp, {}},
                 {&r.dTheta, {}}, {&r.dThetabar, {}}, {&r.dtheta, {}}};
  for (int k = 0; k < path.nodes(); ++k) {
    const double t = path.grid.t(k);
    const double d[6] = {(path.P[k] - es.P).norm(),
                         (path.Pibar[k] - es.Pibar).norm(),
                         (path.p[k] - es.p).norm(),
                         (law.Theta[k] - es.Theta).norm(),
                         (law.Thetabar[k] - es.Thetabar).norm(),
                         (law.theta[k] - es.theta).norm()};
    r.t.push_back(t);
    for (int i = 0; i < 6; ++i) tr[i].all->push_back(d[i]);
  }
  // window in time to go, ascending
  for (int k = path.nodes() - 1; k >= 0; --k) {
    const double ttg = T - path.grid.t(k);
    if (ttg < 1.0 - 1e-12 || ttg > 0.5 * T + 1e-12) continue;
    tau.push_back(ttg);
    for (int i = 0; i < 6; ++i) tr[i].win.push_back((*tr[i].all)[k]);
  }
  DecayFit* fits[6] = {&r.P, &r.Pibar, &r.p, &r.Theta, &r.Thetabar, &r.theta};
  for (int i = 0; i < 6; ++i) *fits[i] = detail::fit_or_zero(tau, tr[i].win);
  return r;
}

struct TurnpikeProfile {
  Coupling coupling = Coupling::same_initial;
  std::vector<double> t;
  std::vector<double> dx2, dx2_se;  // E|X_T(t) - Xbar(t)|^2 and its standard error
  std::vector<double> du2, du2_se;  // E|u_T(t) - ubar(t)|^2
  DecayFit right_layer;             // dx2 against T - t on its half
  DecayFit left_layer;              // dx2 against t on its half (independent coupling)
  double midpoint = 0.0;
  double right_boundary = 0.0;
  double left_amplitude = 0.0;
  double left_noise_floor = 0.0;    // 3 standard errors at t = 0
  bool plateau_ok = false;          // midpoint <= 0.05 * max boundary value
  bool left_statistically_zero = false;
};

/// Simulates the finite-horizon optimal loop and the ergodic loop on matched
/// noise and tabulates their squared distance over time.
inline TurnpikeProfile turnpike_profile(const ModelSpec& model, const CostSpec& cost,
                                        const InitialLaw& initial, double T, const SimConfig& cfg_in,
                                        Coupling coupling, const ErgodicSolution* ergodic = nullptr,
                                        int riccati_steps = 0) {
  SimConfig cfg = cfg_in;
  cfg.T = T;
  const ErgodicSolution es = ergodic ? *ergodic : solve_ergodic(model, cost);
  const int steps = riccati_steps > 0 ? riccati_steps : default_riccati_steps(T);
  const RiccatiPath path = solve_mfc_riccati(model, cost, T, steps);
  const FeedbackLaw finite = feedback_from_path(model, cost, path);
  const Ensemble ens = simulate_paired(model, cost, finite, ergodic_feedback(es), initial, cfg,
                                       coupling);

  TurnpikeProfile pr;
  pr.coupling = coupling;
  const Vec dx = ens.node_mean(ens.pair_row(kSumDX2));
  const Vec du = ens.node_mean(ens.pair_row(kSumDU2));
  const Vec dxs = ens.node_stderr(ens.pair_row(kSumDX2));
  const Vec dus = ens.node_stderr(ens.pair_row(kSumDU2));
  const int K = ens.grid.nodes();
  for (int k = 0; k < K; ++k) {
    pr.t.push_back(ens.grid.t(k));
    pr.dx2.push_back(dx(k));
    pr.du2.push_back(du(k));
    pr.dx2_se.push_back(dxs(k));
    pr.du2_se.push_back(dus(k));
  }
  const double edge = std::max(1.0, 0.1 * T);
  std::vector<double> rx, ry, lx, ly;
  for (int k = K - 1; k >= 0; --k) {
    const double ttg = T - pr.t[k];
    if (ttg >= edge - 1e-12 && ttg <= 0.5 * T + 1e-12) {
      rx.push_back(ttg);
      ry.push_back(pr.dx2[k]);
    }
  }
  for (int k = 0; k < K; ++k)
    if (pr.t[k] >= edge - 1e-12 && pr.t[k] <= 0.5 * T + 1e-12) {
      lx.push_back(pr.t[k]);
      ly.push_back(pr.dx2[k]);
    }
  pr.right_layer = detail::fit_or_zero(rx, ry);
  if (coupling == Coupling::independent_initial) pr.left_layer = detail::fit_or_zero(lx, ly);

  int mid = 0;
  for (int k = 0; k < K; ++k)
    if (std::abs(pr.t[k] - 0.5 * T) < std::abs(pr.t[mid] - 0.5 * T)) mid = k;
  pr.midpoint = pr.dx2[mid];
  pr.right_boundary = pr.dx2[K - 1];
  pr.left_amplitude = pr.dx2[0];
  pr.left_noise_floor = std::isfinite(pr.dx2_se[0]) ? 3.0 * pr.dx2_se[0] : 0.0;
  pr.plateau_ok = pr.midpoint <= 0.05 * std::max(pr.right_boundary, pr.left_amplitude);
  pr.left_statistically_zero = pr.left_amplitude <= pr.left_noise_floor;
  return pr;
}

struct NRateReport {
  std::vector<int> N;
  std::vector<double> riccati_gap;     // (a) per N
  std::vector<double> trajectory_gap;  // (b) per N
  std::vector<double> shuffled_gap;    // (b) with shuffled pairing
  DecayFit riccati_fit;                // log-log slope in fitted_rate
  DecayFit trajectory_fit;
  DecayFit shuffled_fit;
  bool exact_coincidence = false;      // (a) identically zero
  bool riccati_ok = false;             // slope in [-1.15, -0.85]
  bool trajectory_ok = false;          // slope in [-1.2, -0.8]
  bool shuffle_destroys = false;       // shuffled slope above -0.5
  bool simulated = false;
};

inline constexpr double kRiccatiSlopeLo = -1.15;
inline constexpr double kRiccatiSlopeHi = -0.85;
inline constexpr double kTrajectorySlopeLo = -1.2;
inline constexpr double kTrajectorySlopeHi = -0.8;
inline constexpr double kShuffleSlopeFloor = -0.5;

/// sup over nodes of |P^N - P| + |Pi^N - Pi| + |p^N - p| + |kappa^N - kappa|.
inline double riccati_gap(const RiccatiPath& mfc, const SocRiccatiPath& soc) {
  if (mfc.nodes() != soc.nodes()) throw InputError("riccati_gap: grids differ");
  double gap = 0.0;
  for (int k = 0; k < mfc.nodes(); ++k) {
    const double g = (soc.PN[k] - mfc.P[k]).norm() + (soc.PiN[k] - mfc.Pi(k)).norm() +
                     (soc.pN[k] - mfc.p[k]).norm() + std::abs(soc.kappaN[k] - mfc.kappa[k]);
    gap = std::max(gap, g);
  }
  return gap;
}

/// (a) Riccati gaps between the N-agent and mean-field systems, and, when
/// `simulate` is set, (b) the matched-noise trajectory gaps
///   sup_t E|X^{i,N}(t) - X^i(t)|^2 + E|u^{i,N}(t) - u^i(t)|^2
/// with the i-th mean-field sample driven by agent i's own streams, plus the
/// shuffled-pairing control.
inline NRateReport n_convergence_study(const ModelSpec& model, const CostSpec& cost,
                                       const InitialLaw& initial, double T,
                                       const std::vector<int>& N_list, const SimConfig& cfg_in,
                                       bool simulate = true, int riccati_steps = 0) {
  if (N_list.size() < 3) throw InputError("n_convergence_study: needs at least 3 values of N");
  const int steps = riccati_steps > 0 ? riccati_steps : default_riccati_steps(T);
  const RiccatiPath mfc = solve_mfc_riccati(model, cost, T, steps);
  const FeedbackLaw mfc_law = feedback_from_path(model, cost, mfc);
  SimConfig cfg = cfg_in;
  cfg.T = T;

  NRateReport rep;
  rep.simulated = simulate;
  std::vector<double> xs;
  for (int N : N_list) {
    const SocRiccatiPath soc = solve_soc_riccati(model, cost, T, N, steps);
    rep.N.push_back(N);
    xs.push_back(N);
    rep.riccati_gap.push_back(riccati_gap(mfc, soc));
    if (simulate) {
      const FeedbackLaw soc_law = soc_feedback(soc, model, cost);
      for (bool shuffle : {false, true}) {
        const Ensemble ens =
            simulate_nagent_vs_mfc(model, cost, soc_law, mfc_law, initial, N, cfg, shuffle);
        const Vec g = ens.node_mean(ens.pair_row(kSumDX2)) + ens.node_mean(ens.pair_row(kSumDU2));
        (shuffle ? rep.shuffled_gap : rep.trajectory_gap).push_back(g.maxCoeff());
      }
    }
  }
  double mx = 0.0;
  for (double g : rep.riccati_gap) mx = std::max(mx, g);
  rep.exact_coincidence = mx <= kExactZero;
  if (!rep.exact_coincidence) {
    rep.riccati_fit = fit_log_log(xs, rep.riccati_gap);
    rep.riccati_ok = rep.riccati_fit.fitted_rate >= kRiccatiSlopeLo &&
                     rep.riccati_fit.fitted_rate <= kRiccatiSlopeHi;
  } else {
    rep.riccati_fit.exact_zero = true;
    rep.riccati_ok = true;
  }
  if (simulate) {
    rep.trajectory_fit = fit_log_log(xs, rep.trajectory_gap);
    rep.shuffled_fit = fit_log_log(xs, rep.shuffled_gap);
    rep.trajectory_ok = rep.trajectory_fit.fitted_rate >= kTrajectorySlopeLo &&
                        rep.trajectory_fit.fitted_rate <= kTrajectorySlopeHi;
    rep.shuffle_destroys = rep.shuffled_fit.fitted_rate > kShuffleSlopeFloor;
  }
  return rep;
}

struct ValueConvergenceReport {
  double c0 = 0.0;
  std::vector<double> T;
  std::vector<double> U;              // U_T(mu0)
  std::vector<double> scaled_gap;     // |U_T/T - c0| * T
  bool scaled_gap_bounded = false;    // no growth across T
  // J_T(mu0; ergodic law) - U_T(mu0) and its standard error, per T (when simulated)
  std::vector<double> excess_cost, excess_cost_se;
  bool excess_nonnegative = true;     // >= -3 standard errors
  bool excess_bounded = true;         // no growth trend across T
  // Social gaps at the largest T: J_soc(MFC law) - J_soc(SOC law) per N
  std::vector<int> N;
  std::vector<double> social_gap, social_gap_se;
  bool social_gap_decreasing = true;
  // Time-averaged gap of the ergodic law in the N-agent problem
  std::vector<double> ergodic_social_gap, ergodic_social_gap_se;
  bool simulated = false;
};

namespace detail {

// A nonnegative sequence shows no growth when its last entry does not exceed
// 1.5 times its first plus an absolute slack.
inline bool no_growth(const std::vector<double>& v, double slack) {
  if (v.size() < 2) return true;
  return std::abs(v.back()) <= 1.5 * std::abs(v.front()) + slack;
}

}  // namespace detail

inline ValueConvergenceReport value_convergence(const ModelSpec& model, const CostSpec& cost,
                                                const InitialLaw& law,
                                                const std::vector<double>& T_list,
                                                const std::vector<int>& N_list,
                                                const SimConfig& cfg_in, bool simulate = true) {
  if (T_list.empty()) throw InputError("value_convergence: empty T list");
  const ErgodicSolution es = solve_ergodic(model, cost);
  ValueConvergenceReport rep;
  rep.c0 = es.c0;
  rep.simulated = simulate;
  for (double T : T_list) {
    const HorizonCostCheck h = ergodic_cost_from_horizon(model, cost, law, T, es.c0);
    rep.T.push_back(T);
    rep.U.push_back(h.value);
    rep.scaled_gap.push_back(h.gap * T);
    if (simulate) {
      SimConfig cfg = cfg_in;
      cfg.T = T;
      const Ensemble ens = simulate_mfc_closed_loop(model, cost, ergodic_feedback(es), law, cfg);
      const CostEstimate e = estimate_cost(ens);
      rep.excess_cost.push_back(e.estimate - h.value);
      rep.excess_cost_se.push_back(e.std_error);
      if (e.has_stderr && e.estimate - h.value < -3.0 * e.std_error) rep.excess_nonnegative = false;
    }
  }
  rep.scaled_gap_bounded = detail::no_growth(rep.scaled_gap, 1e-6);
  if (simulate) {
    double slack = 0.0;
    for (double s : rep.excess_cost_se) slack = std::max(slack, 3.0 * (std::isfinite(s) ? s : 0.0));
    rep.excess_bounded = detail::no_growth(rep.excess_cost, slack + 1e-6);

    const double T = T_list.back();
    SimConfig cfg = cfg_in;
    cfg.T = T;
    const RiccatiPath mfc = solve_mfc_riccati(model, cost, T);
    const FeedbackLaw mfc_law = feedback_from_path(model, cost, mfc);
    for (int N : N_list) {
      const SocRiccatiPath soc = solve_soc_riccati(model, cost, T, N);
      const FeedbackLaw soc_law = soc_feedback(soc, model, cost);
      LaneSpec a, b;
      a.law = soc_law;
      a.mean_source = MeanSource::empirical;
      b.law = mfc_law;
      b.mean_source = MeanSource::empirical;
      const Ensemble ens = simulate_lanes(model, cost, {a, b}, law, cfg, N);
      const CostEstimate d = estimate_cost_difference(ens);
      rep.N.push_back(N);
      rep.social_gap.push_back(d.estimate);
      rep.social_gap_se.push_back(d.std_error);

      LaneSpec c = a;
      c.law = ergodic_feedback(es);
      const Ensemble ee = simulate_lanes(model, cost, {a, c}, law, cfg, N);
      const CostEstimate de = estimate_cost_difference(ee);
      rep.ergodic_social_gap.push_back(de.estimate / T);
      rep.ergodic_social_gap_se.push_back(de.std_error / T);
    }
    for (std::size_t i = 1; i < rep.social_gap.size(); ++i)
      if (std::abs(rep.social_gap[i]) >
          std::abs(rep.social_gap[i - 1]) + 3.0 * (rep.social_gap_se[i] + rep.social_gap_se[i - 1]))
        rep.social_gap_decreasing = false;
  }
  return rep;
}

}  // namespace lqmf
