#pragma once

// Finite-horizon mean-field control. The value function has the quadratic form
//   U_T(t, mu) = <Pi_T mu_bar, mu_bar> + 2 <p_T, mu_bar> + kappa_T + int <P_T x, x> mu(dx)
// with Pi_T = Pibar_T - P_T, and (P_T, Pibar_T, p_T, kappa_T) solve a coupled
// backward system driven by the maps Psi1, Psibar2, Psi3, Psi4 below.

#include "lqmf/kernels.hpp"
#include "lqmf/model.hpp"
#include "lqmf/types.hpp"

#include <charconv>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace lqmf {

inline constexpr double kMaxGainCondition = 1e12;

/// The coefficient maps Q(P), Qhat(P,Pibar), S(P), Shat(P,Pibar), R(P) and the
/// feedback maps Theta, Thetabar, theta, bound to one model.
class RiccatiMaps {
 public:
  RiccatiMaps(const ModelSpec& model, const CostSpec& cost)
      : md_(model),
        cs_(cost),
        Ahat_(model.A + model.Abar),
        Chat_(model.C + model.Cbar),
        Gammahat_(model.Gamma + model.Gammabar),
        Qhat_(cost.Q + cost.Qbar) {}

  [[nodiscard]] const ModelSpec& model() const { return md_; }
  [[nodiscard]] const CostSpec& cost() const { return cs_; }
  [[nodiscard]] const Mat& Ahat() const { return Ahat_; }
  [[nodiscard]] const Mat& Chat() const { return Chat_; }
  [[nodiscard]] const Mat& Gammahat() const { return Gammahat_; }

  [[nodiscard]] Mat calQ(const Mat& P) const {
    return P * md_.A + md_.A.transpose() * P + md_.C.transpose() * P * md_.C +
           md_.Gamma.transpose() * P * md_.Gamma + cs_.Q;
  }
  [[nodiscard]] Mat calQhat(const Mat& P, const Mat& Pibar) const {
    return Pibar * Ahat_ + Ahat_.transpose() * Pibar + Chat_.transpose() * P * Chat_ +
           Gammahat_.transpose() * Pibar * Gammahat_ + Qhat_;
  }
  [[nodiscard]] Mat calS(const Mat& P) const {
    return md_.B.transpose() * P + md_.D.transpose() * P * md_.C + cs_.S;
  }
  [[nodiscard]] Mat calShat(const Mat& P, const Mat& Pibar) const {
    return md_.B.transpose() * Pibar + md_.D.transpose() * P * Chat_ + cs_.S;
  }
  [[nodiscard]] Mat calR(const Mat& P) const {
    return symmetrize(cs_.R + md_.D.transpose() * P * md_.D);
  }

  /// Factorization of R(P); throws "feedback gain singular" past 1e12.
  [[nodiscard]] Eigen::PartialPivLU<Mat> factor_R(const Mat& P) const {
    const Mat Rp = calR(P);
    Eigen::PartialPivLU<Mat> lu(Rp);
    // rcond is scale free, so also bound the estimated smallest singular value
    const double sigma_min = lu.rcond() * Rp.cwiseAbs().colwise().sum().maxCoeff();
    if (!(lu.rcond() > 1.0 / kMaxGainCondition) || !(sigma_min > 1.0 / kMaxGainCondition)) {
      std::ostringstream os;
      os << "feedback gain singular: rcond(R + D'PD) = " << lu.rcond()
         << ", estimated smallest singular value " << sigma_min;
      throw SolverError(os.str());
    }
    return lu;
  }

  [[nodiscard]] Mat Theta(const Mat& P) const { return -factor_R(P).solve(calS(P)); }
  [[nodiscard]] Mat Thetabar(const Mat& P, const Mat& Pibar) const {
    return -factor_R(P).solve(calShat(P, Pibar));
  }
  [[nodiscard]] Vec theta(const Vec& p, const Mat& P) const {
    return -factor_R(P).solve(theta_rhs(p, P));
  }
  [[nodiscard]] Vec theta_rhs(const Vec& p, const Mat& P) const {
    return md_.B.transpose() * p + md_.D.transpose() * P * md_.sigma + cs_.r;
  }

 private:
  const ModelSpec& md_;
  const CostSpec& cs_;
  Mat Ahat_, Chat_, Gammahat_, Qhat_;
};

struct PsiFields {
  Mat psi1;     // Psi1(P)
  Mat psibar2;  // Psibar2(P, Pibar) = Psi1(P) + Psi2(P, Pi)
  Vec psi3;     // Psi3(P, Pi, p)
  double psi4;  // Psi4(P, Pi, p)

  [[nodiscard]] Mat psi2() const { return psibar2 - psi1; }
};

inline PsiFields psi_fields(const RiccatiMaps& maps, const Mat& P, const Mat& Pibar, const Vec& p) {
  const ModelSpec& md = maps.model();
  const CostSpec& cs = maps.cost();
  const auto Rlu = maps.factor_R(P);
  const Mat S = maps.calS(P);
  const Mat Shat = maps.calShat(P, Pibar);

  PsiFields out;
  out.psi1 = symmetrize(maps.calQ(P) - S.transpose() * Rlu.solve(S));
  out.psibar2 = symmetrize(maps.calQhat(P, Pibar) - Shat.transpose() * Rlu.solve(Shat));

  const Mat Thetabar = -Rlu.solve(Shat);
  out.psi3 = (maps.Ahat() + md.B * Thetabar).transpose() * p +
             (maps.Chat() + md.D * Thetabar).transpose() * P * md.sigma +
             Thetabar.transpose() * cs.r + Pibar * md.b +
             maps.Gammahat().transpose() * Pibar * md.gamma + cs.q;

  const Vec rhs = maps.theta_rhs(p, P);
  const Vec theta = -Rlu.solve(rhs);
  out.psi4 = -theta.dot(maps.calR(P) * theta) + 2.0 * md.b.dot(p) + md.sigma.dot(P * md.sigma) +
             md.gamma.dot(Pibar * md.gamma);
  return out;
}

inline PsiFields psi_fields(const ModelSpec& model, const CostSpec& cost, const Mat& P,
                            const Mat& Pibar, const Vec& p) {
  return psi_fields(RiccatiMaps(model, cost), P, Pibar, p);
}

/// ODE state record (two symmetric matrices, a vector, a scalar).
struct QuadState {
  Mat P;
  Mat M;
  Vec p;
  double kappa = 0.0;

  static QuadState zeros(Eigen::Index n) {
    return {Mat::Zero(n, n), Mat::Zero(n, n), Vec::Zero(n), 0.0};
  }
};

inline QuadState operator+(const QuadState& a, const QuadState& b) {
  return {a.P + b.P, a.M + b.M, a.p + b.p, a.kappa + b.kappa};
}
inline QuadState operator*(double s, const QuadState& a) {
  return {s * a.P, s * a.M, s * a.p, s * a.kappa};
}
inline bool is_finite(const QuadState& s) {
  return s.P.allFinite() && s.M.allFinite() && s.p.allFinite() && std::isfinite(s.kappa);
}

/// Backward solution (P_T, Pibar_T, p_T, kappa_T) on a uniform grid.
struct RiccatiPath {
  TimeGrid grid;
  std::vector<Mat> P;
  std::vector<Mat> Pibar;
  std::vector<Vec> p;
  std::vector<double> kappa;
  double psd_floor = 0.0;  // largest eigenvalue magnitude removed by PSD clipping

  [[nodiscard]] int nodes() const { return static_cast<int>(P.size()); }
  [[nodiscard]] Mat Pi(int k) const { return Pibar[k] - P[k]; }
};

/// Affine feedback u = Theta (x - m) + Thetabar m + theta on a grid; a law with
/// a single node is constant in time.
struct FeedbackLaw {
  std::vector<double> times;
  std::vector<Mat> Theta;
  std::vector<Mat> Thetabar;
  std::vector<Vec> theta;

  [[nodiscard]] bool constant() const { return times.size() == 1; }
  [[nodiscard]] int nodes() const { return static_cast<int>(times.size()); }

  // Equivalent split u = self_gain x + mean_gain m + offset.
  [[nodiscard]] const Mat& self_gain(int k) const { return Theta[k]; }
  [[nodiscard]] Mat mean_gain(int k) const { return Thetabar[k] - Theta[k]; }
  [[nodiscard]] const Vec& offset(int k) const { return theta[k]; }
};

inline constexpr double kPsdTolerance = 1e-9;

namespace detail {

inline double check_psd_and_clip(Mat& M, double t, const char* what) {
  const double lo = min_eigenvalue(M);
  if (lo < -kPsdTolerance) {
    std::ostringstream os;
    os << "H1 insufficient numerically: " << what << " lost positive semidefiniteness (min eig "
       << lo << ") at t = " << t;
    throw SolverError(os.str());
  }
  return lo < 0.0 ? clip_to_psd(M) : 0.0;
}

inline void require_h1(const CostSpec& cost) {
  const AssumptionReport rep = validate_h1(cost);
  if (!rep.h1_ok) {
    std::ostringstream os;
    os << "H1 fails: min eig R = " << rep.min_eig_R << ", Q - S'R^-1S = " << rep.min_eig_Q_tilde
       << ", Q + Qbar - S'R^-1S = " << rep.min_eig_Qhat_tilde;
    throw SolverError(os.str());
  }
}

}  // namespace detail

inline RiccatiPath solve_mfc_riccati(const ModelSpec& model, const CostSpec& cost, double T,
                                     int steps) {
  model.validate();
  detail::require_h1(cost);
  const RiccatiMaps maps(model, cost);
  const TimeGrid grid(T, steps);

  auto rhs = [&](double, const QuadState& s) {
    const PsiFields f = psi_fields(maps, s.P, s.M, s.p);
    return QuadState{-f.psi1, -f.psibar2, -f.psi3, -f.psi4};
  };
  const std::vector<QuadState> states =
      integrate_backward(rhs, QuadState::zeros(model.n), grid);

  RiccatiPath path;
  path.grid = grid;
  const auto K = states.size();
  path.P.reserve(K);
  path.Pibar.reserve(K);
  path.p.reserve(K);
  path.kappa.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    QuadState s = states[k];
    s.P = symmetrize(s.P);
    s.M = symmetrize(s.M);
    const double t = grid.t(static_cast<int>(k));
    path.psd_floor = std::max(path.psd_floor, detail::check_psd_and_clip(s.P, t, "P"));
    path.psd_floor = std::max(path.psd_floor, detail::check_psd_and_clip(s.M, t, "Pibar"));
    if (min_eigenvalue(maps.calR(s.P)) <= 0.0) {
      std::ostringstream os;
      os << "H1 insufficient numerically: R + D'PD not positive definite at t = " << t;
      throw SolverError(os.str());
    }
    path.P.push_back(std::move(s.P));
    path.Pibar.push_back(std::move(s.M));
    path.p.push_back(std::move(s.p));
    path.kappa.push_back(s.kappa);
  }
  return path;
}

inline RiccatiPath solve_mfc_riccati(const ModelSpec& model, const CostSpec& cost, double T) {
  return solve_mfc_riccati(model, cost, T, default_riccati_steps(T));
}

inline FeedbackLaw feedback_from_path(const ModelSpec& model, const CostSpec& cost,
                                      const RiccatiPath& path) {
  const RiccatiMaps maps(model, cost);
  FeedbackLaw law;
  const int K = path.nodes();
  law.times.reserve(K);
  for (int k = 0; k < K; ++k) {
    const auto Rlu = maps.factor_R(path.P[k]);
    law.times.push_back(path.grid.t(k));
    law.Theta.push_back(-Rlu.solve(maps.calS(path.P[k])));
    law.Thetabar.push_back(-Rlu.solve(maps.calShat(path.P[k], path.Pibar[k])));
    law.theta.push_back(-Rlu.solve(maps.theta_rhs(path.p[k], path.P[k])));
  }
  return law;
}

/// Composite Simpson on a uniform grid (trapezoid on a trailing odd interval).
inline double integrate_uniform(const std::vector<double>& f, double h) {
  const int K = static_cast<int>(f.size()) - 1;
  if (K <= 0) return 0.0;
  const int even = K - (K % 2);
  double s = 0.0;
  for (int k = 0; k + 2 <= even; k += 2) s += f[k] + 4.0 * f[k + 1] + f[k + 2];
  s *= h / 3.0;
  if (K % 2 == 1) s += 0.5 * h * (f[K - 1] + f[K]);
  return s;
}

struct MfcValue {
  double value = 0.0;           // closed form at t = 0
  double integral_form = 0.0;   // equivalent time-integral representation
};

inline constexpr double kValueAgreementTolerance = 1e-6;

inline MfcValue value_mfc(const RiccatiPath& path, const InitialLaw& law, const CostSpec& cost,
                          const ModelSpec& model) {
  law.validate(model.n);
  const Mat Pi0 = path.Pi(0);
  const Vec& mu = law.mean;
  const double quad0 = mu.dot(Pi0 * mu) + 2.0 * path.p[0].dot(mu) +
                       (path.P[0] * law.second_moment).trace();
  MfcValue out;
  out.value = quad0 + path.kappa[0];

  const RiccatiMaps maps(model, cost);
  std::vector<double> integrand;
  integrand.reserve(path.P.size());
  for (int k = 0; k < path.nodes(); ++k) {
    const Mat& P = path.P[k];
    const Vec theta = maps.theta(path.p[k], P);
    integrand.push_back(model.sigma.dot(P * model.sigma) +
                        model.gamma.dot(path.Pibar[k] * model.gamma) +
                        2.0 * path.p[k].dot(model.b) - theta.dot(maps.calR(P) * theta));
  }
  out.integral_form = quad0 + integrate_uniform(integrand, path.grid.h());
  if (std::abs(out.value - out.integral_form) >
      kValueAgreementTolerance * (1.0 + std::abs(out.value))) {
    std::ostringstream os;
    os << "value_mfc: closed form " << out.value << " and integral form " << out.integral_form
       << " disagree";
    throw SolverError(os.str());
  }
  return out;
}

namespace detail {

inline void write_double(std::ostream& os, double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  os.write(buf, res.ptr - buf);
}

inline void write_matrix_header(std::ostream& os, const char* name, Eigen::Index rows,
                                Eigen::Index cols) {
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) os << ',' << name << '_' << i << '_' << j;
}

inline void write_matrix_row(std::ostream& os, const Mat& M) {
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      os << ',';
      write_double(os, M(i, j));
    }
}

}  // namespace detail

/// CSV: t, P (row-major), Pibar (row-major), p, kappa; one row per node.
/// When `N` is positive an extra trailing column N is written (N-agent paths).
inline void write_path_csv(std::ostream& os, const TimeGrid& grid, const std::vector<Mat>& P,
                           const std::vector<Mat>& M, const char* m_name,
                           const std::vector<Vec>& p, const std::vector<double>& kappa,
                           int N = 0) {
  const Eigen::Index n = P.empty() ? 0 : P.front().rows();
  os << 't';
  detail::write_matrix_header(os, "P", n, n);
  detail::write_matrix_header(os, m_name, n, n);
  for (Eigen::Index i = 0; i < n; ++i) os << ",p_" << i;
  os << ",kappa";
  if (N > 0) os << ",N";
  os << '\n';
  for (std::size_t k = 0; k < P.size(); ++k) {
    detail::write_double(os, grid.t(static_cast<int>(k)));
    detail::write_matrix_row(os, P[k]);
    detail::write_matrix_row(os, M[k]);
    for (Eigen::Index i = 0; i < n; ++i) {
      os << ',';
      detail::write_double(os, p[k](i));
    }
    os << ',';
    detail::write_double(os, kappa[k]);
    if (N > 0) os << ',' << N;
    os << '\n';
  }
}

inline void write_csv(std::ostream& os, const RiccatiPath& path) {
  write_path_csv(os, path.grid, path.P, path.Pibar, "Pibar", path.p, path.kappa);
}

}  // namespace lqmf
