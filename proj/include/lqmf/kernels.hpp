#pragma once

// Linear-algebra primitives shared by the solvers: generalized Lyapunov
// equations through the Kronecker lift, mean-square stability margins,
// fixed-step RK4 for backward ODEs, and stationary moments of affine SDEs.

#include "lqmf/types.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <sstream>
#include <vector>

namespace lqmf {

/// Generalized Lyapunov problem P F + F'P + sum_k G_k' P G_k + Qtilde = 0.
struct LyapunovProblem {
  Mat F;
  std::vector<Mat> quadratic_terms;
  Mat Qtilde;
};

namespace detail {

// Column-major vec(): vec(X Y Z) = (Z' kron X) vec(Y).
inline Mat lyapunov_lift(const Mat& F, const std::vector<Mat>& G) {
  const Eigen::Index n = F.rows();
  const Mat I = Mat::Identity(n, n);
  Mat L = Eigen::kroneckerProduct(F.transpose(), I).eval();
  L += Eigen::kroneckerProduct(I, F.transpose()).eval();
  for (const Mat& Gk : G) L += Eigen::kroneckerProduct(Gk.transpose(), Gk.transpose()).eval();
  return L;
}

inline Mat second_moment_lift(const Mat& F, const std::vector<Mat>& G) {
  const Eigen::Index n = F.rows();
  const Mat I = Mat::Identity(n, n);
  Mat L = Eigen::kroneckerProduct(I, F).eval();
  L += Eigen::kroneckerProduct(F, I).eval();
  for (const Mat& Gk : G) L += Eigen::kroneckerProduct(Gk, Gk).eval();
  return L;
}

}  // namespace detail

inline constexpr double kMaxLyapunovCondition = 1e12;

inline Mat lyapunov_solve(const LyapunovProblem& prob) {
  const Eigen::Index n = prob.F.rows();
  if (prob.F.cols() != n || prob.Qtilde.rows() != n || prob.Qtilde.cols() != n)
    throw InputError("lyapunov_solve: F and Qtilde must be square of equal size");
  for (const Mat& G : prob.quadratic_terms)
    if (G.rows() != n || G.cols() != n)
      throw InputError("lyapunov_solve: quadratic terms must be n x n");

  const Mat L = detail::lyapunov_lift(prob.F, prob.quadratic_terms);
  Eigen::PartialPivLU<Mat> lu(L);
  const double rcond = lu.rcond();
  // relative to the size of the data, not of L itself (a 1 x 1 lift has rcond 1)
  double scale = 2.0 * prob.F.cwiseAbs().colwise().sum().maxCoeff();
  for (const Mat& G : prob.quadratic_terms) scale += G.squaredNorm();
  const double sigma_min = rcond * L.cwiseAbs().colwise().sum().maxCoeff();
  if (!(rcond > 1.0 / kMaxLyapunovCondition) ||
      !(sigma_min > std::max(scale, 1e-300) / kMaxLyapunovCondition)) {
    std::ostringstream os;
    os << "lyapunov singular: reciprocal condition " << rcond << " of the lifted operator";
    throw SolverError(os.str());
  }
  const Mat rhs = -prob.Qtilde;
  const Vec x = lu.solve(Eigen::Map<const Vec>(rhs.data(), rhs.size()));
  return symmetrize(Eigen::Map<const Mat>(x.data(), n, n));
}

/// Spectral abscissa of V -> F V + V F' + sum_k G_k V G_k'. Negative iff the
/// homogeneous linear SDE dX = F X dt + sum_k G_k X dW_k is L2-exponentially stable.
inline double mean_square_stability_margin(const Mat& F, const std::vector<Mat>& diffusions) {
  if (F.rows() != F.cols()) throw InputError("stability margin: F must be square");
  return spectral_abscissa(detail::second_moment_lift(F, diffusions));
}

inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const Vec& v) { return v.allFinite(); }
inline bool is_finite(const Mat& M) { return M.allFinite(); }

/// Classical RK4 for dX/dt = rhs(t, X) on `grid`, integrated from the
/// terminal value at t = T back to t = 0 (as a forward ODE in tau = T - t).
/// Returns the state at every node, indexed like the grid.
template <class State, class Rhs>
std::vector<State> integrate_backward(Rhs&& rhs, const State& terminal, const TimeGrid& grid) {
  std::vector<State> path(static_cast<std::size_t>(grid.nodes()), terminal);
  const int K = grid.steps;
  if (K == 0) return path;
  const double h = grid.h();

  auto checked = [&](double t, const State& s) {
    State d = rhs(t, s);
    if (!is_finite(d)) {
      std::ostringstream os;
      os << "blow-up at t = " << t;
      throw SolverError(os.str());
    }
    return d;
  };

  State x = terminal;
  for (int k = K; k > 0; --k) {
    const double t = grid.t(k);
    const double tm = t - 0.5 * h;
    const double tn = grid.t(k - 1);
    // dX/dtau = -rhs(T - tau, X)
    const State k1 = checked(t, x);
    const State k2 = checked(tm, x + (-0.5 * h) * k1);
    const State k3 = checked(tm, x + (-0.5 * h) * k2);
    const State k4 = checked(tn, x + (-h) * k3);
    x = x + (-h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!is_finite(x)) {
      std::ostringstream os;
      os << "blow-up at t = " << tn;
      throw SolverError(os.str());
    }
    path[static_cast<std::size_t>(k - 1)] = x;
  }
  return path;
}

/// First two moments of a law; `tag` names the process they describe.
struct StationaryMoments {
  Vec mean;
  Mat second_moment;
  std::string tag;

  [[nodiscard]] Mat covariance() const { return symmetrize(second_moment - mean * mean.transpose()); }
};

/// Stationary mean and second moment of dm = (F m + g) dt + (H m + h) dW.
///
/// The mean solves F mbar + g = 0. Applying Ito's formula to m m' and setting
/// the drift to zero gives
///   F M + M F' + H M H' + g mbar' + mbar g' + H mbar h' + h mbar' H' + h h' = 0.
inline StationaryMoments stationary_affine_moments(const Mat& F, const Vec& g, const Mat& H,
                                                   const Vec& h, std::string tag = "affine") {
  const Eigen::Index n = F.rows();
  if (F.cols() != n || H.rows() != n || H.cols() != n || g.size() != n || h.size() != n)
    throw InputError("stationary_affine_moments: dimension mismatch");
  if (!(spectral_abscissa(F) < 0.0) || !(mean_square_stability_margin(F, {H}) < 0.0))
    throw SolverError("no stationary law: the affine SDE is not mean-square stable");

  StationaryMoments out;
  out.tag = std::move(tag);
  out.mean = -F.partialPivLu().solve(g);
  const Vec& mb = out.mean;
  Mat forcing = g * mb.transpose() + mb * g.transpose() + H * mb * h.transpose() +
                h * mb.transpose() * H.transpose() + h * h.transpose();
  out.second_moment =
      lyapunov_solve({F.transpose(), {H.transpose()}, symmetrize(forcing)});
  return out;
}

}  // namespace lqmf
