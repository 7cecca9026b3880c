#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace lqmf {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Raised by solvers and simulators when a numerical precondition fails at
/// run time (loss of definiteness, blow-up, singular linear systems).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on malformed or dimensionally inconsistent problem data.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Mat symmetrize(const Mat& M) { return 0.5 * (M + M.transpose()); }

inline double asymmetry(const Mat& M) {
  return (M - M.transpose()).cwiseAbs().maxCoeff();
}

inline bool all_finite(const Mat& M) { return M.allFinite(); }

inline double min_eigenvalue(const Mat& M) {
  if (M.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(M), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double spectral_abscissa(const Mat& F) {
  if (F.size() == 0) return -INFINITY;
  Eigen::EigenSolver<Mat> es(F, false);
  return es.eigenvalues().real().maxCoeff();
}

/// Projects a symmetric matrix onto the PSD cone by flooring eigenvalues at 0.
/// Returns the magnitude of the most negative eigenvalue removed.
inline double clip_to_psd(Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(M));
  const Vec& ev = es.eigenvalues();
  const double floor_mag = std::max(0.0, -ev.minCoeff());
  if (floor_mag > 0.0) {
    M = es.eigenvectors() * ev.cwiseMax(0.0).asDiagonal() *
        es.eigenvectors().transpose();
  }
  M = symmetrize(M);
  return floor_mag;
}

/// Uniform time grid 0 = t_0 < ... < t_K = T.
struct TimeGrid {
  double T = 0.0;
  int steps = 0;

  TimeGrid() = default;
  TimeGrid(double horizon, int step_count) : T(horizon), steps(step_count) {
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
      throw InputError("time grid: horizon must be finite and >= 0");
    if (step_count < 0) throw InputError("time grid: negative step count");
    if (horizon > 0.0 && step_count == 0)
      throw InputError("time grid: positive horizon needs at least one step");
    if (horizon == 0.0) steps = 0;
  }

  [[nodiscard]] int nodes() const { return steps + 1; }
  [[nodiscard]] double h() const { return steps == 0 ? 0.0 : T / steps; }
  [[nodiscard]] double t(int k) const {
    return k == steps ? T : T * static_cast<double>(k) / steps;
  }
};

/// Default node count for finite-horizon Riccati solves.
inline int default_riccati_steps(double T) {
  return std::max(1000, static_cast<int>(std::ceil(200.0 * T)));
}

}  // namespace lqmf
