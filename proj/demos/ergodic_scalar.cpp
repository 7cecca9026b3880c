// Scalar ergodic example: dX = (-X + u) dt + dW with running cost X^2 + u^2.
// Prints the stabilizing solution, the ergodic cost and the stationary law of
// the optimal state, then compares c0 against a long simulated time average.

#include "lqmf/ergodic.hpp"
#include "lqmf/simulate.hpp"

#include <cstdio>

int main() {
  using namespace lqmf;
  ModelSpec model = ModelSpec::zeros(1, 1);
  model.A(0, 0) = -1.0;
  model.B(0, 0) = 1.0;
  model.sigma(0) = 1.0;
  CostSpec cost = CostSpec::zeros(1, 1);
  cost.Q(0, 0) = 1.0;
  cost.R(0, 0) = 1.0;

  const ErgodicSolution s = solve_ergodic(model, cost);
  std::printf("P      = %.12f (sqrt(2) - 1 = %.12f)\n", s.P(0, 0), std::sqrt(2.0) - 1.0);
  std::printf("Theta  = %.12f\n", s.Theta(0, 0));
  std::printf("c0     = %.12f\n", s.c0);
  std::printf("zeta*  = %.12f\n", s.zeta_star);
  std::printf("Var(X) = %.12f\n", s.state_moments.covariance()(0, 0));

  SimConfig cfg;
  cfg.T = 50.0;
  cfg.dt = 1e-2;
  cfg.replicas = 1024;
  cfg.common_paths = 1;
  cfg.burn_in = 10.0;
  const Ensemble ens = simulate_mfc_closed_loop(model, cost, ergodic_feedback(s),
                                                InitialLaw::point_mass(Vec::Zero(1)), cfg);
  const CostEstimate avg = ergodic_average(ens, cfg.burn_in);
  std::printf("simulated time average = %.6f +- %.6f\n", avg.estimate, avg.std_error);
  return 0;
}
