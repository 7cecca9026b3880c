#include "lqmf/mfc_riccati.hpp"

#include <gtest/gtest.h>

#include "lqmf/simulate.hpp"
#include "test_util.hpp"

namespace lqmf {
namespace {

using test::Reference;
using test::scalar;
using test::vscalar;

const double kRoot2 = std::sqrt(2.0);

GTEST_TEST(PsiFields, ReferenceModel) {
  const Reference ref;
  const PsiFields f0 = psi_fields(ref.model, ref.cost, scalar(0), scalar(0), vscalar(0));
  EXPECT_NEAR(f0.psi1(0, 0), 1.0, 1e-15);
  const double P = kRoot2 - 1;
  const PsiFields fr = psi_fields(ref.model, ref.cost, scalar(P), scalar(P), vscalar(0));
  EXPECT_NEAR(fr.psi1(0, 0), 0.0, 1e-15);
  for (double x : {0.3, 1.0, 2.5}) {
    const PsiFields f = psi_fields(ref.model, ref.cost, scalar(x), scalar(x), vscalar(0));
    EXPECT_NEAR(f.psi1(0, 0), -2 * x + 1 - x * x, 1e-14);
  }
}

GTEST_TEST(PsiFields, BarFreeHatsCollapse) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    auto [md, cs] = test::random_model(rng, 3, 2);
    md.Abar.setZero();
    md.Cbar.setZero();
    md.Gammabar.setZero();
    cs.Qbar.setZero();
    const Mat L = test::random_matrix(rng, 3, 3, 0.5);
    const Mat P = L * L.transpose();
    const PsiFields f = psi_fields(md, cs, P, P, test::random_vector(rng, 3, 1.0));
    EXPECT_LE((f.psibar2 - f.psi1).norm(), 1e-13);
    EXPECT_EQ(asymmetry(f.psi1), 0.0);
    EXPECT_EQ(asymmetry(f.psibar2), 0.0);
  }
}

GTEST_TEST(PsiFields, SingularGainReported) {
  Reference ref;
  ref.cost.R = scalar(1e-14);
  try {
    psi_fields(ref.model, ref.cost, scalar(0), scalar(0), vscalar(0));
    FAIL() << "expected an error";
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("feedback gain singular"), std::string::npos);
  }
}

GTEST_TEST(SolveMfcRiccati, ZeroHorizon) {
  const Reference ref;
  const RiccatiPath path = solve_mfc_riccati(ref.model, ref.cost, 0.0, 1000);
  ASSERT_EQ(path.nodes(), 1);
  EXPECT_EQ(path.P[0](0, 0), 0.0);
  EXPECT_EQ(path.Pibar[0](0, 0), 0.0);
  EXPECT_EQ(path.p[0](0), 0.0);
  EXPECT_EQ(path.kappa[0], 0.0);
}

GTEST_TEST(SolveMfcRiccati, ClosedFormTanh) {
  const Reference ref;
  const RiccatiPath path = solve_mfc_riccati(ref.model, ref.cost, 1.0, 1000);
  EXPECT_NEAR(path.P[0](0, 0), test::reference_P(1.0), 1e-6);
  for (int k = 0; k < path.nodes(); k += 100)
    EXPECT_NEAR(path.P[k](0, 0), test::reference_P(1.0 - path.grid.t(k)), 1e-10);
  EXPECT_EQ(path.P.back()(0, 0), 0.0);
}

GTEST_TEST(SolveMfcRiccati, LongHorizonReachesRoot) {
  const Reference ref;
  const RiccatiPath path = solve_mfc_riccati(ref.model, ref.cost, 20.0);
  EXPECT_NEAR(path.P[0](0, 0), kRoot2 - 1, 1e-8);
}

GTEST_TEST(SolveMfcRiccati, FourthOrderUnderRefinement) {
  const Reference ref;
  const double exact = test::reference_P(1.0);
  auto err = [&](int steps) {
    return std::abs(solve_mfc_riccati(ref.model, ref.cost, 1.0, steps).P[0](0, 0) - exact);
  };
  EXPECT_GE(std::log2(err(10) / err(20)), 3.9);
}

GTEST_TEST(SolveMfcRiccati, RequiresH1) {
  Reference ref;
  ref.cost.Q = scalar(-1);
  try {
    solve_mfc_riccati(ref.model, ref.cost, 1.0);
    FAIL() << "expected H1 failure";
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("H1"), std::string::npos);
  }
}

GTEST_TEST(SolveMfcRiccati, InvariantsOnRandomModels) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 1 + trial % 3;
    const auto [md, cs] = test::random_model(rng, n, 1 + trial % 2);
    const double T = 2.0;
    const RiccatiPath path = solve_mfc_riccati(md, cs, T, 2000);
    const RiccatiMaps maps(md, cs);
    EXPECT_EQ(path.P.back().norm(), 0.0);
    EXPECT_EQ(path.Pibar.back().norm(), 0.0);
    EXPECT_EQ(path.p.back().norm(), 0.0);
    EXPECT_EQ(path.kappa.back(), 0.0);
    const double h = path.grid.h();
    for (int k = 0; k < path.nodes(); ++k) {
      EXPECT_LE(asymmetry(path.P[k]), 1e-12);
      EXPECT_LE(asymmetry(path.Pibar[k]), 1e-12);
      EXPECT_GE(min_eigenvalue(path.P[k]), -1e-12);
      EXPECT_GE(min_eigenvalue(path.Pibar[k]), -1e-12);
      EXPECT_GT(min_eigenvalue(maps.calR(path.P[k])), 0.0);
      if (k < 2 || k > path.nodes() - 3 || k % 100 != 0) continue;
      // P' = -Psi1 and friends, by fourth-order central differences
      const PsiFields f = psi_fields(maps, path.P[k], path.Pibar[k], path.p[k]);
      auto diff = [&](const auto& v) {
        return ((v[k - 2] - v[k + 2]) + 8.0 * (v[k + 1] - v[k - 1])) / (12 * h);
      };
      const Mat dP = diff(path.P);
      const Mat dM = diff(path.Pibar);
      const Vec dp = diff(path.p);
      const double dk = diff(path.kappa);
      EXPECT_LE((dP + f.psi1).norm(), 1e-6);
      EXPECT_LE((dM + f.psibar2).norm(), 1e-6);
      EXPECT_LE((dp + f.psi3).norm(), 1e-6);
      EXPECT_LE(std::abs(dk + f.psi4), 1e-6);
    }
  }
}

GTEST_TEST(SolveMfcRiccati, BarFreeAnsatzConsistency) {
  std::mt19937_64 rng(41);
  auto [md, cs] = test::random_model(rng, 2, 2);
  md.Abar.setZero();
  md.Cbar.setZero();
  md.Gammabar.setZero();
  cs.Qbar.setZero();
  const RiccatiPath path = solve_mfc_riccati(md, cs, 3.0);
  for (int k = 0; k < path.nodes(); ++k) EXPECT_LE(path.Pi(k).norm(), 1e-10);
}

GTEST_TEST(SolveMfcRiccati, MonotoneInHorizon) {
  std::mt19937_64 rng(43);
  auto [md, cs] = test::random_model(rng, 2, 1);
  md.b.setZero();
  md.sigma.setZero();
  md.gamma.setZero();
  cs.q.setZero();
  cs.r.setZero();
  // node k of the T = 4 grid has time to go 4 - k h; compare successive horizons
  const RiccatiPath path = solve_mfc_riccati(md, cs, 4.0, 4000);
  for (int k = path.nodes() - 1; k >= 100; k -= 100)
    EXPECT_GE(min_eigenvalue(path.P[k - 100] - path.P[k]), -1e-12);
}

GTEST_TEST(FeedbackFromPath, GainsAtKnownNodes) {
  Reference ref;
  ref.q(1.0);
  const RiccatiPath path = solve_mfc_riccati(ref.model, ref.cost, 20.0);
  const FeedbackLaw law = feedback_from_path(ref.model, ref.cost, path);
  EXPECT_NEAR(law.Theta[0](0, 0), 1 - kRoot2, 1e-8);
  EXPECT_NEAR(law.theta[0](0), -1 / kRoot2, 1e-8);
  // terminal node: P = Pibar = 0, p = 0
  std::mt19937_64 rng(3);
  auto [md, cs] = test::random_model(rng, 2, 2);
  md.sigma.setZero();
  cs.r.setZero();
  const RiccatiPath rp = solve_mfc_riccati(md, cs, 1.0);
  const FeedbackLaw fl = feedback_from_path(md, cs, rp);
  const Mat RS = cs.R.ldlt().solve(cs.S);
  EXPECT_LE((fl.Theta.back() + RS).norm(), 1e-14);
  EXPECT_LE((fl.Thetabar.back() + RS).norm(), 1e-14);
  EXPECT_EQ(fl.theta.back().norm(), 0.0);
}

GTEST_TEST(ValueMfc, Examples) {
  const Reference ref;
  const RiccatiPath path = solve_mfc_riccati(ref.model, ref.cost, 1.0, 1000);
  const double expected = test::reference_P(1.0);
  EXPECT_NEAR(value_mfc(path, InitialLaw::point_mass(vscalar(0)), ref.cost, ref.model).value, 0.0,
              1e-15);
  EXPECT_NEAR(value_mfc(path, InitialLaw::point_mass(vscalar(1)), ref.cost, ref.model).value,
              expected, 1e-6);
  EXPECT_NEAR(
      value_mfc(path, InitialLaw::gaussian(vscalar(0), scalar(1)), ref.cost, ref.model).value,
      expected, 1e-6);
}

GTEST_TEST(ValueMfc, IntegralFormAgrees) {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 5; ++trial) {
    const auto [md, cs] = test::random_model(rng, 2, 1);
    const RiccatiPath path = solve_mfc_riccati(md, cs, 1.5);
    const InitialLaw law = InitialLaw::gaussian(test::random_vector(rng, 2, 1.0), Mat::Identity(2, 2));
    const MfcValue v = value_mfc(path, law, cs, md);
    EXPECT_NEAR(v.value, v.integral_form, 1e-8 * (1 + std::abs(v.value)));
  }
}

GTEST_TEST(ValueMfc, SimulatedCostMatches) {
  const Reference ref;
  const RiccatiPath path = solve_mfc_riccati(ref.model, ref.cost, 1.0, 1000);
  const InitialLaw law = InitialLaw::point_mass(vscalar(1));
  SimConfig cfg;
  cfg.T = 1.0;
  cfg.dt = 1e-3;
  cfg.replicas = 1;
  const Ensemble ens =
      simulate_mfc_closed_loop(ref.model, ref.cost, feedback_from_path(ref.model, ref.cost, path),
                               law, cfg);
  // deterministic loop: Euler-Maruyama bias of order dt
  EXPECT_NEAR(estimate_cost(ens).estimate, value_mfc(path, law, ref.cost, ref.model).value, 2e-3);
}

GTEST_TEST(WriteCsv, ColumnOrder) {
  std::mt19937_64 rng(61);
  const auto [md, cs] = test::random_model(rng, 2, 1);
  const RiccatiPath path = solve_mfc_riccati(md, cs, 1.0, 4);
  std::ostringstream os;
  write_csv(os, path);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,P_0_0,P_0_1,P_1_0,P_1_1,Pibar_0_0,Pibar_0_1,Pibar_1_0,Pibar_1_1,p_0,p_1,kappa");
  std::getline(is, line);
  std::vector<double> v;
  std::stringstream ls(line);
  std::string cell;
  while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
  ASSERT_EQ(v.size(), 12u);
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[2], path.P[0](0, 1));
  EXPECT_EQ(v[7], path.Pibar[0](1, 0));
  EXPECT_EQ(v[10], path.p[0](1));
  EXPECT_EQ(v[11], path.kappa[0]);
  int rows = 2;  // header and first node already read
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 1 + path.nodes());
}

}  // namespace
}  // namespace lqmf
