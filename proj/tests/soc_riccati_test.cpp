#include "lqmf/soc_riccati.hpp"

#include <gtest/gtest.h>

#include <algorithm>

#include "lqmf/simulate.hpp"
#include "test_util.hpp"

namespace lqmf {
namespace {

using test::Reference;
using test::scalar;
using test::vscalar;

std::pair<ModelSpec, CostSpec> bar_free(std::pair<ModelSpec, CostSpec> mc) {
  mc.first.Abar.setZero();
  mc.first.Cbar.setZero();
  mc.first.Gammabar.setZero();
  mc.second.Qbar.setZero();
  return mc;
}

GTEST_TEST(GCorrections, VanishWithoutBarsOrPi) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const auto [md, cs] = bar_free(test::random_model(rng, 2, 2));
    const Mat L = test::random_matrix(rng, 2, 2, 0.5);
    const GCorrections g =
        g_corrections(md, cs, 5, L * L.transpose(), Mat::Zero(2, 2), test::random_vector(rng, 2, 1));
    EXPECT_LE(g.g1.norm(), 1e-14);
    EXPECT_LE(g.g2.norm(), 1e-14);
    EXPECT_LE(g.g3.norm(), 1e-14);
  }
  const auto [md, cs] = test::random_model(rng, 2, 1);
  const GCorrections g = g_corrections(md, cs, 3, Mat::Identity(2, 2), Mat::Zero(2, 2), Vec::Ones(2));
  EXPECT_EQ(g.g3.norm(), 0.0);
}

GTEST_TEST(GCorrections, ScalarOffsetExample) {
  ModelSpec md = ModelSpec::zeros(1, 1);
  md.B = scalar(1);
  md.b = vscalar(1);
  CostSpec cs = CostSpec::zeros(1, 1);
  cs.R = scalar(1);
  const GCorrections g = g_corrections(md, cs, 2, scalar(1), scalar(1), vscalar(0));
  EXPECT_NEAR(g.g3(0), -0.5, 1e-15);
}

GTEST_TEST(SolveSocRiccati, ZeroHorizon) {
  std::mt19937_64 rng(2);
  const auto [md, cs] = test::random_model(rng, 2, 1);
  const SocRiccatiPath path = solve_soc_riccati(md, cs, 0.0, 4, 100);
  ASSERT_EQ(path.nodes(), 1);
  EXPECT_EQ(path.PN[0].norm() + path.PiN[0].norm() + path.pN[0].norm() + path.kappaN[0], 0.0);
}

GTEST_TEST(SolveSocRiccati, BarFreeCoincidesWithMeanField) {
  std::mt19937_64 rng(3);
  const auto [md, cs] = bar_free(test::random_model(rng, 2, 2));
  const RiccatiPath mfc = solve_mfc_riccati(md, cs, 2.0);
  for (int N : {1, 3, 10}) {
    const SocRiccatiPath soc = solve_soc_riccati(md, cs, 2.0, N);
    for (int k = 0; k < soc.nodes(); k += 50) {
      EXPECT_LE((soc.PN[k] - mfc.P[k]).norm(), 1e-12);
      EXPECT_LE(soc.PiN[k].norm(), 1e-12);
      EXPECT_LE((soc.pN[k] - mfc.p[k]).norm(), 1e-12);
      EXPECT_NEAR(soc.kappaN[k], mfc.kappa[k], 1e-12);
    }
  }
}

GTEST_TEST(SolveSocRiccati, GapShrinksLikeOneOverN) {
  Reference ref;
  ref.Qbar(1.0);
  const RiccatiPath mfc = solve_mfc_riccati(ref.model, ref.cost, 1.0);
  const SocRiccatiPath s10 = solve_soc_riccati(ref.model, ref.cost, 1.0, 10);
  const SocRiccatiPath s20 = solve_soc_riccati(ref.model, ref.cost, 1.0, 20);
  const double d10 = (s10.PN[0] - mfc.P[0]).norm() + (s10.PiN[0] - mfc.Pi(0)).norm();
  const double d20 = (s20.PN[0] - mfc.P[0]).norm() + (s20.PiN[0] - mfc.Pi(0)).norm();
  EXPECT_GT(d20, 0.0);
  EXPECT_NEAR(d10 / d20, 2.0, 0.1);
}

GTEST_TEST(SolveSocRiccati, NormalizedDistanceBounded) {
  Reference ref;
  ref.Qbar(1.0);
  const RiccatiPath mfc = solve_mfc_riccati(ref.model, ref.cost, 2.0);
  std::vector<double> scaled;
  for (int N : {8, 16, 32, 64}) {
    const SocRiccatiPath soc = solve_soc_riccati(ref.model, ref.cost, 2.0, N);
    double worst = 0.0;
    for (int k = 0; k < soc.nodes(); ++k)
      worst = std::max(worst, (soc.PN[k] - mfc.P[k]).norm() + (soc.PiN[k] - mfc.Pi(k)).norm());
    scaled.push_back(worst * N);
  }
  const auto [lo, hi] = std::minmax_element(scaled.begin(), scaled.end());
  EXPECT_LE(*hi, 1.5 * *lo);
}

void expect_oracle_equivalence(const ModelSpec& md, const CostSpec& cs, int N, double T,
                               int steps) {
  const SocRiccatiPath soc = solve_soc_riccati(md, cs, T, N, steps);
  const FullSocSolution full = solve_full_soc_oracle(md, cs, T, N, steps);
  ASSERT_EQ(soc.nodes(), static_cast<int>(full.bigP.size()));
  for (int k = 0; k < soc.nodes(); ++k) {
    const Mat d = full.block(k, 0, 0);
    EXPECT_LE((N * d - soc.PN[k]).norm(), 1e-7) << "node " << k;
    EXPECT_LE((full.segment(k, 0) * N - soc.pN[k]).norm(), 1e-7);
    EXPECT_NEAR(full.bigk[k], soc.kappaN[k], 1e-7);
    EXPECT_GE(min_eigenvalue(full.bigP[k]), -1e-10);
    for (int i = 0; i < N; ++i) {
      EXPECT_LE((full.block(k, i, i) - d).norm(), 1e-8);
      EXPECT_LE((full.segment(k, i) - full.segment(k, 0)).norm(), 1e-8);
      for (int j = 0; j < N; ++j) {
        if (i == j) continue;
        EXPECT_LE((full.block(k, i, j) - full.block(k, 1, 0)).norm(), 1e-8);
        EXPECT_LE((double(N) * N * full.block(k, i, j) - soc.PiN[k]).norm(), 1e-7);
      }
    }
  }
}

GTEST_TEST(FullOracle, SingleAgentIsStandardLq) {
  std::mt19937_64 rng(4);
  const auto [md, cs] = test::random_model(rng, 2, 1);
  expect_oracle_equivalence(md, cs, 1, 1.0, 200);
}

GTEST_TEST(FullOracle, ReferenceWithQbar) {
  Reference ref;
  ref.Qbar(1.0);
  expect_oracle_equivalence(ref.model, ref.cost, 2, 1.0, 1000);
}

GTEST_TEST(FullOracle, RandomModels) {
  std::mt19937_64 rng(5);
  for (int N : {2, 3, 4})
    for (int n : {1, 2}) {
      const auto [md, cs] = test::random_model(rng, n, 1 + (N + n) % 2);
      expect_oracle_equivalence(md, cs, N, 1.0, 200);
    }
}

GTEST_TEST(FullOracle, ScaleGuard) {
  std::mt19937_64 rng(6);
  const auto [md, cs] = test::random_model(rng, 2, 1);
  try {
    solve_full_soc_oracle(md, cs, 1.0, 33, 10);
    FAIL() << "expected the guard to trip";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("oracle scale exceeded"), std::string::npos);
  }
}

GTEST_TEST(SocFeedback, MatchesOracleFeedback) {
  std::mt19937_64 rng(7);
  const int N = 3;
  const auto [md, cs] = test::random_model(rng, 2, 1);
  const SocRiccatiPath soc = solve_soc_riccati(md, cs, 1.0, N, 200);
  const FullSocSolution full = solve_full_soc_oracle(md, cs, 1.0, N, 200);
  const FeedbackLaw law = soc_feedback(soc, md, cs);
  const int n = md.n, m = md.m;
  for (int k : {0, 100, 200}) {
    const auto [K, k0] = full.feedback(k);
    const Mat self = law.self_gain(k);
    const Mat mean = law.mean_gain(k);
    for (int i = 0; i < N; ++i) {
      EXPECT_LE((k0.segment(i * m, m) - law.offset(k)).norm(), 1e-7);
      for (int j = 0; j < N; ++j) {
        const Mat expect = (i == j ? self : Mat::Zero(m, n)) + mean / N;
        EXPECT_LE((K.block(i * m, j * n, m, n) - expect).norm(), 1e-7);
      }
    }
  }
}

GTEST_TEST(SocFeedback, BarFreeCollapsesToMeanFieldLaw) {
  std::mt19937_64 rng(8);
  const auto [md, cs] = bar_free(test::random_model(rng, 2, 1));
  const FeedbackLaw mfc = feedback_from_path(md, cs, solve_mfc_riccati(md, cs, 1.0));
  const FeedbackLaw soc = soc_feedback(solve_soc_riccati(md, cs, 1.0, 5), md, cs);
  for (int k = 0; k < soc.nodes(); k += 100) {
    EXPECT_LE((soc.self_gain(k) - mfc.Theta[k]).norm(), 1e-12);
    EXPECT_LE(soc.mean_gain(k).norm(), 1e-12);
    EXPECT_LE((soc.offset(k) - mfc.theta[k]).norm(), 1e-12);
  }
}

GTEST_TEST(SocFeedback, SelfGainCorrection) {
  // N = 2, P = 1, Pi = 1, B = R = 1: thetabar = 1 and the self gain gains 1/2
  ModelSpec md = ModelSpec::zeros(1, 1);
  md.B = scalar(1);
  CostSpec cs = CostSpec::zeros(1, 1);
  cs.R = scalar(1);
  SocRiccatiPath path;
  path.grid = TimeGrid(0.0, 0);
  path.N = 2;
  path.PN = {scalar(1)};
  path.PiN = {scalar(1)};
  path.pN = {vscalar(0)};
  path.kappaN = {0.0};
  const FeedbackLaw law = soc_feedback(path, md, cs);
  const double Theta = -1.0;  // -R^{-1} B' P
  EXPECT_NEAR(law.self_gain(0)(0, 0) - Theta, 0.5, 1e-15);
  md.B = scalar(0);
  path.PiN = {scalar(0)};
  EXPECT_EQ(soc_feedback(path, md, cs).self_gain(0)(0, 0), 0.0);
}

GTEST_TEST(ValueSoc, ZeroDataAndOracle) {
  std::mt19937_64 rng(9);
  auto [md, cs] = test::random_model(rng, 1, 1);
  const int N = 2;
  const SocRiccatiPath soc = solve_soc_riccati(md, cs, 1.0, N, 500);
  const FullSocSolution full = solve_full_soc_oracle(md, cs, 1.0, N, 500);
  const std::vector<Vec> ones{vscalar(1), vscalar(1)};
  const double formula = soc.PN[0](0, 0) + soc.PiN[0](0, 0) / 2 + 2 * soc.pN[0](0) + soc.kappaN[0];
  EXPECT_NEAR(value_soc(soc, ones), formula, 1e-14);
  EXPECT_NEAR(value_soc(soc, ones), full.value(ones), 1e-8);
  for (int trial = 0; trial < 5; ++trial) {
    const std::vector<Vec> x{test::random_vector(rng, 1, 1), test::random_vector(rng, 1, 1)};
    EXPECT_NEAR(value_soc(soc, x), full.value(x), 1e-8);
  }
  EXPECT_THROW(value_soc(soc, {vscalar(1)}), InputError);

  md.b.setZero();
  md.sigma.setZero();
  md.gamma.setZero();
  cs.q.setZero();
  cs.r.setZero();
  const SocRiccatiPath hom = solve_soc_riccati(md, cs, 1.0, N);
  EXPECT_EQ(value_soc(hom, {vscalar(0), vscalar(0)}), 0.0);
}

GTEST_TEST(ValueSoc, Exchangeable) {
  std::mt19937_64 rng(10);
  const auto [md, cs] = test::random_model(rng, 2, 1);
  const SocRiccatiPath soc = solve_soc_riccati(md, cs, 1.0, 5);
  std::vector<Vec> x;
  for (int i = 0; i < 5; ++i) x.push_back(test::random_vector(rng, 2, 1));
  const double v = value_soc(soc, x);
  std::vector<Vec> y = x;
  std::reverse(y.begin(), y.end());
  std::swap(y[0], y[3]);
  EXPECT_DOUBLE_EQ(value_soc(soc, y), v);
}

GTEST_TEST(ValueSoc, SimulatedSocialCostMatches) {
  Reference ref;
  ref.Qbar(1.0).sigma(0.5);
  ref.model.gamma(0) = 0.3;
  const int N = 8;
  const double T = 1.0;
  const SocRiccatiPath soc = solve_soc_riccati(ref.model, ref.cost, T, N);
  const InitialLaw law = InitialLaw::point_mass(vscalar(1));
  SimConfig cfg;
  cfg.T = T;
  cfg.dt = 1e-3;
  cfg.common_paths = 256;
  const Ensemble ens = simulate_nagent(ref.model, ref.cost, soc_feedback(soc, ref.model, ref.cost),
                                       law, N, cfg);
  const CostEstimate e = estimate_cost(ens);
  const double v = value_soc(soc, std::vector<Vec>(N, vscalar(1)));
  EXPECT_NEAR(e.estimate, v, 3 * e.std_error + 2e-3) << "se " << e.std_error;
}

GTEST_TEST(WriteCsv, SocHeaderCarriesN) {
  std::mt19937_64 rng(11);
  const auto [md, cs] = test::random_model(rng, 1, 1);
  std::ostringstream os;
  write_csv(os, solve_soc_riccati(md, cs, 1.0, 7, 2));
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,P_0_0,PiN_0_0,p_0,kappa,N");
  std::getline(is, line);
  EXPECT_EQ(line.substr(line.rfind(',') + 1), "7");
}

}  // namespace
}  // namespace lqmf
