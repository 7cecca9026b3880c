#pragma once

// N-agent social optimization. The reduced system tracks the rescaled blocks
// (P^N, Pi^N, p^N, kappa^N) of the Nn-dimensional social Riccati solution;
// solve_full_soc_oracle integrates the Nn-dimensional system itself.

#include "lqmf/kernels.hpp"
#include "lqmf/mfc_riccati.hpp"
#include "lqmf/model.hpp"
#include "lqmf/types.hpp"

#include <sstream>
#include <vector>

namespace lqmf {

struct GCorrections {
  Mat g1;
  Mat g2;
  Vec g3;
};

/// The 1/N correction terms. P, Pi, p are the rescaled quantities.
inline GCorrections g_corrections(const RiccatiMaps& maps, int N, const Mat& P, const Mat& Pi,
                                  const Vec& p) {
  if (N < 1) throw InputError("g_corrections: N must be >= 1");
  const ModelSpec& md = maps.model();
  const double iN = 1.0 / N;
  const double iN2 = iN * iN;
  const auto Rlu = maps.factor_R(P);
  const Mat Pibar = P + Pi;
  const Mat Theta = -Rlu.solve(maps.calS(P));
  const Vec theta = -Rlu.solve(maps.theta_rhs(p, P));

  const Mat& Ab = md.Abar;
  const Mat& Gm = md.Gamma;
  const Mat& Gb = md.Gammabar;
  const Mat DPCb = md.D.transpose() * P * md.Cbar;  // m x n
  const Mat BPi = md.B.transpose() * Pi;            // m x n
  const Mat W = BPi + DPCb;
  const Mat bar_terms = Pi * Ab + Ab.transpose() * Pi + Gb.transpose() * Pi * Gb +
                        Gb.transpose() * Pi * Gm + Gm.transpose() * Pi * Gb;

  GCorrections g;
  // The (N-1)/N^2 quadratic term enters with a minus sign: it is the
  // off-diagonal part of S'R^{-1}S in the Nn-dimensional equation, which
  // the full oracle confirms.
  g.g1 = iN * DPCb.transpose() * Theta + iN * Theta.transpose() * DPCb -
         iN2 * DPCb.transpose() * Rlu.solve(DPCb) -
         (N - 1.0) * iN2 * W.transpose() * Rlu.solve(W) +
         iN * (maps.calQhat(P, Pibar) - maps.calQ(P) - Pi * md.A - md.A.transpose() * Pi -
               Gm.transpose() * Pi * Gm) -
         iN2 * bar_terms;
  g.g2 = iN * W.transpose() * Rlu.solve(BPi) + iN * Pi * md.B * Rlu.solve(W) - iN * bar_terms;
  g.g1 = symmetrize(g.g1);
  g.g2 = symmetrize(g.g2);
  g.g3 = -iN * (Pi * md.B * theta + Pi * md.b + maps.Gammahat().transpose() * Pi * md.gamma);
  return g;
}

inline GCorrections g_corrections(const ModelSpec& model, const CostSpec& cost, int N,
                                  const Mat& P, const Mat& Pi, const Vec& p) {
  return g_corrections(RiccatiMaps(model, cost), N, P, Pi, p);
}

struct SocRiccatiPath {
  TimeGrid grid;
  int N = 1;
  std::vector<Mat> PN;
  std::vector<Mat> PiN;
  std::vector<Vec> pN;
  std::vector<double> kappaN;
  double psd_floor = 0.0;

  [[nodiscard]] int nodes() const { return static_cast<int>(PN.size()); }
};

inline SocRiccatiPath solve_soc_riccati(const ModelSpec& model, const CostSpec& cost, double T,
                                        int N, int steps) {
  if (N < 1) throw InputError("solve_soc_riccati: N must be >= 1");
  model.validate();
  detail::require_h1(cost);
  const RiccatiMaps maps(model, cost);
  const TimeGrid grid(T, steps);
  const double iN = 1.0 / N;

  // State record: P = P^N, M = Pi^N.
  auto rhs = [&](double, const QuadState& s) {
    const Mat Pibar = s.P + s.M;
    const PsiFields f = psi_fields(maps, s.P, Pibar, s.p);
    const GCorrections g = g_corrections(maps, N, s.P, s.M, s.p);
    return QuadState{-(f.psi1 + g.g1), -(f.psi2() + g.g2), -(f.psi3 + g.g3),
                     -(f.psi4 - iN * model.gamma.dot(s.M * model.gamma))};
  };
  const std::vector<QuadState> states =
      integrate_backward(rhs, QuadState::zeros(model.n), grid);

  SocRiccatiPath path;
  path.grid = grid;
  path.N = N;
  for (std::size_t k = 0; k < states.size(); ++k) {
    Mat P = symmetrize(states[k].P);
    const double t = grid.t(static_cast<int>(k));
    path.psd_floor = std::max(path.psd_floor, detail::check_psd_and_clip(P, t, "P^N"));
    if (min_eigenvalue(maps.calR(P)) <= 0.0) {
      std::ostringstream os;
      os << "H1 insufficient numerically: R + D'P^N D not positive definite at t = " << t;
      throw SolverError(os.str());
    }
    path.PN.push_back(std::move(P));
    path.PiN.push_back(symmetrize(states[k].M));
    path.pN.push_back(states[k].p);
    path.kappaN.push_back(states[k].kappa);
  }
  return path;
}

inline SocRiccatiPath solve_soc_riccati(const ModelSpec& model, const CostSpec& cost, double T,
                                        int N) {
  return solve_soc_riccati(model, cost, T, N, default_riccati_steps(T));
}

/// Per-agent law u_i = (Theta^N + thetabar^N / N) x_i + (Thetabar^N - Theta^N) xbar_N + theta^N
/// with thetabar^N = R(P^N)^{-1} B' Pi^N, stored as a FeedbackLaw whose mean
/// input is the empirical average of the N states.
inline FeedbackLaw soc_feedback(const SocRiccatiPath& path, const ModelSpec& model,
                                const CostSpec& cost) {
  const RiccatiMaps maps(model, cost);
  const double iN = 1.0 / path.N;
  FeedbackLaw law;
  for (int k = 0; k < path.nodes(); ++k) {
    const Mat& P = path.PN[k];
    const Mat Pibar = P + path.PiN[k];
    const auto Rlu = maps.factor_R(P);
    const Mat Theta = -Rlu.solve(maps.calS(P));
    const Mat Thetabar = -Rlu.solve(maps.calShat(P, Pibar));
    const Mat thetabar_corr = Rlu.solve(model.B.transpose() * path.PiN[k]);
    const Mat self = Theta + iN * thetabar_corr;
    law.times.push_back(path.grid.t(k));
    law.Theta.push_back(self);
    law.Thetabar.push_back(self + (Thetabar - Theta));
    law.theta.push_back(-Rlu.solve(maps.theta_rhs(path.pN[k], P)));
  }
  return law;
}

inline double value_soc(const SocRiccatiPath& path, const std::vector<Vec>& x) {
  if (static_cast<int>(x.size()) != path.N) {
    std::ostringstream os;
    os << "value_soc: expected " << path.N << " initial states, got " << x.size();
    throw InputError(os.str());
  }
  const Mat& P = path.PN[0];
  const Mat& Pi = path.PiN[0];
  const Eigen::Index n = P.rows();
  Vec sum = Vec::Zero(n);
  double diag = 0.0;
  double self_pi = 0.0;
  for (const Vec& xi : x) {
    if (xi.size() != n) throw InputError("value_soc: initial state has wrong dimension");
    diag += xi.dot(P * xi);
    self_pi += xi.dot(Pi * xi);
    sum += xi;
  }
  const double N = path.N;
  const Vec xbar = sum / N;
  // sum over j != k of x_j' Pi x_k = (sum x)' Pi (sum x) - sum_j x_j' Pi x_j
  return diag / N + (sum.dot(Pi * sum) - self_pi) / (N * N) + 2.0 * xbar.dot(path.pN[0]) +
         path.kappaN[0];
}

/// Social value averaged over i.i.d. initial states drawn from `law`.
inline double expected_value_soc(const SocRiccatiPath& path, const InitialLaw& law) {
  const double N = path.N;
  const Vec& mu = law.mean;
  return (path.PN[0] * law.second_moment).trace() + (1.0 - 1.0 / N) * mu.dot(path.PiN[0] * mu) +
         2.0 * mu.dot(path.pN[0]) + path.kappaN[0];
}

inline void write_csv(std::ostream& os, const SocRiccatiPath& path) {
  write_path_csv(os, path.grid, path.PN, path.PiN, "PiN", path.pN, path.kappaN, path.N);
}

// ---------------------------------------------------------------------------
// Full Nn-dimensional oracle.

inline constexpr int kOracleMaxDimension = 64;

/// Stacked dynamics of the N agents as one LQ problem in dimension Nn:
///   dx = (A x + B u + b) dt + sum_i (C_i x + D_i u + sigma_i) dW^i + (G x + g) dW^0
/// with cost x'Qx + 2u'Sx + u'Ru + 2q'x + 2r'u averaged over agents.
struct BoldSystem {
  int N = 0;
  int n = 0;
  int m = 0;
  Mat A, B, G, Q, S, R;
  Vec b, g, q, r;
  std::vector<Mat> C, D;
  std::vector<Vec> sigma;

  static BoldSystem assemble(const ModelSpec& md, const CostSpec& cs, int N) {
    BoldSystem s;
    s.N = N;
    s.n = md.n;
    s.m = md.m;
    const int n = md.n;
    const int m = md.m;
    const Mat IN = Mat::Identity(N, N);
    const Mat ones = Mat::Ones(N, N);
    const Vec one = Vec::Ones(N);
    const double iN = 1.0 / N;
    auto kron = [](const Mat& X, const Mat& Y) -> Mat { return Eigen::kroneckerProduct(X, Y); };

    s.A = kron(IN, md.A) + iN * kron(ones, md.Abar);
    s.B = kron(IN, md.B);
    s.G = kron(IN, md.Gamma) + iN * kron(ones, md.Gammabar);
    s.Q = iN * kron(IN, cs.Q) + iN * iN * kron(ones, cs.Qbar);
    s.S = iN * kron(IN, cs.S);
    s.R = iN * kron(IN, cs.R);
    s.b = kron(one, md.b);
    s.g = kron(one, md.gamma);
    s.q = iN * kron(one, cs.q);
    s.r = iN * kron(one, cs.r);
    for (int i = 0; i < N; ++i) {
      Mat Ci = Mat::Zero(N * n, N * n);
      Ci.block(i * n, i * n, n, n) += md.C;
      for (int j = 0; j < N; ++j) Ci.block(i * n, j * n, n, n) += iN * md.Cbar;
      Mat Di = Mat::Zero(N * n, N * m);
      Di.block(i * n, i * m, n, m) = md.D;
      Vec si = Vec::Zero(N * n);
      si.segment(i * n, n) = md.sigma;
      s.C.push_back(std::move(Ci));
      s.D.push_back(std::move(Di));
      s.sigma.push_back(std::move(si));
    }
    return s;
  }

  [[nodiscard]] Mat calR(const Mat& P) const {
    Mat out = R;
    for (int i = 0; i < N; ++i) out += D[i].transpose() * P * D[i];
    return symmetrize(out);
  }
  [[nodiscard]] Mat calS(const Mat& P) const {
    Mat out = B.transpose() * P + S;
    for (int i = 0; i < N; ++i) out += D[i].transpose() * P * C[i];
    return out;
  }
  [[nodiscard]] Vec offset_rhs(const Mat& P, const Vec& p) const {
    Vec out = B.transpose() * p + r;
    for (int i = 0; i < N; ++i) out += D[i].transpose() * P * sigma[i];
    return out;
  }
};

struct FullSocSolution {
  TimeGrid grid;
  int N = 0;
  int n = 0;
  BoldSystem system;
  std::vector<Mat> bigP;
  std::vector<Vec> bigp;
  std::vector<double> bigk;

  [[nodiscard]] Mat block(int node, int i, int j) const {
    return bigP[node].block(i * n, j * n, n, n);
  }
  [[nodiscard]] Vec segment(int node, int i) const { return bigp[node].segment(i * n, n); }

  [[nodiscard]] double value(const std::vector<Vec>& x) const {
    Vec X(N * n);
    if (static_cast<int>(x.size()) != N) throw InputError("oracle value: wrong agent count");
    for (int i = 0; i < N; ++i) X.segment(i * n, n) = x[i];
    return X.dot(bigP[0] * X) + 2.0 * X.dot(bigp[0]) + bigk[0];
  }

  /// Optimal stacked feedback u = K x + k0 at a node.
  [[nodiscard]] std::pair<Mat, Vec> feedback(int node) const {
    const Mat& P = bigP[node];
    Eigen::PartialPivLU<Mat> lu(system.calR(P));
    return {-lu.solve(system.calS(P)), -lu.solve(system.offset_rhs(P, bigp[node]))};
  }
};

inline FullSocSolution solve_full_soc_oracle(const ModelSpec& model, const CostSpec& cost,
                                             double T, int N, int steps) {
  if (N < 1) throw InputError("solve_full_soc_oracle: N must be >= 1");
  model.validate();
  if (N * model.n > kOracleMaxDimension) {
    std::ostringstream os;
    os << "oracle scale exceeded: N*n = " << N * model.n << " > " << kOracleMaxDimension;
    throw InputError(os.str());
  }
  detail::require_h1(cost);
  const BoldSystem sys = BoldSystem::assemble(model, cost, N);
  const TimeGrid grid(T, steps);
  const int dim = N * model.n;

  // Standard stochastic LQ Riccati system in dimension Nn; M is unused.
  auto rhs = [&](double, const QuadState& s) {
    const Mat& P = s.P;
    Eigen::PartialPivLU<Mat> lu(sys.calR(P));
    const Mat Sfull = sys.calS(P);
    const Vec off = sys.offset_rhs(P, s.p);
    Mat quad = P * sys.A + sys.A.transpose() * P + sys.G.transpose() * P * sys.G + sys.Q;
    Vec lin = sys.A.transpose() * s.p + P * sys.b + sys.G.transpose() * P * sys.g + sys.q;
    double cst = 2.0 * sys.b.dot(s.p) + sys.g.dot(P * sys.g);
    for (int i = 0; i < N; ++i) {
      quad += sys.C[i].transpose() * P * sys.C[i];
      lin += sys.C[i].transpose() * P * sys.sigma[i];
      cst += sys.sigma[i].dot(P * sys.sigma[i]);
    }
    quad -= Sfull.transpose() * lu.solve(Sfull);
    lin -= Sfull.transpose() * lu.solve(off);
    cst -= off.dot(lu.solve(off));
    return QuadState{-symmetrize(quad), Mat(), -lin, -cst};
  };
  QuadState terminal{Mat::Zero(dim, dim), Mat(), Vec::Zero(dim), 0.0};
  const std::vector<QuadState> states = integrate_backward(rhs, terminal, grid);

  FullSocSolution sol;
  sol.grid = grid;
  sol.N = N;
  sol.n = model.n;
  sol.system = sys;
  for (const QuadState& s : states) {
    sol.bigP.push_back(symmetrize(s.P));
    sol.bigp.push_back(s.p);
    sol.bigk.push_back(s.kappa);
  }
  return sol;
}

}  // namespace lqmf
