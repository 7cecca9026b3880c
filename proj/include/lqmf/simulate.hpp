#pragma once

// Euler-Maruyama simulation of the closed loops.
//
// A simulation runs one or more "lanes" (feedback laws) on the same noise.
// Replicas are grouped into tasks: one task is a block of columns that
// shares a common-noise path. Each replica owns its own generator, seeded
// from (seed_base, common path, replica, purpose), so the results do not
// depend on how tasks are scheduled across threads. Partial sums are reduced
// in task order.

#include "lqmf/mfc_riccati.hpp"
#include "lqmf/model.hpp"
#include "lqmf/types.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace lqmf {

inline constexpr int kDefaultBlockSize = 256;
inline constexpr double kMaxPathDumpBytes = 1024.0 * 1024.0 * 1024.0;

/// Thread count from LQMF_THREADS, else the hardware concurrency.
inline int default_thread_count() {
  if (const char* env = std::getenv("LQMF_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct SimConfig {
  double dt = 1e-3;
  double T = 1.0;
  int replicas = 4096;      // idiosyncratic copies per common path
  int common_paths = 1;     // independent W0 paths (outer Monte Carlo loop)
  std::uint64_t seed_common = 1;
  std::uint64_t seed_base = 2;
  double burn_in = 0.0;     // start of the window for time averages
  int block_size = kDefaultBlockSize;
  int threads = 0;          // 0: default_thread_count()
  bool record_paths = false;           // dump lane-0 state paths
  std::vector<double> snapshot_times;  // lane-0 state snapshots

  [[nodiscard]] int steps() const {
    const double k = T / dt;
    return static_cast<int>(std::llround(k));
  }

  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InputError("sim config: dt must be positive");
    if (!(T >= 0.0) || !std::isfinite(T)) throw InputError("sim config: T must be >= 0");
    if (std::abs(T / dt - std::round(T / dt)) > 1e-9 * std::max(1.0, T / dt))
      throw InputError("sim config: T/dt must be an integer");
    if (replicas < 1) throw InputError("sim config: replicas must be >= 1");
    if (common_paths < 1) throw InputError("sim config: common_paths must be >= 1");
    if (block_size < 1) throw InputError("sim config: block_size must be >= 1");
    if (burn_in < 0.0 || burn_in > T) throw InputError("sim config: burn_in outside [0, T]");
  }
};

enum class MeanSource { companion, empirical };

/// Per-step gains u = self x + mean m + offset on the simulation grid.
struct GainSchedule {
  std::vector<Mat> self;
  std::vector<Mat> mean;
  std::vector<Vec> offset;
};

/// Samples the law at the simulation nodes; time-varying laws are linearly
/// interpolated between their own nodes.
inline GainSchedule schedule_on(const FeedbackLaw& law, const TimeGrid& grid) {
  if (law.nodes() < 1) throw InputError("feedback law has no nodes");
  GainSchedule s;
  const int K = grid.nodes();
  s.self.reserve(K);
  s.mean.reserve(K);
  s.offset.reserve(K);
  if (law.constant()) {
    for (int k = 0; k < K; ++k) {
      s.self.push_back(law.self_gain(0));
      s.mean.push_back(law.mean_gain(0));
      s.offset.push_back(law.offset(0));
    }
    return s;
  }
  const double t_end = law.times.back();
  if (grid.T > t_end + 1e-9 * std::max(1.0, t_end))
    throw InputError("feedback law does not cover the simulation horizon");
  int j = 0;
  for (int k = 0; k < K; ++k) {
    const double t = std::min(grid.t(k), t_end);
    while (j + 1 < law.nodes() - 1 && law.times[j + 1] <= t) ++j;
    const double t0 = law.times[j];
    const double t1 = law.times[j + 1];
    double w = (t1 > t0) ? (t - t0) / (t1 - t0) : 0.0;
    w = std::clamp(w, 0.0, 1.0);
    if (w < 1e-12) w = 0.0;
    if (w > 1.0 - 1e-12) w = 1.0;
    auto lerp = [&](const auto& a, const auto& b) {
      using T = std::decay_t<decltype(a)>;
      if (w == 0.0) return T(a);
      if (w == 1.0) return T(b);
      return T((1.0 - w) * a + w * b);
    };
    s.self.push_back(lerp(law.self_gain(j), law.self_gain(j + 1)));
    s.mean.push_back(lerp(law.mean_gain(j), law.mean_gain(j + 1)));
    s.offset.push_back(lerp(law.offset(j), law.offset(j + 1)));
  }
  return s;
}

/// One closed loop to simulate.
struct LaneSpec {
  FeedbackLaw law;
  MeanSource mean_source = MeanSource::companion;
  // Column c of this lane is driven by the noise and initial draw of column
  // (c + stream_shift) mod block. A nonzero shift breaks the pairing with
  // other lanes (negative control).
  int stream_shift = 0;
  // Draw the initial state from the independent-initial stream.
  bool independent_initial = false;
  // Optional quadratic observable x'Wx + 2w'x integrated over [burn_in, T].
  std::optional<std::pair<Mat, Vec>> observable;
};

/// Statistic rows stored per time node (sums over replicas).
enum LaneStat : int { kSumX2 = 0, kSumU2 = 1, kSumCost = 2, kSumCost2 = 3, kLaneStats = 4 };
enum PairStat : int { kSumDX2 = 0, kSumDU2 = 1, kPairStats = 2 };

struct Ensemble {
  TimeGrid grid;
  int lanes = 1;
  int common_paths = 1;
  int replicas = 1;  // per common path
  bool population = false;
  double burn_in = 0.0;

  std::vector<std::vector<double>> common_increments;  // [path][step]
  std::vector<std::vector<std::vector<Vec>>> mean_path;  // [lane][path][node], companion lanes
  // Per-path per-node sums: rows are lane stats then pair stats, cols are nodes.
  std::vector<Mat> stats;  // [path]
  std::vector<std::vector<double>> cost;         // [lane][path * replicas + j], integral over [0,T]
  std::vector<std::vector<double>> window_cost;  // [lane][...], integral over [burn_in,T]
  std::vector<std::vector<double>> observable;   // [lane][...], over [burn_in,T]
  std::vector<int> snapshot_nodes;
  std::vector<std::vector<double>> snapshots;    // [snapshot][(path * replicas + j) * n + d]
  std::vector<double> paths;                     // [(path * replicas + j) * nodes + node) * n + d]
  int n = 0;

  [[nodiscard]] int samples() const { return common_paths * replicas; }
  [[nodiscard]] int lane_row(int lane, LaneStat s) const { return lane * kLaneStats + s; }
  [[nodiscard]] int pair_row(PairStat s) const { return lanes * kLaneStats + s; }

  /// Mean over all samples of a statistic row at each node.
  [[nodiscard]] Vec node_mean(int row) const {
    Vec out = Vec::Zero(grid.nodes());
    for (const Mat& s : stats) out += s.row(row).transpose();
    return out / samples();
  }

  /// Standard error of node_mean, batching over common paths when there are
  /// at least two of them, else over replicas.
  [[nodiscard]] Vec node_stderr(int row, int square_row = -1) const {
    const int K = grid.nodes();
    Vec se = Vec::Zero(K);
    if (common_paths >= 2) {
      Mat batch(common_paths, K);
      for (int k = 0; k < common_paths; ++k) batch.row(k) = stats[k].row(row) / replicas;
      const Vec mu = batch.colwise().mean();
      for (int t = 0; t < K; ++t) {
        const double var =
            (batch.col(t).array() - mu(t)).square().sum() / (common_paths - 1);
        se(t) = std::sqrt(var / common_paths);
      }
      return se;
    }
    if (square_row < 0 || replicas < 2) return Vec::Constant(K, NAN);
    const Vec mu = stats[0].row(row).transpose() / replicas;
    const Vec m2 = stats[0].row(square_row).transpose() / replicas;
    for (int t = 0; t < K; ++t) {
      const double var = std::max(0.0, m2(t) - mu(t) * mu(t)) * replicas / (replicas - 1.0);
      se(t) = std::sqrt(var / replicas);
    }
    return se;
  }
};

namespace detail {

enum class StreamPurpose : std::uint64_t { noise = 0, initial = 1, independent_initial = 2, common = 3 };

inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t path, std::uint64_t replica,
                                   StreamPurpose purpose) {
  const auto split = [](std::uint64_t v) {
    return std::array<std::uint32_t, 2>{static_cast<std::uint32_t>(v),
                                        static_cast<std::uint32_t>(v >> 32)};
  };
  const auto s = split(seed);
  const auto p = split(path);
  const auto r = split(replica);
  std::seed_seq seq{s[0], s[1], p[0], p[1], r[0], r[1], static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

inline Mat symmetric_sqrt(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(cov));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

inline Vec draw_initial(const InitialLaw& law, const Mat& root, std::mt19937_64& eng) {
  if (law.sampler == Sampler::point_mass) return law.mean;
  std::normal_distribution<double> nd;
  Vec z(law.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = nd(eng);
  return law.mean + root * z;
}

inline std::vector<double> common_noise(std::uint64_t seed, int path, int steps, double dt) {
  std::mt19937_64 eng = make_stream(seed, static_cast<std::uint64_t>(path), 0, StreamPurpose::common);
  std::normal_distribution<double> nd;
  const double sq = std::sqrt(dt);
  std::vector<double> dw(static_cast<std::size_t>(steps));
  for (double& x : dw) x = sq * nd(eng);
  return dw;
}

// Conditional mean driven by its own affine SDE:
//   dm = ((A + Abar) m + B ((self + mean) m + offset) + b) dt + ((Gamma + Gammabar) m + gamma) dW0.
inline std::vector<Vec> companion_path(const ModelSpec& md, const GainSchedule& gs, const Vec& m0,
                                       const std::vector<double>& dw0, double dt) {
  const Mat Ah = md.A + md.Abar;
  const Mat Gh = md.Gamma + md.Gammabar;
  std::vector<Vec> m;
  m.reserve(dw0.size() + 1);
  m.push_back(m0);
  for (std::size_t k = 0; k < dw0.size(); ++k) {
    const Vec& x = m.back();
    const Vec u = (gs.self[k] + gs.mean[k]) * x + gs.offset[k];
    Vec next = x + (Ah * x + md.B * u + md.b) * dt + (Gh * x + md.gamma) * dw0[k];
    if (!next.allFinite()) {
      std::ostringstream os;
      os << "simulation blow-up at t = " << (k + 1) * dt << " (conditional mean)";
      throw SolverError(os.str());
    }
    m.push_back(std::move(next));
  }
  return m;
}

struct Task {
  int path = 0;
  int first = 0;  // first replica index
  int count = 0;
};

struct TaskResult {
  Mat stats;
  std::vector<std::vector<double>> cost, window_cost, observable;  // [lane][col]
  std::vector<std::vector<double>> snapshots;                     // [snap][col * n + d]
  std::vector<double> paths;
};

// Column-wise x'Mx.
inline Eigen::RowVectorXd col_quad(const Mat& M, const Mat& X) {
  return (M * X).cwiseProduct(X).colwise().sum();
}

struct Engine {
  const ModelSpec& md;
  const CostSpec& cs;
  const std::vector<LaneSpec>& lanes;
  const std::vector<GainSchedule>& gains;
  const InitialLaw& initial;
  const SimConfig& cfg;
  const TimeGrid& grid;
  const Ensemble& ens;  // read-only: common increments and companion paths
  Mat init_root;
  int burn_node = 0;

  TaskResult run(const Task& task) const {
    const int n = md.n;
    const int B = task.count;
    const int L = static_cast<int>(lanes.size());
    const int K = grid.steps;
    const double dt = grid.h();
    const double sq = std::sqrt(dt);
    const int nstats = L * kLaneStats + (L == 2 ? kPairStats : 0);

    TaskResult res;
    res.stats = Mat::Zero(nstats, K + 1);
    res.cost.assign(L, std::vector<double>(B, 0.0));
    res.window_cost.assign(L, std::vector<double>(B, 0.0));
    res.observable.assign(L, std::vector<double>(B, 0.0));
    res.snapshots.assign(ens.snapshot_nodes.size(), std::vector<double>(std::size_t(B) * n));
    if (cfg.record_paths) res.paths.assign(std::size_t(B) * (K + 1) * n, 0.0);

    std::vector<std::mt19937_64> noise;
    std::vector<std::normal_distribution<double>> nd(B);
    noise.reserve(B);
    Mat X0(n, B), X0ind;
    bool need_ind = std::any_of(lanes.begin(), lanes.end(),
                                [](const LaneSpec& l) { return l.independent_initial; });
    if (need_ind) X0ind.resize(n, B);
    for (int c = 0; c < B; ++c) {
      const auto j = static_cast<std::uint64_t>(task.first + c);
      const auto k = static_cast<std::uint64_t>(task.path);
      noise.push_back(make_stream(cfg.seed_base, k, j, StreamPurpose::noise));
      auto ie = make_stream(cfg.seed_base, k, j, StreamPurpose::initial);
      X0.col(c) = draw_initial(initial, init_root, ie);
      if (need_ind) {
        auto je = make_stream(cfg.seed_base, k, j, StreamPurpose::independent_initial);
        X0ind.col(c) = draw_initial(initial, init_root, je);
      }
    }

    auto permute = [&](const Mat& src, int shift) {
      if (shift == 0) return src;
      Mat out(src.rows(), src.cols());
      for (int c = 0; c < B; ++c) out.col(c) = src.col(((c + shift) % B + B) % B);
      return out;
    };

    std::vector<Mat> X(L), U(L);
    std::vector<Eigen::RowVectorXd> acc(L, Eigen::RowVectorXd::Zero(B));
    std::vector<Eigen::RowVectorXd> win(L, Eigen::RowVectorXd::Zero(B));
    std::vector<Eigen::RowVectorXd> obs(L, Eigen::RowVectorXd::Zero(B));
    for (int l = 0; l < L; ++l)
      X[l] = permute(lanes[l].independent_initial ? X0ind : X0, lanes[l].stream_shift);

    Eigen::RowVectorXd dw(B), dwl(B);
    std::vector<Vec> mvec(L);
    const std::vector<double>& dw0 = ens.common_increments[task.path];

    auto mean_of = [&](int l, int k) -> Vec {
      if (lanes[l].mean_source == MeanSource::empirical) return X[l].rowwise().mean();
      return ens.mean_path[l][task.path][k];
    };

    for (int k = 0; k <= K; ++k) {
      // controls and running cost at node k (left endpoint)
      for (int l = 0; l < L; ++l) {
        mvec[l] = mean_of(l, k);
        const GainSchedule& g = gains[l];
        U[l] = g.self[k] * X[l];
        U[l].colwise() += g.mean[k] * mvec[l] + g.offset[k];
      }
      for (int l = 0; l < L; ++l) {
        res.stats(l * kLaneStats + kSumX2, k) += X[l].squaredNorm();
        res.stats(l * kLaneStats + kSumU2, k) += U[l].squaredNorm();
        res.stats(l * kLaneStats + kSumCost, k) += acc[l].sum();
        res.stats(l * kLaneStats + kSumCost2, k) += acc[l].squaredNorm();
      }
      if (L == 2) {
        res.stats(L * kLaneStats + kSumDX2, k) += (X[0] - X[1]).squaredNorm();
        res.stats(L * kLaneStats + kSumDU2, k) += (U[0] - U[1]).squaredNorm();
      }
      for (std::size_t s = 0; s < ens.snapshot_nodes.size(); ++s)
        if (ens.snapshot_nodes[s] == k)
          Eigen::Map<Mat>(res.snapshots[s].data(), n, B) = X[0];
      if (cfg.record_paths)
        for (int c = 0; c < B; ++c)
          Eigen::Map<Vec>(res.paths.data() + (std::size_t(c) * (K + 1) + k) * n, n) = X[0].col(c);
      if (k == K) break;

      for (int c = 0; c < B; ++c) dw(c) = sq * nd[c](noise[c]);
      for (int l = 0; l < L; ++l) {
        const Mat& x = X[l];
        const Mat& u = U[l];
        const Vec& m = mvec[l];
        Eigen::RowVectorXd f = col_quad(cs.Q, x) + 2.0 * (cs.S * x).cwiseProduct(u).colwise().sum() +
                               col_quad(cs.R, u);
        f += 2.0 * (cs.q.transpose() * x) + 2.0 * (cs.r.transpose() * u);
        f.array() += m.dot(cs.Qbar * m);
        acc[l] += f * dt;
        if (k >= burn_node) {
          win[l] += f * dt;
          if (lanes[l].observable) {
            const auto& [W, w] = *lanes[l].observable;
            obs[l] += (col_quad(W, x) + 2.0 * (w.transpose() * x)) * dt;
          }
        }

        const int shift = lanes[l].stream_shift;
        if (shift == 0) {
          dwl = dw;
        } else {
          for (int c = 0; c < B; ++c) dwl(c) = dw(((c + shift) % B + B) % B);
        }
        Mat drift = md.A * x + md.B * u;
        drift.colwise() += md.Abar * m + md.b;
        Mat diff = md.C * x + md.D * u;
        diff.colwise() += md.Cbar * m + md.sigma;
        Mat diff0 = md.Gamma * x;
        diff0.colwise() += md.Gammabar * m + md.gamma;
        X[l] += drift * dt + diff * dwl.asDiagonal() + diff0 * dw0[k];
        if (!X[l].allFinite()) {
          std::ostringstream os;
          os << "simulation blow-up at t = " << grid.t(k + 1);
          throw SolverError(os.str());
        }
      }
    }
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < B; ++c) {
        res.cost[l][c] = acc[l](c);
        res.window_cost[l][c] = win[l](c);
        res.observable[l][c] = obs[l](c);
      }
    return res;
  }
};

template <class F>
void parallel_for(int count, int threads, F&& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
          next = count;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

/// Simulates all lanes on shared noise. With `population_size` > 0 each common
/// path carries one population of that size (replicas = population), and lanes
/// with an empirical mean see the average over that population.
inline Ensemble simulate_lanes(const ModelSpec& model, const CostSpec& cost,
                               const std::vector<LaneSpec>& lanes, const InitialLaw& initial,
                               SimConfig cfg, int population_size = 0) {
  model.validate();
  initial.validate(model.n);
  if (lanes.empty() || lanes.size() > 2) throw InputError("simulate: one or two lanes");
  if (population_size > 0) {
    cfg.replicas = population_size;
    cfg.block_size = population_size;
  }
  cfg.validate();
  for (const LaneSpec& l : lanes) {
    if (l.mean_source == MeanSource::empirical && population_size <= 0)
      throw InputError("simulate: an empirical mean needs a population");
    if (l.law.nodes() < 1 || l.law.self_gain(0).rows() != model.m ||
        l.law.self_gain(0).cols() != model.n)
      throw InputError("simulate: feedback law has wrong dimensions");
  }

  const TimeGrid grid(cfg.T, cfg.steps());
  const int L = static_cast<int>(lanes.size());
  Ensemble ens;
  ens.grid = grid;
  ens.lanes = L;
  ens.common_paths = cfg.common_paths;
  ens.replicas = cfg.replicas;
  ens.population = population_size > 0;
  ens.burn_in = cfg.burn_in;
  ens.n = model.n;
  for (double t : cfg.snapshot_times) {
    const double k = t / grid.h();
    if (t < 0.0 || t > cfg.T + 1e-12) throw InputError("simulate: snapshot outside [0, T]");
    ens.snapshot_nodes.push_back(static_cast<int>(std::llround(k)));
  }
  if (cfg.record_paths) {
    const double bytes = 8.0 * cfg.common_paths * cfg.replicas * double(grid.nodes()) * model.n;
    if (bytes > kMaxPathDumpBytes) throw InputError("simulate: path dump exceeds 1 GiB");
  }

  std::vector<GainSchedule> gains;
  for (const LaneSpec& l : lanes) gains.push_back(schedule_on(l.law, grid));

  ens.common_increments.resize(cfg.common_paths);
  ens.mean_path.assign(L, std::vector<std::vector<Vec>>(cfg.common_paths));
  for (int k = 0; k < cfg.common_paths; ++k) {
    ens.common_increments[k] = detail::common_noise(cfg.seed_common, k, grid.steps, grid.h());
    for (int l = 0; l < L; ++l)
      if (lanes[l].mean_source == MeanSource::companion)
        ens.mean_path[l][k] =
            detail::companion_path(model, gains[l], initial.mean, ens.common_increments[k], grid.h());
  }

  detail::Engine eng{model, cost, lanes, gains, initial, cfg, grid, ens,
                     detail::symmetric_sqrt(initial.covariance()),
                     static_cast<int>(std::llround(cfg.burn_in / grid.h()))};
  eng.burn_node = std::min(eng.burn_node, grid.steps);

  std::vector<detail::Task> tasks;
  for (int k = 0; k < cfg.common_paths; ++k)
    for (int j = 0; j < cfg.replicas; j += cfg.block_size)
      tasks.push_back({k, j, std::min(cfg.block_size, cfg.replicas - j)});

  const int nstats = L * kLaneStats + (L == 2 ? kPairStats : 0);
  ens.stats.assign(cfg.common_paths, Mat::Zero(nstats, grid.nodes()));
  const std::size_t S = std::size_t(cfg.common_paths) * cfg.replicas;
  ens.cost.assign(L, std::vector<double>(S));
  ens.window_cost.assign(L, std::vector<double>(S));
  ens.observable.assign(L, std::vector<double>(S));
  ens.snapshots.assign(ens.snapshot_nodes.size(), std::vector<double>(S * model.n));
  if (cfg.record_paths) ens.paths.assign(S * grid.nodes() * model.n, 0.0);

  const int threads = cfg.threads > 0 ? cfg.threads : default_thread_count();
  constexpr int kChunk = 64;
  std::vector<detail::TaskResult> results;
  for (std::size_t start = 0; start < tasks.size(); start += kChunk) {
    const int cnt = static_cast<int>(std::min<std::size_t>(kChunk, tasks.size() - start));
    results.assign(cnt, {});
    detail::parallel_for(cnt, threads,
                         [&](int i) { results[i] = eng.run(tasks[start + i]); });
    for (int i = 0; i < cnt; ++i) {
      const detail::Task& t = tasks[start + i];
      detail::TaskResult& r = results[i];
      ens.stats[t.path] += r.stats;
      const std::size_t base = std::size_t(t.path) * cfg.replicas + t.first;
      for (int l = 0; l < L; ++l)
        for (int c = 0; c < t.count; ++c) {
          ens.cost[l][base + c] = r.cost[l][c];
          ens.window_cost[l][base + c] = r.window_cost[l][c];
          ens.observable[l][base + c] = r.observable[l][c];
        }
      for (std::size_t s = 0; s < r.snapshots.size(); ++s)
        std::copy(r.snapshots[s].begin(), r.snapshots[s].end(),
                  ens.snapshots[s].begin() + base * model.n);
      if (cfg.record_paths)
        std::copy(r.paths.begin(), r.paths.end(),
                  ens.paths.begin() + base * grid.nodes() * model.n);
      r = {};
    }
  }
  return ens;
}

inline Ensemble simulate_mfc_closed_loop(const ModelSpec& model, const CostSpec& cost,
                                         const FeedbackLaw& law, const InitialLaw& initial,
                                         const SimConfig& cfg) {
  LaneSpec lane;
  lane.law = law;
  return simulate_lanes(model, cost, {lane}, initial, cfg);
}

/// N-agent closed loop: cfg.common_paths independent repetitions of N agents
/// sharing one W0 path each. Agent i of repetition k uses the streams of MFC
/// replica (k, i).
inline Ensemble simulate_nagent(const ModelSpec& model, const CostSpec& cost,
                                const FeedbackLaw& law, const InitialLaw& initial, int N,
                                const SimConfig& cfg) {
  if (N < 1) throw InputError("simulate_nagent: N must be >= 1");
  LaneSpec lane;
  lane.law = law;
  lane.mean_source = MeanSource::empirical;
  return simulate_lanes(model, cost, {lane}, initial, cfg, N);
}

enum class Coupling { same_initial, independent_initial };

/// Two MFC loops on the same W and W0 paths.
inline Ensemble simulate_paired(const ModelSpec& model, const CostSpec& cost,
                                const FeedbackLaw& first, const FeedbackLaw& second,
                                const InitialLaw& initial, const SimConfig& cfg,
                                Coupling coupling = Coupling::same_initial) {
  LaneSpec a, b;
  a.law = first;
  b.law = second;
  b.independent_initial = coupling == Coupling::independent_initial;
  return simulate_lanes(model, cost, {a, b}, initial, cfg);
}

/// N-agent loop (lane 0) against MFC samples (lane 1) driven by the same
/// idiosyncratic streams. With `shuffle` the MFC sample of agent i uses the
/// streams of agent i+1 (mod N).
inline Ensemble simulate_nagent_vs_mfc(const ModelSpec& model, const CostSpec& cost,
                                       const FeedbackLaw& soc_law, const FeedbackLaw& mfc_law,
                                       const InitialLaw& initial, int N, const SimConfig& cfg,
                                       bool shuffle = false) {
  LaneSpec a, b;
  a.law = soc_law;
  a.mean_source = MeanSource::empirical;
  b.law = mfc_law;
  b.stream_shift = shuffle ? 1 : 0;
  return simulate_lanes(model, cost, {a, b}, initial, cfg, N);
}

struct CostEstimate {
  double estimate = 0.0;
  double std_error = NAN;
  bool has_stderr = false;
};

namespace detail {

// Mean and standard error of per-sample values, batching by common path when
// there are at least two paths.
inline CostEstimate batched_mean(const std::vector<double>& v, int paths, int replicas) {
  CostEstimate out;
  const std::size_t S = v.size();
  if (S == 0) return out;
  if (paths >= 2) {
    std::vector<double> batch(paths, 0.0);
    for (int k = 0; k < paths; ++k) {
      double s = 0.0;
      for (int j = 0; j < replicas; ++j) s += v[std::size_t(k) * replicas + j];
      batch[k] = s / replicas;
    }
    double mu = 0.0;
    for (double b : batch) mu += b;
    mu /= paths;
    double var = 0.0;
    for (double b : batch) var += (b - mu) * (b - mu);
    var /= (paths - 1);
    out.estimate = mu;
    out.std_error = std::sqrt(var / paths);
    out.has_stderr = true;
    return out;
  }
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= double(S);
  out.estimate = mu;
  if (S >= 2) {
    double var = 0.0;
    for (double x : v) var += (x - mu) * (x - mu);
    var /= double(S - 1);
    out.std_error = std::sqrt(var / double(S));
    out.has_stderr = true;
  }
  return out;
}

}  // namespace detail

/// Expected cost over [0, T] of a lane. For populations the per-repetition
/// average over agents is the social cost.
inline CostEstimate estimate_cost(const Ensemble& ens, int lane = 0) {
  if (lane < 0 || lane >= ens.lanes) throw InputError("estimate_cost: no such lane");
  return detail::batched_mean(ens.cost[lane], ens.common_paths, ens.replicas);
}

/// Difference of the expected costs of two lanes on the same noise.
inline CostEstimate estimate_cost_difference(const Ensemble& ens) {
  if (ens.lanes != 2) throw InputError("estimate_cost_difference: needs two lanes");
  std::vector<double> d(ens.cost[0].size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = ens.cost[1][i] - ens.cost[0][i];
  return detail::batched_mean(d, ens.common_paths, ens.replicas);
}

/// Time average of the running cost over [burn_in, T].
inline CostEstimate ergodic_average(const Ensemble& ens, double burn_in, int lane = 0) {
  if (std::abs(burn_in - ens.burn_in) > 1e-12)
    throw InputError("ergodic_average: ensemble was recorded with a different burn-in");
  const double len = ens.grid.T - ens.burn_in;
  if (!(len > 0.0)) throw InputError("ergodic_average: T must exceed the burn-in");
  std::vector<double> v = ens.window_cost.at(lane);
  for (double& x : v) x /= len;
  return detail::batched_mean(v, ens.common_paths, ens.replicas);
}

/// Time average over [burn_in, T] of the lane's quadratic observable.
inline CostEstimate observable_average(const Ensemble& ens, int lane = 0) {
  const double len = ens.grid.T - ens.burn_in;
  if (!(len > 0.0)) throw InputError("observable_average: T must exceed the burn-in");
  std::vector<double> v = ens.observable.at(lane);
  for (double& x : v) x /= len;
  return detail::batched_mean(v, ens.common_paths, ens.replicas);
}

/// Summary CSV: t, mean|X|^2, mean|u|^2, companion mean of path 0, mean and
/// standard error of the accumulated cost.
inline void write_summary_csv(std::ostream& os, const Ensemble& ens, int lane = 0) {
  const Vec x2 = ens.node_mean(ens.lane_row(lane, kSumX2));
  const Vec u2 = ens.node_mean(ens.lane_row(lane, kSumU2));
  const Vec c = ens.node_mean(ens.lane_row(lane, kSumCost));
  const Vec se = ens.node_stderr(ens.lane_row(lane, kSumCost), ens.lane_row(lane, kSumCost2));
  const bool has_m = !ens.mean_path[lane].empty() && !ens.mean_path[lane][0].empty();
  os << "t,mean_x2,mean_u2";
  if (has_m)
    for (int i = 0; i < ens.n; ++i) os << ",m_" << i;
  os << ",cost_mean,cost_stderr\n";
  for (int k = 0; k < ens.grid.nodes(); ++k) {
    detail::write_double(os, ens.grid.t(k));
    for (double v : {x2(k), u2(k)}) {
      os << ',';
      detail::write_double(os, v);
    }
    if (has_m)
      for (int i = 0; i < ens.n; ++i) {
        os << ',';
        detail::write_double(os, ens.mean_path[lane][0][k](i));
      }
    os << ',';
    detail::write_double(os, c(k));
    os << ',';
    if (std::isfinite(se(k)))
      detail::write_double(os, se(k));
    else
      os << "nan";
    os << '\n';
  }
}

/// Long-run averages of a scalar-noise affine SDE dm = (F m + g) dt + (H m + h) dW,
/// one independent path per batch. Returns per-path time averages of m and m m'
/// over [burn_in, T].
struct AffineRunAverages {
  std::vector<Vec> mean;          // [path]
  std::vector<Mat> second_moment; // [path]
};

inline AffineRunAverages simulate_affine_averages(const Mat& F, const Vec& g, const Mat& H,
                                                  const Vec& h, const Vec& x0, double dt,
                                                  long long steps, long long burn_steps, int paths,
                                                  std::uint64_t seed, int threads = 0) {
  if (burn_steps >= steps) throw InputError("simulate_affine_averages: burn-in too long");
  AffineRunAverages out;
  out.mean.assign(paths, Vec());
  out.second_moment.assign(paths, Mat());
  const double sq = std::sqrt(dt);
  detail::parallel_for(paths, threads > 0 ? threads : default_thread_count(), [&](int p) {
    auto eng = detail::make_stream(seed, 0, static_cast<std::uint64_t>(p),
                                   detail::StreamPurpose::noise);
    std::normal_distribution<double> nd;
    Vec x = x0;
    Vec s1 = Vec::Zero(x0.size());
    Mat s2 = Mat::Zero(x0.size(), x0.size());
    for (long long k = 0; k < steps; ++k) {
      if (k >= burn_steps) {
        s1 += x;
        s2 += x * x.transpose();
      }
      const double dw = sq * nd(eng);
      x += (F * x + g) * dt + (H * x + h) * dw;
    }
    const double cnt = double(steps - burn_steps);
    out.mean[p] = s1 / cnt;
    out.second_moment[p] = s2 / cnt;
    if (!out.mean[p].allFinite()) throw SolverError("simulation blow-up (affine SDE)");
  });
  return out;
}

}  // namespace lqmf
