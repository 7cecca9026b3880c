// Command-line front end.
//
//   lqmf check    --model FILE
//   lqmf solve    {mfc|soc|ergodic} --model FILE [--T] [--N] [--steps] --out DIR
//   lqmf simulate --model FILE --law {mfc|soc|ergodic} [--T --dt --replicas --paths --N --seed] --out DIR
//   lqmf study    {turnpike|nrate|value} --model FILE [...] --out DIR
//   lqmf rerun    --manifest FILE [--out DIR]
//
// Exit codes: 0 success, 1 assumption, solver or acceptance failure, 2 usage
// or parse error. Runs that write files go to DIR/<first 12 hex digits of the
// SHA-256 of the canonical config>, together with manifest.json. The config
// embeds the normalized model, so a manifest alone regenerates every output.

#include "lqmf/analyze.hpp"
#include "lqmf/io.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace lqmf;

#ifndef LQMF_VERSION
#define LQMF_VERSION "0.0.0"
#endif

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string config_hash(const json& config) { return sha256_hex(config.dump()).substr(0, 12); }

// Collects the files of one run directory.
class RunDir {
 public:
  RunDir(const fs::path& root, const json& config)
      : hash_(config_hash(config)), dir_(root / hash_) {
    fs::create_directories(dir_);
  }

  std::ofstream open(const std::string& name) {
    std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
    files_.push_back(name);
    return f;
  }

  void write_json(const std::string& name, const json& j) {
    std::ofstream f = open(name);
    f << j.dump(2) << '\n';
  }

  [[nodiscard]] const std::string& hash() const { return hash_; }
  [[nodiscard]] const fs::path& dir() const { return dir_; }
  [[nodiscard]] const std::vector<std::string>& files() const { return files_; }

 private:
  std::string hash_;
  fs::path dir_;
  std::vector<std::string> files_;
};

SimConfig sim_config(const json& c) {
  SimConfig cfg;
  cfg.T = c.at("T").get<double>();
  cfg.dt = c.at("dt").get<double>();
  cfg.replicas = c.value("replicas", 1);
  cfg.common_paths = c.value("paths", 1);
  const std::uint64_t seed = c.at("seed").get<std::uint64_t>();
  cfg.seed_common = 2 * seed + 1;
  cfg.seed_base = 2 * seed + 2;
  return cfg;
}

json seeds_of(const json& c) {
  if (!c.contains("seed")) return json::object();
  const std::uint64_t seed = c.at("seed").get<std::uint64_t>();
  return {{"seed", seed}, {"seed_common", 2 * seed + 1}, {"seed_base", 2 * seed + 2}};
}

void require_nonnegative_T(const json& c) {
  if (!(c.at("T").get<double>() >= 0.0)) throw UsageError("--T must be >= 0");
}

std::string series_csv_header(std::initializer_list<const char*> cols) {
  std::string s;
  for (const char* c : cols) {
    if (!s.empty()) s += ',';
    s += c;
  }
  return s + '\n';
}

void csv_row(std::ostream& os, std::initializer_list<double> v) {
  bool first = true;
  for (double x : v) {
    if (!first) os << ',';
    first = false;
    if (std::isfinite(x))
      detail::write_double(os, x);
    else
      os << "nan";
  }
  os << '\n';
}

json fit_check(const DecayFit& f, double r2_min) {
  json j = to_json(f);
  j["pass"] = f.exact_zero || (f.fitted_rate > 0.0 && f.r_squared >= r2_min);
  return j;
}

// Each executor writes its outputs into the run directory and returns the
// result document and the exit code.
struct Outcome {
  json result;
  int code = kExitOk;
};

Outcome run_solve(const json& c, const Problem& pr, RunDir& rd) {
  const std::string problem = c.at("problem");
  Outcome out;
  if (problem == "ergodic") {
    const ErgodicSolution s = solve_ergodic(pr.model, pr.cost);
    json j = to_json(s);
    j["relative_value_at_initial_law"] = relative_value(s, pr.initial);
    rd.write_json("ergodic.json", j);
    out.result = j;
    return out;
  }
  require_nonnegative_T(c);
  const double T = c.at("T");
  const int steps = c.at("steps");
  if (problem == "mfc") {
    const RiccatiPath path = solve_mfc_riccati(pr.model, pr.cost, T, steps);
    std::ofstream f = rd.open("path.csv");
    write_csv(f, path);
    const MfcValue v = value_mfc(path, pr.initial, pr.cost, pr.model);
    out.result = {{"T", T},
                  {"steps", steps},
                  {"value", v.value},
                  {"value_integral_form", v.integral_form},
                  {"P0", to_json(path.P.front())},
                  {"Pibar0", to_json(path.Pibar.front())},
                  {"p0", to_json(path.p.front())},
                  {"kappa0", path.kappa.front()},
                  {"psd_floor", path.psd_floor}};
  } else {
    const int N = c.at("N");
    const SocRiccatiPath path = solve_soc_riccati(pr.model, pr.cost, T, N, steps);
    std::ofstream f = rd.open("path.csv");
    write_csv(f, path);
    out.result = {{"T", T},
                  {"N", N},
                  {"steps", steps},
                  {"PN0", to_json(path.PN.front())},
                  {"PiN0", to_json(path.PiN.front())},
                  {"pN0", to_json(path.pN.front())},
                  {"kappaN0", path.kappaN.front()},
                  {"psd_floor", path.psd_floor}};
  }
  rd.write_json("summary.json", out.result);
  return out;
}

Outcome run_simulate(const json& c, const Problem& pr, RunDir& rd) {
  const std::string law = c.at("law");
  SimConfig cfg = sim_config(c);
  const double T = cfg.T;
  Outcome out;
  Ensemble ens;
  json ref;
  if (law == "ergodic") {
    const ErgodicSolution es = solve_ergodic(pr.model, pr.cost);
    ens = simulate_mfc_closed_loop(pr.model, pr.cost, ergodic_feedback(es), pr.initial, cfg);
    ref = {{"c0", es.c0}};
    if (T > 0.0) out.result["time_average"] = to_json(ergodic_average(ens, 0.0));
  } else if (law == "mfc") {
    const RiccatiPath path = solve_mfc_riccati(pr.model, pr.cost, T, c.at("steps").get<int>());
    ens = simulate_mfc_closed_loop(pr.model, pr.cost, feedback_from_path(pr.model, pr.cost, path),
                                   pr.initial, cfg);
    ref = {{"value", value_mfc(path, pr.initial, pr.cost, pr.model).value}};
  } else {
    const int N = c.at("N");
    const SocRiccatiPath path =
        solve_soc_riccati(pr.model, pr.cost, T, N, c.at("steps").get<int>());
    ens = simulate_nagent(pr.model, pr.cost, soc_feedback(path, pr.model, pr.cost), pr.initial, N,
                          cfg);
    ref = {{"value", expected_value_soc(path, pr.initial)}};
  }
  std::ofstream f = rd.open("summary.csv");
  write_summary_csv(f, ens);
  out.result["law"] = law;
  out.result["cost"] = to_json(estimate_cost(ens));
  out.result["reference"] = ref;
  out.result["samples"] = ens.samples();
  rd.write_json("result.json", out.result);
  return out;
}

Outcome run_turnpike(const json& c, const Problem& pr, RunDir& rd) {
  SimConfig cfg = sim_config(c);
  const double T = cfg.T;
  const int steps = c.at("steps");
  const Coupling coupling =
      c.at("coupling") == "independent" ? Coupling::independent_initial : Coupling::same_initial;
  const ErgodicSolution es = solve_ergodic(pr.model, pr.cost);
  const TurnpikeRates rates = riccati_turnpike_rates(pr.model, pr.cost, T, steps, &es);
  const TurnpikeProfile prof =
      turnpike_profile(pr.model, pr.cost, pr.initial, T, cfg, coupling, &es, steps);

  {
    std::ofstream f = rd.open("riccati_distance.csv");
    f << series_csv_header({"t", "P", "Pibar", "p", "Theta", "Thetabar", "theta"});
    for (std::size_t k = 0; k < rates.t.size(); ++k)
      csv_row(f, {rates.t[k], rates.dP[k], rates.dPibar[k], rates.dp[k], rates.dTheta[k],
                  rates.dThetabar[k], rates.dtheta[k]});
  }
  {
    std::ofstream f = rd.open("profile.csv");
    f << series_csv_header({"t", "dx2", "dx2_stderr", "du2", "du2_stderr"});
    for (std::size_t k = 0; k < prof.t.size(); ++k)
      csv_row(f, {prof.t[k], prof.dx2[k], prof.dx2_se[k], prof.du2[k], prof.du2_se[k]});
  }
  json checks;
  checks["riccati_P"] = fit_check(rates.P, 0.98);
  checks["riccati_Pibar"] = fit_check(rates.Pibar, 0.98);
  checks["riccati_p"] = fit_check(rates.p, 0.98);
  checks["gain_Theta"] = fit_check(rates.Theta, 0.98);
  checks["gain_Thetabar"] = fit_check(rates.Thetabar, 0.98);
  checks["gain_theta"] = fit_check(rates.theta, 0.98);
  checks["right_layer"] = fit_check(prof.right_layer, 0.95);
  checks["plateau"] = {{"midpoint", prof.midpoint},
                       {"right_boundary", prof.right_boundary},
                       {"left_boundary", prof.left_amplitude},
                       {"pass", prof.plateau_ok}};
  if (coupling == Coupling::same_initial) {
    checks["left_layer_zero"] = {{"amplitude", prof.left_amplitude},
                                 {"noise_floor", prof.left_noise_floor},
                                 {"pass", prof.left_statistically_zero}};
  } else {
    checks["left_layer"] = fit_check(prof.left_layer, 0.95);
  }
  Outcome out;
  bool ok = true;
  for (auto& [k, v] : checks.items()) ok = ok && v.at("pass").get<bool>();
  out.result = {{"study", "turnpike"},
                {"T", T},
                {"coupling", c.at("coupling")},
                {"checks", checks},
                {"pass", ok}};
  out.code = ok ? kExitOk : kExitFailure;
  rd.write_json("report.json", out.result);
  return out;
}

Outcome run_nrate(const json& c, const Problem& pr, RunDir& rd) {
  SimConfig cfg = sim_config(c);
  const std::vector<int> Ns = c.at("N_list");
  const bool simulate = c.at("simulate");
  const NRateReport rep = n_convergence_study(pr.model, pr.cost, pr.initial, cfg.T, Ns, cfg,
                                              simulate, c.at("steps").get<int>());
  {
    std::ofstream f = rd.open("nrate.csv");
    f << (simulate ? series_csv_header({"N", "riccati_gap", "trajectory_gap", "shuffled_gap"})
                   : series_csv_header({"N", "riccati_gap"}));
    for (std::size_t i = 0; i < rep.N.size(); ++i) {
      if (simulate)
        csv_row(f, {double(rep.N[i]), rep.riccati_gap[i], rep.trajectory_gap[i],
                    rep.shuffled_gap[i]});
      else
        csv_row(f, {double(rep.N[i]), rep.riccati_gap[i]});
    }
  }
  json checks;
  json a = to_json(rep.riccati_fit);
  a["interval"] = {kRiccatiSlopeLo, kRiccatiSlopeHi};
  if (rep.exact_coincidence) a["exact_coincidence"] = true;
  a["pass"] = rep.riccati_ok;
  checks["riccati_slope"] = a;
  if (simulate) {
    json b = to_json(rep.trajectory_fit);
    b["interval"] = {kTrajectorySlopeLo, kTrajectorySlopeHi};
    b["pass"] = rep.trajectory_ok;
    checks["trajectory_slope"] = b;
    json s = to_json(rep.shuffled_fit);
    s["required_above"] = kShuffleSlopeFloor;
    s["pass"] = rep.shuffle_destroys;
    checks["shuffled_control"] = s;
  }
  bool ok = true;
  for (auto& [k, v] : checks.items()) ok = ok && v.at("pass").get<bool>();
  Outcome out;
  out.result = {{"study", "nrate"}, {"T", cfg.T}, {"N_list", Ns}, {"checks", checks}, {"pass", ok}};
  if (rep.exact_coincidence) out.result["exact_coincidence"] = true;
  out.code = ok ? kExitOk : kExitFailure;
  rd.write_json("report.json", out.result);
  return out;
}

Outcome run_value(const json& c, const Problem& pr, RunDir& rd) {
  SimConfig cfg = sim_config(c);
  const std::vector<double> Ts = c.at("T_list");
  const std::vector<int> Ns = c.at("N_list");
  const bool simulate = c.at("simulate");
  const ValueConvergenceReport rep =
      value_convergence(pr.model, pr.cost, pr.initial, Ts, Ns, cfg, simulate);
  {
    std::ofstream f = rd.open("value.csv");
    f << (simulate ? series_csv_header({"T", "U", "scaled_gap", "excess_cost", "excess_stderr"})
                   : series_csv_header({"T", "U", "scaled_gap"}));
    for (std::size_t i = 0; i < rep.T.size(); ++i) {
      if (simulate)
        csv_row(f, {rep.T[i], rep.U[i], rep.scaled_gap[i], rep.excess_cost[i],
                    rep.excess_cost_se[i]});
      else
        csv_row(f, {rep.T[i], rep.U[i], rep.scaled_gap[i]});
    }
  }
  if (simulate) {
    std::ofstream f = rd.open("social_gap.csv");
    f << series_csv_header(
        {"N", "social_gap", "social_gap_stderr", "ergodic_gap", "ergodic_gap_stderr"});
    for (std::size_t i = 0; i < rep.N.size(); ++i)
      csv_row(f, {double(rep.N[i]), rep.social_gap[i], rep.social_gap_se[i],
                  rep.ergodic_social_gap[i], rep.ergodic_social_gap_se[i]});
  }
  json checks;
  checks["scaled_gap_bounded"] = {{"values", rep.scaled_gap}, {"pass", rep.scaled_gap_bounded}};
  if (simulate) {
    checks["excess_cost_nonnegative"] = {{"pass", rep.excess_nonnegative}};
    checks["excess_cost_bounded"] = {{"pass", rep.excess_bounded}};
    checks["social_gap_decreasing"] = {{"pass", rep.social_gap_decreasing}};
  }
  bool ok = true;
  for (auto& [k, v] : checks.items()) ok = ok && v.at("pass").get<bool>();
  Outcome out;
  out.result = {{"study", "value"}, {"c0", rep.c0}, {"T_list", Ts}, {"checks", checks},
                {"pass", ok}};
  out.code = ok ? kExitOk : kExitFailure;
  rd.write_json("report.json", out.result);
  return out;
}

// Executes a run described entirely by `config` under `root`.
int execute(const json& config, const fs::path& root, bool json_out) {
  const auto start = std::chrono::steady_clock::now();
  const Problem pr = parse_problem(config.at("model"));
  RunDir rd(root, config);
  const std::string cmd = config.at("command");
  Outcome out;
  if (cmd == "solve") {
    out = run_solve(config, pr, rd);
  } else if (cmd == "simulate") {
    out = run_simulate(config, pr, rd);
  } else if (cmd == "study") {
    const std::string s = config.at("study");
    if (s == "turnpike")
      out = run_turnpike(config, pr, rd);
    else if (s == "nrate")
      out = run_nrate(config, pr, rd);
    else
      out = run_value(config, pr, rd);
  } else {
    throw UsageError("unknown command in config: " + cmd);
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json manifest = {{"config_hash", rd.hash()},
                   {"command", cmd},
                   {"tool_version", LQMF_VERSION},
                   {"seeds", seeds_of(config)},
                   {"wall_time_s", wall},
                   {"outputs", rd.files()},
                   {"config", config}};
  {
    std::ofstream f(rd.dir() / "manifest.json", std::ios::binary | std::ios::trunc);
    f << manifest.dump(2) << '\n';
  }
  if (json_out) {
    std::cout << json({{"run_dir", rd.dir().string()}, {"result", out.result}}).dump(2) << '\n';
  } else {
    std::cout << rd.dir().string() << '\n';
    if (out.result.contains("pass")) std::cout << (out.code == kExitOk ? "PASS" : "FAIL") << '\n';
  }
  return out.code;
}

int run_check(const Problem& pr, bool json_out) {
  AssumptionReport rep = validate_h1(pr.cost);
  std::string note;
  if (rep.h1_ok) {
    try {
      const ErgodicSolution es = solve_ergodic(pr.model, pr.cost);
      const AssumptionReport h2 = validate_h2(pr.model, es.Theta, es.Thetabar);
      rep.h2_checked = true;
      rep.h2_ok = h2.h2_ok;
      rep.margin_mean_loop = h2.margin_mean_loop;
      rep.margin_state_loop = h2.margin_state_loop;
    } catch (const SolverError& e) {
      rep.h2_checked = true;
      rep.h2_ok = false;
      rep.margin_mean_loop = rep.margin_state_loop = NAN;
      note = e.what();
    }
  }
  const bool ok = rep.h1_ok && rep.h2_ok;
  if (json_out) {
    json j = to_json(rep);
    if (!note.empty()) j["note"] = note;
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "H1 " << (rep.h1_ok ? "holds" : "fails") << " (min eig R = " << rep.min_eig_R
              << ", Q - S'R^-1 S = " << rep.min_eig_Q_tilde
              << ", Q + Qbar - S'R^-1 S = " << rep.min_eig_Qhat_tilde << ")\n";
    if (rep.h2_checked)
      std::cout << "H2 " << (rep.h2_ok ? "holds" : "fails") << " (margins: state loop "
                << rep.margin_state_loop << ", mean loop " << rep.margin_mean_loop << ")\n";
    else
      std::cout << "H2 not checked\n";
    if (!note.empty()) std::cout << note << '\n';
  }
  return ok ? kExitOk : kExitFailure;
}

std::vector<double> parse_list(const std::string& s, const char* flag) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
      x = std::stod(item, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != item.size()) throw UsageError(std::string(flag) + ": bad list entry '" + item + "'");
    v.push_back(x);
  }
  if (v.empty()) throw UsageError(std::string(flag) + ": empty list");
  return v;
}

json load_manifest_config(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot open manifest: " + file);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("malformed manifest: ") + e.what());
  }
  if (!m.contains("config")) throw InputError("/config: missing in manifest");
  return m.at("config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear-quadratic mean-field control with common noise: Riccati solvers, "
               "closed-loop simulation and turnpike / large-population studies"};
  app.set_version_flag("--version", std::string(LQMF_VERSION));
  app.require_subcommand(1);
  bool json_out = false;
  app.add_flag("--json", json_out, "Print results as JSON");

  std::string model_file, out_dir = "runs", problem, law = "ergodic", study, manifest_file;
  std::string coupling = "same", N_list = "8,16,32,64", T_list = "5,10,20";
  double T = NAN, dt = NAN;
  int N = 0, steps = 0, replicas = 0, paths = 0;
  std::uint64_t seed = 1;
  bool no_sim = false;

  auto add_model = [&](CLI::App* s) {
    s->add_option("--model", model_file, "Model JSON file")->required()->check(CLI::ExistingFile);
    s->add_flag("--json", json_out, "Print results as JSON");
  };
  auto add_common = [&](CLI::App* s) {
    s->add_option("--out", out_dir, "Output root directory")->capture_default_str();
    s->add_option("--T", T, "Horizon");
    s->add_option("--steps", steps, "Riccati steps (default max(1000, 200T))");
  };
  auto add_sim = [&](CLI::App* s) {
    s->add_option("--dt", dt, "Simulation step");
    s->add_option("--replicas", replicas, "Replicas per common-noise path");
    s->add_option("--paths", paths, "Common-noise paths (repetitions)");
    s->add_option("--seed", seed, "Seed")->capture_default_str();
  };

  CLI::App* check = app.add_subcommand("check", "Check the standing assumptions H1 and H2");
  add_model(check);

  CLI::App* solve = app.add_subcommand("solve", "Solve a Riccati system");
  solve->add_option("problem", problem, "mfc | soc | ergodic")
      ->required()
      ->check(CLI::IsMember({"mfc", "soc", "ergodic"}));
  add_model(solve);
  add_common(solve);
  solve->add_option("--N", N, "Population size (soc)");

  CLI::App* sim = app.add_subcommand("simulate", "Simulate a closed loop");
  add_model(sim);
  add_common(sim);
  add_sim(sim);
  sim->add_option("--law", law, "mfc | soc | ergodic")
      ->check(CLI::IsMember({"mfc", "soc", "ergodic"}))
      ->capture_default_str();
  sim->add_option("--N", N, "Population size (soc)");

  CLI::App* st = app.add_subcommand("study", "Run an empirical rate study");
  st->add_option("study", study, "turnpike | nrate | value")
      ->required()
      ->check(CLI::IsMember({"turnpike", "nrate", "value"}));
  add_model(st);
  add_common(st);
  add_sim(st);
  st->add_option("--coupling", coupling, "same | independent (turnpike)")
      ->check(CLI::IsMember({"same", "independent"}))
      ->capture_default_str();
  st->add_option("--N-list", N_list, "Population sizes (nrate, value)")->capture_default_str();
  st->add_option("--T-list", T_list, "Horizons (value)")->capture_default_str();
  st->add_flag("--no-sim", no_sim, "Skip the Monte Carlo parts");

  CLI::App* rerun = app.add_subcommand("rerun", "Regenerate a run from its manifest");
  rerun->add_option("--manifest", manifest_file, "manifest.json")->required();
  rerun->add_option("--out", out_dir, "Output root directory")->capture_default_str();
  rerun->add_flag("--json", json_out, "Print results as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*rerun) return execute(load_manifest_config(manifest_file), out_dir, json_out);

    const Problem pr = load_problem(model_file);
    if (*check) return run_check(pr, json_out);

    json config = {{"model", problem_to_json(pr)}};
    auto horizon = [&](double fallback) {
      const double v = std::isnan(T) ? fallback : T;
      if (std::isnan(v)) throw UsageError("--T is required");
      if (!(v >= 0.0)) throw UsageError("--T must be >= 0");
      return v;
    };
    auto riccati_steps = [&](double h) {
      if (steps < 0) throw UsageError("--steps must be positive");
      return steps > 0 ? steps : default_riccati_steps(h);
    };
    auto sim_params = [&](double h, double dt_default, int rep_default, int path_default) {
      config["T"] = h;
      config["dt"] = std::isnan(dt) ? dt_default : dt;
      config["replicas"] = replicas > 0 ? replicas : rep_default;
      config["paths"] = paths > 0 ? paths : path_default;
      config["seed"] = seed;
    };
    if (*solve) {
      config["command"] = "solve";
      config["problem"] = problem;
      if (problem != "ergodic") {
        const double h = horizon(NAN);
        config["T"] = h;
        config["steps"] = riccati_steps(h);
      }
      if (problem == "soc") {
        if (N < 1) throw UsageError("solve soc requires --N >= 1");
        config["N"] = N;
      }
    } else if (*sim) {
      config["command"] = "simulate";
      config["law"] = law;
      const double h = horizon(NAN);
      sim_params(h, 1e-2, 1024, 1);
      if (law != "ergodic") config["steps"] = riccati_steps(h);
      if (law == "soc") {
        if (N < 1) throw UsageError("simulate --law soc requires --N >= 1");
        config["N"] = N;
        config["replicas"] = N;
      }
    } else {
      config["command"] = "study";
      config["study"] = study;
      if (study == "turnpike") {
        const double h = horizon(10.0);
        sim_params(h, 1e-2, 4096, 64);
        config["steps"] = riccati_steps(h);
        config["coupling"] = coupling;
      } else if (study == "nrate") {
        const double h = horizon(2.0);
        sim_params(h, 1e-2, 1, 4096);
        config["steps"] = riccati_steps(h);
        std::vector<int> ns;
        for (double x : parse_list(N_list, "--N-list")) {
          if (x < 1 || x != std::floor(x)) throw UsageError("--N-list: entries must be positive integers");
          ns.push_back(static_cast<int>(x));
        }
        config["N_list"] = ns;
        config["simulate"] = !no_sim;
      } else {
        const std::vector<double> ts = parse_list(T_list, "--T-list");
        sim_params(ts.back(), 1e-2, 256, 16);
        config["T_list"] = ts;
        std::vector<int> ns;
        for (double x : parse_list(N_list, "--N-list")) ns.push_back(static_cast<int>(x));
        config["N_list"] = ns;
        config["simulate"] = !no_sim;
      }
    }
    return execute(config, out_dir, json_out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
