#include "dtdlab/harness.hpp"

#include "dtdlab/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace dtdlab {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// ------------------------------------------------------------ config

class ConfigError : public Error {
public:
  ConfigError(const std::string& key, const std::string& what) : Error("config: " + key + ": " + what) {}
};

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
    throw ConfigError(key, "expected a nonnegative integer");
  return v.get<std::size_t>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

// Number, or the string "auto" (returned as empty).
std::optional<double> get_auto_number(const json& v, const std::string& key) {
  if (v.is_string()) {
    if (v.get<std::string>() == "auto") return std::nullopt;
    throw ConfigError(key, "expected a number or \"auto\"");
  }
  return get_number(v, key);
}

std::string resolve(const std::string& path, const std::string& base) {
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base) / p).lexically_normal().string();
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where, "expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where.empty() ? it.key() : where + "." + it.key(), "unknown key");
  }
}

MdpSource parse_mdp(const json& j, const std::string& base) {
  MdpSource m;
  check_keys(j, "mdp", {"file", "random"});
  if (auto f = find(j, "file")) m.file = resolve(get_string(*f, "mdp.file"), base);
  if (auto r = find(j, "random")) {
    if (m.file) throw ConfigError("mdp", "give either file or random, not both");
    check_keys(*r, "mdp.random", {"states", "agents", "branching", "reward_bound", "gamma", "seed"});
    if (auto v = find(*r, "states")) m.random.num_states = get_count(*v, "mdp.random.states");
    if (auto v = find(*r, "agents")) m.random.num_agents = get_count(*v, "mdp.random.agents");
    m.random.branching = m.random.num_states;
    if (auto v = find(*r, "branching")) m.random.branching = get_count(*v, "mdp.random.branching");
    if (auto v = find(*r, "reward_bound")) m.random.reward_bound = get_number(*v, "mdp.random.reward_bound");
    if (auto v = find(*r, "gamma")) m.random.gamma = get_number(*v, "mdp.random.gamma");
    if (auto v = find(*r, "seed")) m.random.seed = get_count(*v, "mdp.random.seed");
  } else if (!m.file) {
    throw ConfigError("mdp", "needs file or random");
  }
  return m;
}

FeatureSpec parse_features(const json& j, const std::string& base) {
  FeatureSpec f;
  check_keys(j, "features", {"kind", "count", "seed", "file"});
  const std::string kind = find(j, "kind") ? get_string(j["kind"], "features.kind") : "aggregation";
  if (kind == "aggregation") f.kind = FeatureSpec::Kind::aggregation;
  else if (kind == "gaussian") f.kind = FeatureSpec::Kind::gaussian;
  else if (kind == "identity") f.kind = FeatureSpec::Kind::identity;
  else if (kind == "file") f.kind = FeatureSpec::Kind::file;
  else throw ConfigError("features.kind", "unknown kind '" + kind + "'");
  if (auto v = find(j, "count")) f.count = get_count(*v, "features.count");
  if (auto v = find(j, "seed")) f.seed = get_count(*v, "features.seed");
  if (auto v = find(j, "file")) f.file = resolve(get_string(*v, "features.file"), base);
  if (f.kind == FeatureSpec::Kind::file && f.file.empty()) throw ConfigError("features.file", "required for kind file");
  return f;
}

GraphSpec parse_graph(const json& j, const std::string& base) {
  GraphSpec g;
  check_keys(j, "graph", {"kind", "agents", "p", "seed", "file", "weights"});
  if (auto v = find(j, "file")) g.file = resolve(get_string(*v, "graph.file"), base);
  if (auto v = find(j, "kind")) {
    try {
      g.kind = parse_graph_kind(get_string(*v, "graph.kind"));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("graph.kind", e.what());
    }
  }
  if (auto v = find(j, "agents")) g.agents = get_count(*v, "graph.agents");
  if (auto v = find(j, "p")) g.p = get_number(*v, "graph.p");
  if (auto v = find(j, "seed")) g.seed = get_count(*v, "graph.seed");
  if (auto v = find(j, "weights")) g.weights_file = resolve(get_string(*v, "graph.weights"), base);
  return g;
}

ScheduleSpec parse_schedule(const json& j) {
  ScheduleSpec s;
  if (j.is_string()) {
    if (j.get<std::string>() != "auto") throw ConfigError("schedule", "expected an object or \"auto\"");
    return s;
  }
  check_keys(j, "schedule", {"kind", "alpha", "alpha0"});
  const std::string kind = find(j, "kind") ? get_string(j["kind"], "schedule.kind") : "constant";
  if (kind == "constant") s.kind = ScheduleSpec::Kind::constant;
  else if (kind == "diminishing") s.kind = ScheduleSpec::Kind::diminishing;
  else throw ConfigError("schedule.kind", "unknown kind '" + kind + "'");
  if (auto v = find(j, "alpha")) s.alpha = get_auto_number(*v, "schedule.alpha");
  if (auto v = find(j, "alpha0")) {
    if (s.kind != ScheduleSpec::Kind::diminishing) throw ConfigError("schedule.alpha0", "only for diminishing steps");
    s.alpha0 = get_auto_number(*v, "schedule.alpha0");
  }
  if (s.alpha && !(*s.alpha > 0.0)) throw ConfigError("schedule.alpha", "must be positive");
  if (s.alpha0 && !(*s.alpha0 > 0.0)) throw ConfigError("schedule.alpha0", "must be positive");
  return s;
}

// ------------------------------------------------------------ helpers

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNan : s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

std::vector<Vector> initial_iterates(const RunConfig& cfg, std::size_t N, std::size_t L, std::uint64_t seed) {
  if (cfg.theta0_scale == 0.0) return {};
  Rng rng(mix64(seed ^ 0x7468657461302020ULL));
  std::vector<Vector> out;
  for (std::size_t v = 0; v < N; ++v) {
    Vector t(static_cast<Eigen::Index>(L));
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = cfg.theta0_scale * rng.normal();
    out.push_back(std::move(t));
  }
  return out;
}

struct SeedOutcome {
  Trajectory traj;
  std::vector<DriftRow> drift;
};

std::size_t index_of(const Trajectory& t, std::size_t k) {
  for (std::size_t i = 0; i < t.snapshots.size(); ++i)
    if (t.snapshots[i].k == k) return i;
  throw Error("no snapshot at k = " + std::to_string(k));
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  return out;
}

std::string lambda_dir(const RunConfig& cfg, std::size_t i) {
  return (fs::path(cfg.out_dir) / ("lambda_" + std::to_string(i))).string();
}

// Per-lambda setup: oracle, constants, schedule.  Theorem-level failures are
// recorded and leave `ready` false when the run cannot proceed.
struct Setup {
  LambdaResult result;
  bool ready = false;
  bool drift_applicable = false;
};

Setup prepare(const RunConfig& cfg, const Instance& inst, double lambda) {
  Setup s;
  LambdaResult& r = s.result;
  r.lambda = lambda;
  r.sigma2 = inst.W.sigma2;
  try {
    r.oracle = build_oracle(inst.mdp, inst.fm, lambda);
  } catch (const InvariantError& e) {
    r.failures.push_back(std::string("negative definiteness: ") + e.what());
    return s;
  }
  try {
    r.quality = approximation_quality(r.oracle, r.oracle.J, inst.fm, r.oracle.dist);
  } catch (const InvariantError& e) {
    r.failures.push_back(std::string("approximation sandwich: ") + e.what());
  }
  try {
    r.norms = norm_bound_check(r.oracle, inst.mdp.gamma, lambda, inst.mdp.reward_bound);
  } catch (const InvariantError& e) {
    r.failures.push_back(std::string("norm bounds: ") + e.what());
  }

  const MarkovChain& chain = inst.mdp.chain;
  const Vector pi = r.oracle.dist.pi;
  r.model.C = fit_mixing_constant(chain, pi);
  const TauFunction tv_tau = [&chain, pi](double a) { return tv_mixing_steps(chain, pi, a); };

  BoundInputs& in = r.inputs;
  in.gamma = inst.mdp.gamma;
  in.lambda = lambda;
  in.R = inst.mdp.reward_bound;
  in.sigma2 = inst.W.sigma2;
  in.sigma_min = r.oracle.sigma_min;
  in.theta_star_norm = r.oracle.theta_star.norm();
  in.C = r.model.C;
  in.num_agents = inst.mdp.num_agents();
  in.psi2_form = cfg.psi2_form;

  if (cfg.schedule.alpha) {
    in.alpha = *cfg.schedule.alpha;
    in.tau = tv_tau(in.alpha);
    r.verdict = constant_stepsize_conditions(in);
    if (!r.verdict.ok()) r.notes.push_back("step-size conditions fail, theorem bounds not evaluated: " + r.verdict.describe());
  } else {
    r.verdict = auto_constant_step(in, tv_tau);
    in.alpha = r.verdict.alpha;
    in.tau = r.verdict.tau;
  }

  if (cfg.schedule.kind == ScheduleSpec::Kind::constant) {
    r.schedule = StepSchedule::constant(in.alpha);
    s.drift_applicable = drift_precondition(in.tau, in.gamma, lambda, in.alpha);
    if (!s.drift_applicable) r.notes.push_back("drift monitor skipped: alpha tau exceeds its precondition");
  } else {
    in.alpha0 = cfg.schedule.alpha0 ? *cfg.schedule.alpha0 : 1.0 / in.sigma_min;
    r.schedule = StepSchedule::diminishing(in.alpha0);
    if (r.verdict.pass[0]) {
      try {
        const MixingModel model = r.model;
        r.kstar = find_kstar(in, [model](double a) { return model.tau(a); });
        in.kstar = r.kstar->kstar;
      } catch (const Error& e) {
        r.notes.push_back(std::string("K* not found: ") + e.what());
      }
    } else {
      r.notes.push_back("reference alpha breaks the consensus condition, K* undefined");
    }
    if (r.kstar && r.kstar->kstar > cfg.num_steps)
      r.notes.push_back("K* = " + std::to_string(r.kstar->kstar) + " exceeds the run length; the diminishing-step bound is vacuous");
  }
  s.ready = true;
  return s;
}

SeedOutcome run_seed(const RunConfig& cfg, const Instance& inst, const Setup& s, std::size_t li, std::size_t si) {
  const LambdaResult& r = s.result;
  RunOptions opt;
  opt.num_steps = cfg.num_steps;
  opt.record_every = cfg.record_every;
  opt.seed = derive_seed(cfg.base_seed, li, si);
  opt.start_state = cfg.start_state;
  opt.theta0 = initial_iterates(cfg, inst.mdp.num_agents(), inst.fm.num_features(), opt.seed);
  opt.extra_records = cfg.extra_records;
  if (r.kstar && r.kstar->kstar <= cfg.num_steps) opt.extra_records.push_back(r.kstar->kstar);
  opt.keep_mean_history = s.drift_applicable;

  SeedOutcome out;
  out.traj = run(inst.mdp, inst.fm, inst.W, r.schedule, r.lambda, r.oracle.theta_star, opt);
  if (s.drift_applicable) {
    std::vector<std::size_t> ks;
    for (const auto& snap : out.traj.snapshots) ks.push_back(snap.k);
    out.drift = drift_monitor(out.traj.mean_history, ks, r.inputs.tau, r.inputs.gamma, r.lambda, r.inputs.R,
                              r.inputs.alpha);
    out.traj.mean_history.resize(0, 0);
  }
  if (!cfg.out_dir.empty() && cfg.write_seed_csv) {
    auto f = open_out((fs::path(lambda_dir(cfg, li)) / ("seed_" + std::to_string(si) + ".csv")).string());
    write_trajectory_csv(f, out.traj);
  }
  return out;
}

void aggregate(const RunConfig& cfg, const Setup& s, std::vector<SeedOutcome>& seeds, LambdaResult& r) {
  const auto& first = seeds.front().traj.snapshots;
  const std::size_t n = seeds.size();
  const bool constant = r.schedule.kind() == StepSchedule::Kind::constant;
  const Vector& ts = r.oracle.theta_star;

  // Initial-condition magnitudes for the theorem bounds.
  BoundInputs in = r.inputs;
  std::optional<std::size_t> anchor;  // snapshot index of k = 0 or k = K*
  if (constant) anchor = 0;
  else if (r.kstar && r.kstar->kstar <= cfg.num_steps) anchor = index_of(seeds.front().traj, r.kstar->kstar);
  std::vector<double> anchor_norm(n, 0.0);
  if (anchor) {
    std::vector<double> sq, err;
    for (std::size_t j = 0; j < n; ++j) {
      const Snapshot& a = seeds[j].traj.snapshots[*anchor];
      anchor_norm[j] = a.consensus_error;
      sq.push_back(a.theta.squaredNorm());
      err.push_back((a.mean - ts).squaredNorm());
    }
    in.init_Theta_sq = mean_of(sq);
    in.init_mean_err_sq = mean_of(err);
  }
  r.inputs = in;

  const bool thm_ok = r.verdict.ok() && anchor.has_value() &&
                      (constant || in.alpha0 * in.sigma_min >= 1.0 - 1e-12);
  const bool consensus_applies = r.verdict.pass[0] && anchor.has_value();

  std::vector<double> plateau_per_seed(n, 0.0);
  std::size_t plateau_count = 0;
  const double plateau_from = 0.9 * static_cast<double>(cfg.num_steps);

  for (std::size_t idx = 0; idx < first.size(); ++idx) {
    const std::size_t k = first[idx].k;
    MeanPoint p;
    p.k = k;
    p.stepsize = first[idx].stepsize;
    p.mean_theta = Vector::Zero(ts.size());
    std::vector<double> mse, cons;
    for (std::size_t j = 0; j < n; ++j) {
      const Snapshot& snap = seeds[j].traj.snapshots[idx];
      if (snap.k != k) throw Error("seed trajectories recorded on different grids");
      mse.push_back(snap.mse);
      cons.push_back(snap.consensus_error);
      p.mean_theta += snap.mean / static_cast<double>(n);
    }
    p.mse = mean_of(mse);
    p.mse_se = stderr_of(mse);
    p.consensus_error = mean_of(cons);
    r.curve.push_back(p);
    if (k > 0 && static_cast<double>(k) >= plateau_from) {
      for (std::size_t j = 0; j < n; ++j) plateau_per_seed[j] += mse[j];
      ++plateau_count;
    }

    BoundRow row;
    row.k = k;
    row.mse = p.mse;
    row.mse_se = p.mse_se;
    row.consensus_error = p.consensus_error;
    row.theorem_rhs = kNan;
    row.consensus_rhs = kNan;
    row.consensus_worst_ratio = kNan;
    row.drift_lhs = kNan;
    row.drift_rhs = kNan;
    if (thm_ok) {
      if (constant && k >= in.tau) row.theorem_rhs = theorem1_rhs(in, k);
      if (!constant && k >= in.kstar) row.theorem_rhs = theorem2_rhs(in, k);
      if (!std::isnan(row.theorem_rhs)) row.mse_ok = dominated(row.mse, row.theorem_rhs);
    }
    if (consensus_applies && (constant || k >= in.kstar)) {
      std::vector<double> bounds;
      row.consensus_worst_ratio = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        BoundInputs seed_in = in;
        seed_in.init_Theta_norm = anchor_norm[j];
        const double b = constant ? consensus_bound_constant(seed_in, k) : consensus_bound_diminishing(seed_in, k);
        const double e = cons[j];
        bounds.push_back(b);
        if (!(e <= b * (1.0 + 1e-9) + 1e-12)) {
          row.consensus_ok = false;
          r.failures.push_back("pathwise consensus bound violated at k = " + std::to_string(k) + ", seed " +
                               std::to_string(j) + ": " + format_double(e) + " > " + format_double(b));
        }
        row.consensus_worst_ratio = std::max(row.consensus_worst_ratio, b > 0.0 ? e / b : (e > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
      }
      row.consensus_rhs = mean_of(bounds);
    }
    if (s.drift_applicable) {
      for (std::size_t j = 0; j < n; ++j) {
        for (const auto& d : seeds[j].drift) {
          if (d.k != k) continue;
          if (std::isnan(row.drift_lhs) || d.lhs > row.drift_lhs) {
            row.drift_lhs = d.lhs;
            row.drift_rhs = d.rhs1;
          }
          if (!d.ok) {
            row.drift_ok = false;
            r.failures.push_back("drift inequality violated at k = " + std::to_string(k) + ", seed " + std::to_string(j));
          }
        }
      }
    }
    r.report.dominated = r.report.dominated && row.mse_ok;
    r.report.consensus_ok = r.report.consensus_ok && row.consensus_ok;
    r.report.drift_ok = r.report.drift_ok && row.drift_ok;
    r.report.rows.push_back(row);
  }
  r.report.drift_checked = s.drift_applicable;
  if (!r.report.dominated) r.notes.push_back("seed-averaged MSE exceeds the theorem bound at some recorded k");

  if (plateau_count > 0) {
    for (double& x : plateau_per_seed) x /= static_cast<double>(plateau_count);
    r.plateau = mean_of(plateau_per_seed);
    r.plateau_se = stderr_of(plateau_per_seed);
  } else {
    r.plateau = r.curve.back().mse;
  }
  for (auto& sd : seeds) r.runs.push_back(std::move(sd.traj));
}

void write_lambda_files(const RunConfig& cfg, std::size_t li, const LambdaResult& r) {
  const fs::path dir = lambda_dir(cfg, li);
  {
    auto f = open_out((dir / "oracle.txt").string());
    write_oracle(f, r.oracle);
  }
  if (r.curve.empty()) return;
  {
    auto f = open_out((dir / "mean.csv").string());
    f << "k,mse,mse_se,consensus_error,stepsize";
    for (Eigen::Index i = 0; i < r.oracle.theta_star.size(); ++i) f << ",theta_bar_" << i;
    f << '\n';
    for (const auto& p : r.curve) {
      f << p.k << ',' << format_double(p.mse) << ',' << format_double(p.mse_se) << ','
        << format_double(p.consensus_error) << ',' << format_double(p.stepsize);
      for (Eigen::Index i = 0; i < p.mean_theta.size(); ++i) f << ',' << format_double(p.mean_theta[i]);
      f << '\n';
    }
  }
  auto f = open_out((dir / "bounds.csv").string());
  write_bound_report_csv(f, r.report);
}

std::vector<std::size_t> log_grid(std::size_t max_k, std::size_t per_decade) {
  std::set<std::size_t> ks;
  for (std::size_t j = 0;; ++j) {
    const double v = std::pow(10.0, static_cast<double>(j) / static_cast<double>(per_decade));
    if (v > static_cast<double>(max_k)) break;
    ks.insert(static_cast<std::size_t>(std::llround(v)));
  }
  ks.insert(max_k);
  return {ks.begin(), ks.end()};
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config: ") + e.what());
  }
  check_keys(j, "", {"mdp", "features", "graph", "schedule", "lambdas", "steps", "record_every", "extra_records",
                     "seeds", "base_seed", "theta0_scale", "start", "psi2_form", "threads", "out", "write_seed_csv"});
  RunConfig cfg;
  if (auto v = find(j, "mdp")) cfg.mdp = parse_mdp(*v, base_dir);
  else throw ConfigError("mdp", "missing");
  if (auto v = find(j, "features")) cfg.features = parse_features(*v, base_dir);
  if (auto v = find(j, "graph")) cfg.graph = parse_graph(*v, base_dir);
  if (auto v = find(j, "schedule")) cfg.schedule = parse_schedule(*v);
  if (auto v = find(j, "lambdas")) {
    if (!v->is_array() || v->empty()) throw ConfigError("lambdas", "expected a nonempty array");
    cfg.lambdas.clear();
    for (const auto& x : *v) {
      const double l = get_number(x, "lambdas");
      if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("lambdas", "values must lie in [0, 1]");
      cfg.lambdas.push_back(l);
    }
  }
  if (auto v = find(j, "steps")) cfg.num_steps = get_count(*v, "steps");
  if (cfg.num_steps < 1) throw ConfigError("steps", "must be at least 1");
  if (auto v = find(j, "record_every")) cfg.record_every = get_count(*v, "record_every");
  if (cfg.record_every < 1) throw ConfigError("record_every", "must be at least 1");
  if (auto v = find(j, "extra_records")) {
    if (!v->is_array()) throw ConfigError("extra_records", "expected an array");
    for (const auto& x : *v) cfg.extra_records.push_back(get_count(x, "extra_records"));
  }
  if (auto v = find(j, "seeds")) cfg.num_seeds = get_count(*v, "seeds");
  if (cfg.num_seeds < 1) throw ConfigError("seeds", "must be at least 1");
  if (auto v = find(j, "base_seed")) cfg.base_seed = get_count(*v, "base_seed");
  if (auto v = find(j, "theta0_scale")) cfg.theta0_scale = get_number(*v, "theta0_scale");
  if (auto v = find(j, "start")) {
    if (v->is_string()) {
      if (v->get<std::string>() != "stationary") throw ConfigError("start", "expected \"stationary\" or a state index");
    } else {
      cfg.start_state = get_count(*v, "start");
    }
  }
  if (auto v = find(j, "psi2_form")) {
    const std::string f = get_string(*v, "psi2_form");
    if (f == "derivation") cfg.psi2_form = Psi2Form::derivation;
    else if (f == "statement") cfg.psi2_form = Psi2Form::statement;
    else throw ConfigError("psi2_form", "expected \"derivation\" or \"statement\"");
  }
  if (auto v = find(j, "threads")) cfg.threads = get_count(*v, "threads");
  if (auto v = find(j, "out")) cfg.out_dir = resolve(get_string(*v, "out"), base_dir);
  if (auto v = find(j, "write_seed_csv")) {
    if (!v->is_boolean()) throw ConfigError("write_seed_csv", "expected true or false");
    cfg.write_seed_csv = v->get<bool>();
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str(), fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

Instance build_instance(const RunConfig& cfg) {
  Instance inst;
  inst.mdp = cfg.mdp.file ? load_mdp(*cfg.mdp.file) : random_mdp(cfg.mdp.random);
  const std::size_t S = inst.mdp.num_states();
  switch (cfg.features.kind) {
    case FeatureSpec::Kind::aggregation:
      inst.fm = normalize_features(aggregation_features(S, cfg.features.count));
      break;
    case FeatureSpec::Kind::gaussian:
      inst.fm = normalize_features(gaussian_features(S, cfg.features.count, cfg.features.seed));
      break;
    case FeatureSpec::Kind::identity:
      inst.fm = FeatureMap(Matrix::Identity(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S)));
      break;
    case FeatureSpec::Kind::file:
      inst.fm = FeatureMap(load_matrix(cfg.features.file));
      break;
  }
  if (inst.fm.num_states() != S) throw Error("features have " + std::to_string(inst.fm.num_states()) + " rows, mdp has " + std::to_string(S) + " states");
  const std::size_t N = inst.mdp.num_agents();
  if (cfg.graph.file) {
    inst.graph = load_graph(*cfg.graph.file);
  } else {
    const std::size_t n = cfg.graph.agents == 0 ? N : cfg.graph.agents;
    inst.graph = make_graph(cfg.graph.kind, n, cfg.graph.p, cfg.graph.seed);
  }
  if (inst.graph.num_agents() != N)
    throw Error("graph has " + std::to_string(inst.graph.num_agents()) + " agents, mdp has " + std::to_string(N));
  inst.W = cfg.graph.weights_file ? make_consensus(load_matrix(*cfg.graph.weights_file), inst.graph)
                                  : metropolis_weights(inst.graph);
  return inst;
}

bool ExperimentResult::ok() const {
  for (const auto& r : per_lambda)
    if (!r.failures.empty()) return false;
  return true;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!error) error = std::current_exception();
          next.store(n);
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

ExperimentResult run_experiment(const RunConfig& cfg) {
  const Instance inst = build_instance(cfg);
  std::vector<Setup> setups;
  for (double l : cfg.lambdas) setups.push_back(prepare(cfg, inst, l));
  if (!cfg.out_dir.empty())
    for (std::size_t i = 0; i < setups.size(); ++i) ensure_dir(lambda_dir(cfg, i));

  const std::size_t S = cfg.num_seeds;
  std::vector<std::vector<SeedOutcome>> outcomes(setups.size(), std::vector<SeedOutcome>(S));
  parallel_for(setups.size() * S, cfg.threads, [&](std::size_t job) {
    const std::size_t li = job / S;
    const std::size_t si = job % S;
    if (!setups[li].ready) return;
    outcomes[li][si] = run_seed(cfg, inst, setups[li], li, si);
  });

  ExperimentResult result;
  for (std::size_t i = 0; i < setups.size(); ++i) {
    LambdaResult r = std::move(setups[i].result);
    if (setups[i].ready) aggregate(cfg, setups[i], outcomes[i], r);
    outcomes[i].clear();
    if (!cfg.out_dir.empty()) write_lambda_files(cfg, i, r);
    result.per_lambda.push_back(std::move(r));
  }
  if (!cfg.out_dir.empty()) {
    auto f = open_out((fs::path(cfg.out_dir) / "summary.txt").string());
    write_summary(f, cfg, result);
  }
  return result;
}

std::vector<ScheduleComparison> compare_schedules(const RunConfig& cfg) {
  RunConfig base = cfg;
  base.out_dir.clear();
  base.record_every = cfg.num_steps;
  base.extra_records = log_grid(cfg.num_steps, 20);
  RunConfig cst = base;
  cst.schedule.kind = ScheduleSpec::Kind::constant;
  cst.schedule.alpha0.reset();
  RunConfig dim = base;
  dim.schedule.kind = ScheduleSpec::Kind::diminishing;
  const auto rc = run_experiment(cst);
  const auto rd = run_experiment(dim);

  std::vector<ScheduleComparison> out;
  for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
    const auto& a = rc.per_lambda[i];
    const auto& b = rd.per_lambda[i];
    ScheduleComparison c;
    c.lambda = cfg.lambdas[i];
    c.alpha = a.inputs.alpha;
    c.alpha0 = b.inputs.alpha0;
    for (std::size_t j = 0; j < a.curve.size() && j < b.curve.size(); ++j) {
      c.ks.push_back(a.curve[j].k);
      c.mse_constant.push_back(a.curve[j].mse);
      c.mse_diminishing.push_back(b.curve[j].mse);
    }
    // Split the last decade at its geometric midpoint and compare window means.
    const double K = static_cast<double>(cfg.num_steps);
    auto window = [&](const std::vector<double>& v, double lo, double hi) {
      std::vector<double> w;
      for (std::size_t j = 0; j < c.ks.size(); ++j) {
        const double k = static_cast<double>(c.ks[j]);
        if (k > lo && k <= hi) w.push_back(v[j]);
      }
      return mean_of(w);
    };
    const double mid = K / std::sqrt(10.0);
    const double c1 = window(c.mse_constant, K / 10.0, mid);
    const double c2 = window(c.mse_constant, mid, K);
    const double d1 = window(c.mse_diminishing, K / 10.0, mid);
    const double d2 = window(c.mse_diminishing, mid, K);
    c.constant_plateaus = std::abs(c2 - c1) < 0.1 * c1;
    c.diminishing_decreasing = d2 < d1;
    out.push_back(std::move(c));
  }
  return out;
}

void write_comparison_csv(std::ostream& out, const ScheduleComparison& c) {
  out << "k,mse_constant,mse_diminishing\n";
  for (std::size_t j = 0; j < c.ks.size(); ++j)
    out << c.ks[j] << ',' << format_double(c.mse_constant[j]) << ',' << format_double(c.mse_diminishing[j]) << '\n';
}

void write_mixing_table(std::ostream& out, const MarkovChain& chain, const std::vector<double>& alphas) {
  const Vector pi = stationary_distribution(chain).pi;
  const MixingModel model{fit_mixing_constant(chain, pi)};
  out << "alpha,tau_tv,tau_model,C\n";
  for (double a : alphas)
    out << format_double(a) << ',' << tv_mixing_steps(chain, pi, a) << ',' << model.tau(a) << ','
        << format_double(model.C) << '\n';
}

void write_summary(std::ostream& out, const RunConfig& cfg, const ExperimentResult& result) {
  out << "steps " << cfg.num_steps << ", seeds " << cfg.num_seeds << ", base_seed " << cfg.base_seed << '\n';
  for (std::size_t i = 0; i < result.per_lambda.size(); ++i) {
    const auto& r = result.per_lambda[i];
    const auto& in = r.inputs;
    out << "\n[lambda_" << i << "] lambda = " << format_double(r.lambda) << '\n';
    out << "  sigma_min " << format_double(r.oracle.sigma_min) << " (singular " << format_double(r.oracle.sigma_min_singular)
        << "), sigma2 " << format_double(r.sigma2) << ", ||theta*|| " << format_double(in.theta_star_norm)
        << ", residual " << format_double(r.oracle.residual) << '\n';
    out << "  sandwich " << format_double(r.quality.lower) << " <= " << format_double(r.quality.actual) << " <= "
        << format_double(r.quality.upper) << '\n';
    out << "  ||A|| " << format_double(r.norms.a_norm) << " <= " << format_double(r.norms.a_bound) << ", ||b|| "
        << format_double(r.norms.b_norm) << " <= " << format_double(r.norms.b_bound) << '\n';
    out << "  mixing C " << format_double(r.model.C) << ", tau " << in.tau << '\n';
    out << "  step sizes: " << r.verdict.describe() << '\n';
    if (r.schedule.kind() == StepSchedule::Kind::constant) {
      if (r.verdict.ok()) {
        const auto psi = psi_constant_step(in);
        out << "  delta " << format_double(delta(in.sigma2, in.alpha, in.gamma, in.lambda)) << ", Psi1 "
            << format_double(psi.first) << ", Psi2 " << format_double(psi.second) << ", bound limit "
            << format_double(theorem1_limit(in)) << '\n';
      }
    } else {
      const auto psi = psi_diminishing_step(in);
      out << "  alpha0 " << format_double(in.alpha0) << ", Psi3 " << format_double(psi.first) << ", Psi4 "
          << format_double(psi.second);
      if (r.kstar) out << ", K* " << r.kstar->kstar << ", delta " << format_double(r.kstar->delta);
      out << '\n';
    }
    out << "  plateau mse " << format_double(r.plateau) << " (se " << format_double(r.plateau_se) << ")\n";
    out << "  verdicts: dominated " << (r.report.dominated ? "yes" : "no") << ", consensus "
        << (r.report.consensus_ok ? "ok" : "VIOLATED") << ", drift "
        << (r.report.drift_checked ? (r.report.drift_ok ? "ok" : "VIOLATED") : "not checked") << '\n';
    for (const auto& n : r.notes) out << "  note: " << n << '\n';
    const std::size_t shown = std::min<std::size_t>(r.failures.size(), 20);
    for (std::size_t j = 0; j < shown; ++j) out << "  FAIL: " << r.failures[j] << '\n';
    if (r.failures.size() > shown) out << "  FAIL: ... " << r.failures.size() - shown << " more\n";
  }
  out << "\nstatus " << (result.ok() ? "ok" : "FAILED") << '\n';
}

}  // namespace dtdlab
