#include "dtdlab/harness.hpp"

#include "dtdlab/io.hpp"

#include "fixtures.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dtdlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dtdlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kSmall = R"({
  "mdp": {"random": {"states": 6, "agents": 4, "branching": 6, "gamma": 0.8, "seed": 11}},
  "features": {"kind": "gaussian", "count": 3, "seed": 2},
  "graph": {"kind": "ring"},
  "schedule": {"kind": "constant", "alpha": 0.02},
  "lambdas": [0.5],
  "steps": 2000,
  "record_every": 250,
  "seeds": 4,
  "threads": 1
})";

}  // namespace

TEST_CASE("config defaults and full parse") {
  const auto d = parse_config(R"({"mdp": {"random": {}}})");
  CHECK(d.lambdas == std::vector<double>{0.5});
  CHECK(d.num_seeds == 20u);
  CHECK_FALSE(d.schedule.alpha.has_value());
  CHECK(d.out_dir.empty());
  CHECK(d.mdp.random.branching == d.mdp.random.num_states);

  const auto c = parse_config(R"({
    // comments are allowed
    "mdp": {"file": "m.txt"},
    "features": {"kind": "file", "file": "phi.txt"},
    "graph": {"kind": "erdos_renyi", "p": 0.3, "seed": 5, "weights": "/abs/w.txt"},
    "schedule": {"kind": "diminishing", "alpha": 0.01, "alpha0": "auto"},
    "lambdas": [0, 0.5, 1],
    "steps": 10, "record_every": 2, "extra_records": [3, 7], "seeds": 2, "base_seed": 9,
    "theta0_scale": 0.5, "start": 3, "psi2_form": "statement", "threads": 2, "out": "runs/x",
    "write_seed_csv": false
  })", "/base/dir");
  CHECK(*c.mdp.file == "/base/dir/m.txt");
  CHECK(c.features.kind == FeatureSpec::Kind::file);
  CHECK(c.features.file == "/base/dir/phi.txt");
  CHECK(c.graph.kind == GraphKind::erdos_renyi);
  CHECK(*c.graph.weights_file == "/abs/w.txt");
  CHECK(c.schedule.kind == ScheduleSpec::Kind::diminishing);
  CHECK(*c.schedule.alpha == 0.01);
  CHECK_FALSE(c.schedule.alpha0.has_value());
  CHECK(c.lambdas == std::vector<double>{0, 0.5, 1});
  CHECK(c.extra_records == std::vector<std::size_t>{3, 7});
  CHECK(*c.start_state == 3u);
  CHECK(c.psi2_form == Psi2Form::statement);
  CHECK(c.out_dir == "/base/dir/runs/x");
  CHECK_FALSE(c.write_seed_csv);
  CHECK_FALSE(parse_config(R"({"mdp": {"random": {}}, "schedule": "auto"})").schedule.alpha.has_value());
}

TEST_CASE("config errors") {
  auto fails = [](const std::string& text, const std::string& needle) {
    CAPTURE(text);
    CHECK_THROWS_WITH_AS(parse_config(text), doctest::Contains(needle.c_str()), Error);
  };
  fails("{", "config");
  fails(R"({})", "mdp");
  fails(R"({"mdp": {"random": {}}, "stepz": 3})", "stepz: unknown key");
  fails(R"({"mdp": {"random": {"sates": 3}}})", "mdp.random.sates");
  fails(R"({"mdp": {"random": {}, "file": "x"}})", "not both");
  fails(R"({"mdp": {"random": {}}, "lambdas": [1.5]})", "[0, 1]");
  fails(R"({"mdp": {"random": {}}, "lambdas": []})", "nonempty");
  fails(R"({"mdp": {"random": {}}, "steps": -1})", "nonnegative integer");
  fails(R"({"mdp": {"random": {}}, "steps": 0})", "at least 1");
  fails(R"({"mdp": {"random": {}}, "schedule": {"alpha": -0.1}})", "positive");
  fails(R"({"mdp": {"random": {}}, "schedule": {"alpha": "big"}})", "\"auto\"");
  fails(R"({"mdp": {"random": {}}, "schedule": {"alpha0": 2}})", "only for diminishing");
  fails(R"({"mdp": {"random": {}}, "features": {"kind": "fourier"}})", "fourier");
  fails(R"({"mdp": {"random": {}}, "features": {"kind": "file"}})", "required");
  fails(R"({"mdp": {"random": {}}, "graph": {"kind": "torus"}})", "graph.kind");
  fails(R"({"mdp": {"random": {}}, "psi2_form": "other"})", "psi2_form");
  fails(R"({"mdp": {"random": {}}, "start": "random"})", "start");
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), Error);
}

TEST_CASE("shipped configs load") {
  const auto cfg = load_config(std::string(DTDLAB_SOURCE_DIR) + "/configs/desk.json");
  const auto inst = build_instance(cfg);
  CHECK(inst.mdp.num_states() == 10u);
  CHECK(inst.mdp.num_agents() == 8u);
  CHECK(inst.fm.num_features() == 4u);
  CHECK(validate_consensus(inst.W.W, inst.graph).ok);
}

TEST_CASE("instance from files and mismatches") {
  const auto dir = scratch("files");
  const auto p = fixtures::problem(5, 2, 3, 0.7, 4);
  save_mdp((dir / "m.txt").string(), p.mdp);
  save_matrix((dir / "phi.txt").string(), p.fm.Phi());
  {
    std::ofstream f(dir / "c.json");
    f << R"({"mdp": {"file": "m.txt"}, "features": {"kind": "file", "file": "phi.txt"}, "graph": {"kind": "complete"}})";
  }
  const auto inst = build_instance(load_config((dir / "c.json").string()));
  CHECK(inst.fm.Phi() == p.fm.Phi());
  CHECK(inst.mdp.chain.P == p.mdp.chain.P);
  CHECK(inst.graph.edges().size() == 3u);

  auto cfg = parse_config(R"({"mdp": {"random": {"states": 5, "agents": 3}}, "graph": {"agents": 4}})");
  CHECK_THROWS_WITH_AS(build_instance(cfg), doctest::Contains("agents"), Error);
  cfg = parse_config(R"({"mdp": {"file": "m.txt"}, "features": {"kind": "aggregation", "count": 2}})", dir.string());
  cfg.features.kind = FeatureSpec::Kind::file;
  cfg.features.file = (dir / "missing.txt").string();
  CHECK_THROWS_AS(build_instance(cfg), Error);
}

TEST_CASE("zero rewards decay to consensus at zero") {
  const auto dir = scratch("zero");
  auto p = fixtures::problem(6, 3, 4, 0.8, 7);
  for (auto& r : p.mdp.rewards) r.setZero();
  save_mdp((dir / "m.txt").string(), p.mdp);
  auto cfg = parse_config(R"({"mdp": {"file": "m.txt"}, "features": {"kind": "gaussian", "count": 3},
      "schedule": {"alpha": 0.05}, "steps": 10000, "record_every": 1000, "seeds": 3, "theta0_scale": 1.0})",
                          dir.string());
  const auto res = run_experiment(cfg);
  REQUIRE(res.per_lambda.size() == 1u);
  const auto& r = res.per_lambda[0];
  CHECK(r.oracle.theta_star.norm() == 0.0);
  CHECK(r.curve.front().mse > 0.1);
  CHECK(r.curve.back().mse < 1e-6 * r.curve.front().mse);
  CHECK(r.curve.back().consensus_error < 1e-6);
  CHECK(r.report.consensus_ok);
}

TEST_CASE("runs are deterministic and thread-count independent") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  auto cfg = parse_config(kSmall);
  cfg.out_dir = a.string();
  const auto ra = run_experiment(cfg);
  cfg.out_dir = b.string();
  cfg.threads = 3;
  run_experiment(cfg);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    CAPTURE(rel.string());
    CHECK(slurp(e.path()) == slurp(b / rel));
  }
  CHECK(files == 1u + 4u + 3u);  // summary, seeds, mean/bounds/oracle
  CHECK(slurp(a / "lambda_0" / "bounds.csv").rfind("k,mse,", 0) == 0);
  CHECK(slurp(a / "summary.txt").find("status ok") != std::string::npos);
  CHECK(ra.ok());
  CHECK(ra.per_lambda[0].runs.size() == 4u);

  cfg.base_seed = 2;
  cfg.out_dir.clear();
  const auto rc = run_experiment(cfg);
  CHECK(rc.per_lambda[0].curve.back().mse != ra.per_lambda[0].curve.back().mse);
}

TEST_CASE("lambda sweep produces one bundle per lambda") {
  const auto dir = scratch("sweep");
  auto cfg = parse_config(kSmall);
  cfg.lambdas = {0.0, 0.5, 0.9};
  cfg.out_dir = dir.string();
  cfg.write_seed_csv = false;
  const auto res = run_experiment(cfg);
  REQUIRE(res.per_lambda.size() == 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(res.per_lambda[i].lambda == cfg.lambdas[i]);
    for (const char* f : {"mean.csv", "bounds.csv", "oracle.txt"})
      CHECK(fs::exists(dir / ("lambda_" + std::to_string(i)) / f));
    CHECK_FALSE(fs::exists(dir / ("lambda_" + std::to_string(i)) / "seed_0.csv"));
  }
  // The variance floor at a common alpha grows with lambda.
  for (std::size_t i = 1; i < 3; ++i) {
    const auto& lo = res.per_lambda[i - 1].inputs;
    const auto& hi = res.per_lambda[i].inputs;
    CHECK(variance_floor(lo.R, lo.alpha, lo.gamma, lo.lambda, delta(lo.sigma2, lo.alpha, lo.gamma, lo.lambda)) <=
          variance_floor(hi.R, hi.alpha, hi.gamma, hi.lambda, delta(hi.sigma2, hi.alpha, hi.gamma, hi.lambda)));
  }
}

TEST_CASE("auto schedule passes every clause") {
  auto cfg = parse_config(kSmall);
  cfg.schedule.alpha.reset();
  cfg.num_steps = 500;
  const auto res = run_experiment(cfg);
  const auto& r = res.per_lambda[0];
  CHECK(r.verdict.ok());
  CHECK(r.schedule.base() == r.verdict.alpha);
  CHECK(r.report.dominated);
  CHECK(r.report.drift_checked);
  for (const auto& row : r.report.rows)
    if (row.k >= r.inputs.tau) CHECK_FALSE(std::isnan(row.theorem_rhs));
}

TEST_CASE("diminishing schedule reports K*") {
  auto cfg = parse_config(kSmall);
  cfg.schedule.kind = ScheduleSpec::Kind::diminishing;
  cfg.schedule.alpha.reset();
  const auto res = run_experiment(cfg);
  const auto& r = res.per_lambda[0];
  REQUIRE(r.kstar.has_value());
  CHECK(r.inputs.alpha0 == doctest::Approx(1.0 / r.oracle.sigma_min));
  CHECK(r.schedule.kind() == StepSchedule::Kind::diminishing);
  if (r.kstar->kstar > cfg.num_steps) {
    bool noted = false;
    for (const auto& n : r.notes) noted = noted || n.find("exceeds the run length") != std::string::npos;
    CHECK(noted);
  }
}

TEST_CASE("schedule comparison") {
  auto cfg = parse_config(kSmall);
  cfg.num_steps = 1000;
  const auto cmp = compare_schedules(cfg);
  REQUIRE(cmp.size() == 1u);
  const auto& c = cmp[0];
  CHECK(c.ks.front() == 0u);
  CHECK(c.ks.back() == 1000u);
  CHECK(c.ks.size() == c.mse_constant.size());
  CHECK(c.ks.size() == c.mse_diminishing.size());
  CHECK(c.ks.size() > 40u);
  CHECK(c.alpha == 0.02);
  std::ostringstream out;
  write_comparison_csv(out, c);
  CHECK(out.str().rfind("k,mse_constant,mse_diminishing\n0,", 0) == 0);
}

TEST_CASE("mixing table") {
  std::ostringstream out;
  write_mixing_table(out, MarkovChain{fixtures::mat({{0.5, 0.5}, {0.5, 0.5}})}, {0.1, 0.01});
  CHECK(out.str() == "alpha,tau_tv,tau_model,C\n0.10000000000000001,1,0,0\n0.01,1,0,0\n");
}

TEST_CASE("parallel_for") {
  for (std::size_t threads : {std::size_t{0}, std::size_t{1}, std::size_t{4}}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, threads, [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_WITH_AS(parallel_for(10, threads, [](std::size_t i) {
                           if (i == 3) throw Error("boom");
                         }),
                         "boom", Error);
  }
}
