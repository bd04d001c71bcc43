#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "harness.hpp"
#include "rng.hpp"

using namespace bilevel;

namespace {

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "bilevel_trace_io_test";
  std::filesystem::create_directories(dir);
  return dir;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("parse_config: minimal config gets documented defaults") {
  const std::string text = R"({
    "problem": {"family": "quad", "d": 10, "p": 10, "seed": 3},
    "solver": {"name": "mgbio", "T": 100}
  })";
  const RunConfigFile cfg = parse_config(text);
  CHECK(cfg.problem.family == "quad");
  CHECK(cfg.problem.quad.d == 10);
  CHECK(cfg.solver.kind == SolverKind::Mgbio);
  CHECK(cfg.solver.cfg.horizon == 100);
  CHECK(cfg.solver.cfg.gamma == 0.01);
  CHECK(cfg.solver.cfg.lambda == 0.01);
  CHECK(cfg.solver.cfg.schedule.kind() == StepSchedule::Kind::Constant);
  CHECK(cfg.solver.cfg.schedule.eta() == 1.0);
  CHECK(cfg.solver.cfg.batch == 1);
  CHECK(!cfg.solver.clip_given);
  CHECK(cfg.diagnostics.diag_stride == 10);
  CHECK(cfg.output.formats == std::vector<std::string>{"csv"});
}

TEST_CASE("parse_config: unknown keys are rejected with their location") {
  const std::string text = R"({
    "problem": {"family": "quad", "d": 4, "p": 4, "seed": 0},
    "solver": {"name": "mgbio", "gama": 0.5}
  })";
  try {
    parse_config(text);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("gama") != std::string::npos);
    CHECK(std::string(e.what()).find("/solver") != std::string::npos);
  }

  // exactly one problem source
  CHECK_THROWS_AS(parse_config(R"({"problem": {}, "solver": {"name": "mgbio"}})"),
                  Error);
  CHECK_THROWS_AS(
      parse_config(
          R"({"problem": {"path": "/nonexistent/file.blo"}, "solver": {"name": "mgbio"}})"),
      Error);
  CHECK_THROWS_AS(
      parse_config(
          R"({"problem": {"family": "quad", "d": 4, "p": 4}, "solver": {"name": "sgd"}})"),
      Error);
  CHECK_THROWS_AS(parse_config("not json at all"), Error);
}

TEST_CASE("parse_config round trip: emit(parse(text)) reparses identically") {
  const std::string text = R"({
    "problem": {"family": "plgame", "d": 12, "l": 8, "n": 30, "mu": 1.0, "lg": 4.0,
                "seed": 5, "range_compatible": true},
    "solver": {"name": "vr-msgbio", "gamma": 0.02, "lambda": 0.03, "T": 64,
               "seed": 11,
               "schedule": {"variant": "polynomial", "k": 0.5, "m": 9.0,
                             "exponent": "1/3"},
               "coeffs": {"c1": 2, "c2": 3, "c3": 1, "c4": 2, "c5": 2},
               "batch": 5,
               "clip": {"c_fy": 10.0, "c_gxy": 0.5, "mu": 1.0, "l_g": 4.0},
               "set": {"variant": "ball", "center": [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
                        "radius": 5.0},
               "init_radius": 0.5, "warm_start_samples": 10},
    "diagnostics": {"diag_stride": 5, "oracle": false},
    "output": {"dir": "runs", "formats": ["csv", "gnuplot"]}
  })";
  const RunConfigFile cfg = parse_config(text);
  const json emitted = emit_config(cfg);
  const RunConfigFile cfg2 = parse_config(emitted.dump());
  CHECK(emit_config(cfg2) == emitted);
  CHECK(cfg2.solver.cfg.schedule.exponent() == doctest::Approx(1.0 / 3.0));
  CHECK(cfg2.solver.cfg.set.kind() == FeasibleSet::Kind::Ball);
  CHECK(cfg2.solver.cfg.clip.c_fy == 10.0);
  CHECK(cfg2.diagnostics.oracle.has_value());
  CHECK(*cfg2.diagnostics.oracle == false);
}

TEST_CASE("trace files: bitwise round trip, golden header, error paths") {
  const auto dir = temp_dir();
  const std::string csv = (dir / "roundtrip.csv").string();

  TraceFile tf;
  tf.header = {{"seed", 7}, {"solver", "mgbio"}};
  Rng rng(8);
  for (std::int64_t t = 1; t <= 25; ++t) {
    TraceRecord rec;
    rec.t = t;
    rec.eta = 0.5;
    rec.grad_map_norm = std::exp(rng.normal());
    rec.f_val = rng.normal() * 1e-7;
    if (t % 10 == 0) {
      rec.true_grad_norm = rng.normal();
      rec.hyper_err = std::abs(rng.normal());
      rec.g_gap = std::abs(rng.normal());
      rec.lyapunov = rng.normal();
    }
    rec.samples_used = 2 * t;
    rec.wall_nanos = 0;
    tf.rows.push_back(rec);
  }
  write_trace(csv, tf);

  const TraceFile back = read_trace(csv);
  REQUIRE(back.rows.size() == tf.rows.size());
  for (std::size_t i = 0; i < tf.rows.size(); ++i) CHECK(back.rows[i] == tf.rows[i]);
  CHECK(back.header.at("seed") == 7);

  // golden column order, stable across versions
  std::ifstream in(csv);
  std::string first_line;
  std::getline(in, first_line);
  CHECK(first_line ==
        "t,eta,grad_map_norm,true_grad_norm,hyper_err,f_val,g_gap,lyapunov,"
        "samples_used,wall_nanos");

  // empty trace rejected at write
  TraceFile empty;
  empty.header = json::object();
  CHECK_THROWS_AS(write_trace((dir / "empty.csv").string(), empty), Error);

  // malformed row reported with its number
  {
    std::ofstream out(csv, std::ios::app);
    out << "1,2,3\n";
  }
  try {
    read_trace(csv);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("27") != std::string::npos);
  }
}

TEST_CASE("instance container: save/load is exact for every family") {
  const auto dir = temp_dir();

  PLGameParams gp;
  gp.d = 8;
  gp.l = 5;
  gp.n = 12;
  gp.seed = 3;
  const PLGameInstance game = generate_pl_game(gp);
  const std::string game_path = (dir / "game.blo").string();
  save_instance(game_path, game);
  const auto game_back = std::get<PLGameInstance>(load_instance(game_path));
  CHECK(game_back.p_mat == game.p_mat);
  CHECK(game_back.q_samples == game.q_samples);
  CHECK(game_back.r2_mat == game.r2_mat);
  CHECK(game_back.seed == game.seed);
  CHECK(game_back.range_compatible == game.range_compatible);

  MatrixSensingParams sp;
  sp.d = 6;
  sp.r = 2;
  sp.seed = 4;
  const MatrixSensingInstance sensing = generate_matrix_sensing(sp);
  const std::string sensing_path = (dir / "sensing.blo").string();
  save_instance(sensing_path, sensing);
  const auto sensing_back = std::get<MatrixSensingInstance>(load_instance(sensing_path));
  CHECK(sensing_back.labels == sensing.labels);
  CHECK(sensing_back.h_star == sensing.h_star);
  CHECK(sensing_back.train_idx == sensing.train_idx);
  CHECK(sensing_back.val_idx == sensing.val_idx);
  REQUIRE(sensing_back.sensing.size() == sensing.sensing.size());
  for (std::size_t i = 0; i < sensing.sensing.size(); ++i)
    CHECK(sensing_back.sensing[i] == sensing.sensing[i]);

  QuadGenParams qp;
  qp.d = 5;
  qp.p = 4;
  qp.seed = 5;
  const QuadOracleInstance quad = generate_quad_oracle(qp);
  const std::string quad_path = (dir / "quad.blo").string();
  save_instance(quad_path, quad);
  const auto quad_back = std::get<QuadOracleInstance>(load_instance(quad_path));
  CHECK(quad_back.q_mat == quad.q_mat);
  CHECK(quad_back.r1_mat == quad.r1_mat);

  // summaries carry the facts the CLI prints
  const json summary = instance_summary(game);
  CHECK(summary.at("family") == "plgame");
  CHECK(summary.at("Q").at("rank").get<Index>() <= gp.l);

  CHECK_THROWS_AS(load_instance((dir / "missing.blo").string()), Error);
  const std::string junk_path = (dir / "junk.blo").string();
  {
    std::ofstream out(junk_path, std::ios::binary);
    out << "definitely not an instance";
  }
  CHECK_THROWS_AS(load_instance(junk_path), Error);
}

TEST_CASE("rng substreams: stable derivation, stream isolation, determinism") {
  CHECK(Rng::derive_seed(7, "minibatch") == Rng::derive_seed(7, "minibatch"));
  CHECK(Rng::derive_seed(7, "minibatch") != Rng::derive_seed(7, "init"));
  CHECK(Rng::derive_seed(7, "minibatch") != Rng::derive_seed(8, "minibatch"));

  // consuming one stream never perturbs another
  Rng a1 = Rng::substream(7, "a");
  Rng b1 = Rng::substream(7, "b");
  (void)b1.normal();
  (void)b1.normal();
  Rng a2 = Rng::substream(7, "a");
  for (int i = 0; i < 16; ++i) CHECK(a1.next_u64() == a2.next_u64());

  // normals and index draws are deterministic per seed
  Rng c1(99), c2(99);
  for (int i = 0; i < 16; ++i) CHECK(c1.normal() == c2.normal());
  CHECK(c1.sample_without_replacement(10, 4) == c2.sample_without_replacement(10, 4));

  auto idx = c1.sample_without_replacement(100, 100);
  std::sort(idx.begin(), idx.end());
  for (int i = 0; i < 100; ++i) CHECK(idx[i] == i);
}

TEST_CASE("execute_compare: single seed leaves sd empty, identical solvers tie") {
  const auto dir = temp_dir() / "compare_one_seed";
  std::filesystem::remove_all(dir);
  const std::string text = R"({
    "problem": {"family": "quad", "d": 5, "p": 5, "seed": 4},
    "solvers": [
      {"name": "mgbio", "gamma": 0.05, "lambda": 0.1, "T": 120,
       "schedule": {"variant": "constant", "eta": 1.0}},
      {"name": "mgbio", "gamma": 0.05, "lambda": 0.1, "T": 120,
       "schedule": {"variant": "constant", "eta": 1.0}}
    ],
    "seeds": 1, "threshold": 0.001,
    "output": {"dir": ")" + dir.string() + R"("}
  })";
  const CompareOutcome outcome = execute_compare(parse_compare_config(text));
  REQUIRE(outcome.rows.size() == 2);
  CHECK(outcome.rows[0].final_running_mean == outcome.rows[1].final_running_mean);
  CHECK(outcome.rows[0].samples_to_threshold == outcome.rows[1].samples_to_threshold);
  CHECK(outcome.verdict.at("solvers").at(0).at("final_sd").is_null());
  CHECK(outcome.verdict.at("pairwise").at(0).at("ties") == 1);
}

TEST_CASE("execute_run writes deterministic artifacts with embedded config") {
  const auto dir = temp_dir() / "run_artifacts";
  std::filesystem::remove_all(dir);

  const std::string text = R"({
    "problem": {"family": "quad", "d": 6, "p": 6, "seed": 2},
    "solver": {"name": "msgbio", "gamma": 0.02, "lambda": 0.05, "T": 30, "seed": 9,
                "schedule": {"variant": "constant", "eta": 0.5},
                "coeffs": {"c1": 1, "c2": 1, "c3": 1, "c4": 1, "c5": 1}},
    "diagnostics": {"diag_stride": 5},
    "output": {"dir": ")" + (dir / "a").string() + R"("}
  })";

  const RunArtifacts first = execute_run(parse_config(text));
  CHECK(std::filesystem::exists(first.trace_csv));
  CHECK(std::filesystem::exists(trace_header_path(first.trace_csv)));
  CHECK(first.trace.rows.size() == 30);
  CHECK(first.resolved.clip_given);  // defaults were materialized

  // identical (config, seed): byte-identical trace files
  const RunArtifacts second = execute_run(parse_config(text));
  CHECK(file_bytes(first.trace_csv) == file_bytes(second.trace_csv));

  // closure: the header embeds a config that reproduces the same trace
  const TraceFile written = read_trace(first.trace_csv);
  json embedded = written.header.at("config");
  embedded["output"]["dir"] = (dir / "b").string();
  const RunArtifacts replay = execute_run(parse_config(embedded.dump()));
  REQUIRE(replay.trace.rows.size() == written.rows.size());
  for (std::size_t i = 0; i < written.rows.size(); ++i)
    CHECK(replay.trace.rows[i] == written.rows[i]);
}
