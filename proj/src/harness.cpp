#include "harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

namespace bilevel {

namespace {

ClipSpec derive_clip(const InstanceVariant& inst, const BilevelOracle& oracle) {
  const MeasuredConstants mc = oracle.measured_constants();
  ClipSpec clip;
  clip.c_fy = std::max(1e-8, 100.0 * mc.r1_norm);
  clip.c_gxy = std::max(1e-12, mc.c_gxy);
  if (const auto* g = std::get_if<PLGameInstance>(&inst)) {
    clip.mu = g->interval_mu;
    clip.l_g = std::max(g->interval_l, mc.l_g);
  } else if (const auto* q = std::get_if<QuadOracleInstance>(&inst)) {
    clip.mu = q->mu_gen;
    clip.l_g = std::max(q->lg_gen, mc.l_g);
  } else {
    // Sensing constants are probe estimates; widen the window.
    clip.mu = mc.mu;
    clip.l_g = std::max(clip.mu, 2.0 * mc.l_g);
    clip.c_gxy = 2.0 * clip.c_gxy;
    clip.c_fy = std::max(1.0, 20.0 * mc.r1_norm);
  }
  return clip;
}

}  // namespace

BuiltProblem build_problem(const ProblemConfig& pc) {
  BuiltProblem built;
  if (!pc.path.empty()) {
    built.instance = load_instance(pc.path);
  } else if (pc.family == "plgame") {
    built.instance = generate_pl_game(pc.plgame);
  } else if (pc.family == "sensing") {
    built.instance = generate_matrix_sensing(pc.sensing);
  } else if (pc.family == "quad") {
    built.instance = generate_quad_oracle(pc.quad);
  } else {
    fail(ErrorCode::InvalidConfiguration, "build_problem: unknown family " + pc.family);
  }
  built.family = instance_family(built.instance);

  if (const auto* g = std::get_if<PLGameInstance>(&built.instance)) {
    built.oracle = pl_game_oracle(*g);
    built.oracle_diag_default = true;
  } else if (const auto* s = std::get_if<MatrixSensingInstance>(&built.instance)) {
    built.oracle = matrix_sensing_oracle(*s);
    built.oracle_diag_default = false;  // inner solves per row are costly here
  } else {
    const auto& q = std::get<QuadOracleInstance>(built.instance);
    built.oracle = quad_oracle(q);
    built.true_hypergradient = [q](const Vec& x) {
      return quad_oracle_truth(q, x).grad_f_true;
    };
    built.oracle_diag_default = true;
  }
  built.default_clip = derive_clip(built.instance, *built.oracle);
  return built;
}

ProblemConstants constants_from(const BilevelOracle& oracle, const ClipSpec& clip) {
  const MeasuredConstants mc = oracle.measured_constants();
  ProblemConstants pc;
  pc.c_fy = clip.c_fy;
  pc.c_gxy = clip.c_gxy;
  pc.mu = clip.mu;
  pc.l_g = std::max(clip.l_g, mc.l_g);
  pc.l_f = std::max(mc.l_f, 1e-12);
  pc.l_gxy = mc.l_gxy;
  pc.l_gyy = mc.l_gyy;
  return pc;
}

std::string default_output_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("BLO_OUT_DIR"); env && *env) return env;
  return "out";
}

namespace {

void write_gnuplot_script(const std::string& csv_path) {
  const std::string gp = csv_path.substr(0, csv_path.size() - 4) + ".gp";
  std::ofstream out(gp, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot open " + gp);
  out << "set datafile separator ','\n"
      << "set logscale y\n"
      << "set xlabel 'iteration'\n"
      << "set ylabel 'grad_map_norm'\n"
      << "plot '" << std::filesystem::path(csv_path).filename().string()
      << "' every ::1 using 1:3 with lines title 'grad_map_norm'\n";
}

struct PreparedRun {
  RunConfigFile snapshot;   // defaults and clip resolved
  RunOptions opts;
  ConstantsReport constants;
};

PreparedRun prepare(const RunConfigFile& cfg, const BuiltProblem& built) {
  PreparedRun prep;
  prep.snapshot = cfg;
  if (!prep.snapshot.solver.clip_given) {
    prep.snapshot.solver.cfg.clip = built.default_clip;
    prep.snapshot.solver.clip_given = true;
  }
  if (!prep.snapshot.diagnostics.oracle)
    prep.snapshot.diagnostics.oracle = built.oracle_diag_default;
  prep.snapshot.output.dir = default_output_dir(prep.snapshot.output.dir);

  prep.opts.diag_stride = prep.snapshot.diagnostics.diag_stride;
  prep.opts.oracle_diagnostics = *prep.snapshot.diagnostics.oracle;
  prep.opts.true_hypergradient = built.true_hypergradient;

  const auto& solver = prep.snapshot.solver;
  prep.constants = constants_report(constants_from(*built.oracle, solver.cfg.clip),
                                    solver.cfg.schedule, solver.cfg.schedule.k(),
                                    solver.cfg.schedule.m());
  return prep;
}

json trace_header(const PreparedRun& prep, const RunResult& result,
                  const std::string& family) {
  json header;
  header["format_version"] = 1;
  header["family"] = family;
  header["seed"] = prep.snapshot.solver.cfg.seed;
  header["solver"] = std::string(solver_name(prep.snapshot.solver.kind));
  header["columns"] = kTraceColumns;
  header["config"] = emit_config(prep.snapshot);
  header["constants_report"] = constants_report_to_json(prep.constants);
  header["warnings"] = result.warnings;
  header["output_index"] = result.output_index;
  header["rng"] = Rng::kAlgorithm;
  header["samples_accounting"] =
      "stochastic: per-sample oracle evaluations (2*batch per msgbio step, "
      "4*batch per vr-msgbio step); mgbio rows carry t * (n_f + n_g) "
      "full-batch equivalents";
  if (result.failed_iteration)
    header["failed_iteration"] = *result.failed_iteration;
  return header;
}

}  // namespace

RunArtifacts execute_run(const RunConfigFile& cfg) {
  const BuiltProblem built = build_problem(cfg.problem);
  PreparedRun prep = prepare(cfg, built);

  RunArtifacts art;
  art.resolved = prep.snapshot.solver;
  art.constants = prep.constants;
  art.result = run(*built.oracle, prep.snapshot.solver.cfg, prep.snapshot.solver.kind,
                   prep.opts);

  art.trace.header = trace_header(prep, art.result, built.family);
  art.trace.rows = art.result.trace;
  // Wall-clock timings are not reproducible; the file contract is
  // byte-determinism for identical (config, seed).
  for (auto& row : art.trace.rows) row.wall_nanos = 0;

  const auto dir = std::filesystem::path(prep.snapshot.output.dir);
  std::filesystem::create_directories(dir);
  const std::string stem = std::string(solver_name(prep.snapshot.solver.kind)) +
                           "-seed" + std::to_string(prep.snapshot.solver.cfg.seed);
  art.trace_csv = (dir / (stem + ".csv")).string();
  write_trace(art.trace_csv, art.trace);
  for (const auto& format : prep.snapshot.output.formats)
    if (format == "gnuplot") write_gnuplot_script(art.trace_csv);
  return art;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

namespace {

CompareRow run_single(const BuiltProblem& built, const SolverEntry& entry,
                      std::uint64_t seed, double threshold,
                      const DiagnosticsConfig& diag) {
  SolverConfig cfg = entry.cfg;
  cfg.seed = seed;

  RunOptions opts;
  opts.diag_stride = diag.diag_stride;
  opts.oracle_diagnostics = false;  // threshold metric needs no truth oracle

  CompareRow row;
  row.solver = std::string(solver_name(entry.kind));
  row.seed = seed;

  double cum = 0.0;
  std::int64_t count = 0;
  const RunResult result = run(
      *built.oracle, cfg, entry.kind, opts,
      [&](const TraceRecord& rec, const IterateState&) {
        cum += rec.grad_map_norm;
        ++count;
        if (!row.samples_to_threshold && cum / double(count) <= threshold) {
          row.samples_to_threshold = rec.samples_used;
          row.iters_to_threshold = rec.t;
        }
      });
  row.final_running_mean = count > 0 ? cum / double(count) : 0.0;
  return row;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

}  // namespace

CompareOutcome execute_compare(const CompareConfig& cfg) {
  BuiltProblem built = build_problem(cfg.problem);

  std::vector<SolverEntry> entries = cfg.solvers;
  for (auto& entry : entries) {
    if (!entry.clip_given) {
      entry.cfg.clip = built.default_clip;
      entry.clip_given = true;
    }
    if (cfg.horizon_override > 0) entry.cfg.horizon = cfg.horizon_override;
  }

  struct Job {
    std::size_t entry;
    std::int64_t seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t e = 0; e < entries.size(); ++e)
    for (std::int64_t s = 0; s < cfg.seeds; ++s) jobs.push_back({e, s});

  std::vector<CompareRow> rows(jobs.size());
  std::atomic<std::size_t> next{0};
  const unsigned workers = std::max(1u, std::min<unsigned>(
      std::thread::hardware_concurrency(), static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
        const Job job = jobs[j];
        rows[j] = run_single(built, entries[job.entry],
                             cfg.base_seed + static_cast<std::uint64_t>(job.seed_index),
                             cfg.threshold, cfg.diagnostics);
      }
    });
  }
  for (auto& t : pool) t.join();

  CompareOutcome outcome;
  outcome.rows = rows;

  json verdict;
  verdict["threshold"] = cfg.threshold;
  verdict["seeds"] = cfg.seeds;
  json per_solver = json::array();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    std::vector<double> finals;
    std::vector<std::int64_t> samples;
    std::int64_t censored = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].entry != e) continue;
      finals.push_back(rows[j].final_running_mean);
      if (rows[j].samples_to_threshold) samples.push_back(*rows[j].samples_to_threshold);
      else ++censored;
    }
    json s;
    s["solver"] = std::string(solver_name(entries[e].kind));
    s["reached"] = samples.size();
    s["censored"] = censored;
    if (!samples.empty()) {
      std::sort(samples.begin(), samples.end());
      s["median_samples_to_threshold"] = samples[samples.size() / 2];
    } else {
      s["median_samples_to_threshold"] = nullptr;
    }
    s["final_mean"] = mean_of(finals);
    if (finals.size() >= 2) s["final_sd"] = sd_of(finals);
    else s["final_sd"] = nullptr;
    per_solver.push_back(s);
  }
  verdict["solvers"] = per_solver;

  // Seed-wise pairwise wins on samples-to-threshold (censored never wins).
  json pairs = json::array();
  for (std::size_t a = 0; a < entries.size(); ++a) {
    for (std::size_t b = a + 1; b < entries.size(); ++b) {
      std::int64_t wins_a = 0, wins_b = 0, ties = 0;
      for (std::int64_t s = 0; s < cfg.seeds; ++s) {
        const CompareRow* ra = nullptr;
        const CompareRow* rb = nullptr;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
          if (jobs[j].seed_index != s) continue;
          if (jobs[j].entry == a) ra = &rows[j];
          if (jobs[j].entry == b) rb = &rows[j];
        }
        const auto sa = ra->samples_to_threshold, sb = rb->samples_to_threshold;
        if (sa && (!sb || *sa < *sb)) ++wins_a;
        else if (sb && (!sa || *sb < *sa)) ++wins_b;
        else ++ties;
      }
      pairs.push_back({{"a", std::string(solver_name(entries[a].kind))},
                       {"b", std::string(solver_name(entries[b].kind))},
                       {"a_wins", wins_a}, {"b_wins", wins_b}, {"ties", ties}});
    }
  }
  verdict["pairwise"] = pairs;
  outcome.verdict = verdict;

  const auto dir = std::filesystem::path(default_output_dir(cfg.output.dir));
  std::filesystem::create_directories(dir);
  outcome.summary_csv = (dir / "compare_summary.csv").string();
  {
    std::ofstream out(outcome.summary_csv, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot open " + outcome.summary_csv);
    out << "solver,seed,samples_to_threshold,iters_to_threshold,final_running_mean\n";
    for (const auto& row : rows) {
      out << row.solver << ',' << row.seed << ',';
      if (row.samples_to_threshold) out << *row.samples_to_threshold;
      out << ',';
      if (row.iters_to_threshold) out << *row.iters_to_threshold;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", row.final_running_mean);
      out << ',' << buf << "\n";
    }
  }
  outcome.verdict_json = (dir / "compare_verdict.json").string();
  {
    std::ofstream out(outcome.verdict_json, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot open " + outcome.verdict_json);
    out << verdict.dump(2) << "\n";
  }
  return outcome;
}

}  // namespace bilevel
