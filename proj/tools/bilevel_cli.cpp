// Command-line front end; all functionality flows through the shared
// library's C API (bilevel/bilevel.h).

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bilevel/bilevel.h"

namespace {

using nlohmann::json;

// Exit-code contract: 0 success, 2 usage/config, 3 numeric failure.
int exit_code_for(blo_status status) {
  switch (status) {
    case BLO_OK:
      return 0;
    case BLO_ERR_INVALID_ARGUMENT:
    case BLO_ERR_CONFIG:
    case BLO_ERR_IO:
    case BLO_ERR_UNAVAILABLE:
      return 2;
    case BLO_ERR_NUMERIC:
      return 3;
    default:
      return 1;
  }
}

int report_failure(blo_status status) {
  std::fprintf(stderr, "error: %s\n", blo_last_error());
  return exit_code_for(status);
}

std::string take_string(char* owned) {
  std::string out = owned ? owned : "";
  blo_string_free(owned);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct GenFlags {
  std::int64_t d = 50, l = 48, n = 2500, r = 3, p = 10;
  double mu = 1.0, lg = 4.0;
  std::uint64_t seed = 0;
  bool range_compatible = false;
  std::string out;
};

int run_gen(const std::string& family, const GenFlags& flags) {
  json params;
  params["seed"] = flags.seed;
  if (family == "plgame") {
    params["d"] = flags.d;
    params["l"] = flags.l;
    params["n"] = flags.n;
    params["mu"] = flags.mu;
    params["lg"] = flags.lg;
    if (flags.range_compatible) params["range_compatible"] = true;
  } else if (family == "sensing") {
    params["d"] = flags.d;
    params["r"] = flags.r;
  } else {
    params["d"] = flags.d;
    params["p"] = flags.p;
    params["mu"] = flags.mu;
    params["lg"] = flags.lg;
  }

  blo_instance* inst = nullptr;
  blo_status st = blo_instance_generate(family.c_str(), params.dump().c_str(), &inst);
  if (st != BLO_OK) return report_failure(st);
  st = blo_instance_save(inst, flags.out.c_str());
  if (st != BLO_OK) {
    blo_instance_free(inst);
    return report_failure(st);
  }
  char* summary = nullptr;
  st = blo_instance_summary(inst, &summary);
  blo_instance_free(inst);
  if (st != BLO_OK) return report_failure(st);
  std::printf("wrote %s\n%s\n", flags.out.c_str(),
              json::parse(take_string(summary)).dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Momentum-based bilevel optimization toolkit"};
  app.require_subcommand(1);

  // --- gen ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "Generate a problem instance file");
  gen->require_subcommand(1);
  GenFlags gf;
  std::string gen_family;
  for (const char* family : {"plgame", "sensing", "quad"}) {
    auto* sub = gen->add_subcommand(family);
    sub->add_option("--d", gf.d, "upper/problem dimension");
    if (std::string(family) == "plgame") {
      sub->add_option("--l", gf.l, "covariance rank (< d)");
      sub->add_option("--n", gf.n, "sample count");
      sub->add_option("--mu", gf.mu, "spectrum interval floor");
      sub->add_option("--lg", gf.lg, "spectrum interval ceiling");
      sub->add_flag("--range-compatible", gf.range_compatible,
                    "keep the lower level bounded for every x");
    } else if (std::string(family) == "sensing") {
      sub->add_option("--r", gf.r, "factor rank");
    } else {
      sub->add_option("--p", gf.p, "lower dimension");
      sub->add_option("--mu", gf.mu, "lower Hessian spectrum floor");
      sub->add_option("--lg", gf.lg, "lower Hessian spectrum ceiling");
    }
    sub->add_option("--seed", gf.seed, "generation seed");
    sub->add_option("--out", gf.out, "output instance file")->required();
    sub->callback([family, &gen_family] { gen_family = family; });
  }

  // --- run ---------------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run", "Run a configured solve");
  std::string run_config;
  run_cmd->add_option("config", run_config, "run-config JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  std::int64_t ov_seed = -1, ov_horizon = -1;
  std::string ov_solver, ov_out, ov_problem;
  bool ov_gnuplot = false;
  run_cmd->add_option("--seed", ov_seed, "override solver seed");
  run_cmd->add_option("--T", ov_horizon, "override iteration count");
  run_cmd->add_option("--solver", ov_solver, "override solver name");
  run_cmd->add_option("--out", ov_out, "override output directory");
  run_cmd->add_option("--problem", ov_problem, "override with an instance file");
  run_cmd->add_flag("--gnuplot", ov_gnuplot, "also emit a gnuplot script");

  // --- verify ------------------------------------------------------------
  auto* verify_cmd = app.add_subcommand("verify", "Run a property suite");
  std::string suite;
  std::uint64_t verify_seed = 1;
  verify_cmd->add_option("suite", suite,
                         "spectral | derivatives | hypergrad | lemma3 | lyapunov | bounds")
      ->required();
  verify_cmd->add_option("--seed", verify_seed, "suite seed");

  // --- compare -----------------------------------------------------------
  auto* compare_cmd = app.add_subcommand("compare", "Compare solvers over seeds");
  std::string compare_config;
  compare_cmd->add_option("config", compare_config, "compare-config JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  std::int64_t cmp_seeds = -1, cmp_horizon = -1;
  double cmp_threshold = -1.0;
  std::string cmp_out;
  compare_cmd->add_option("--seeds", cmp_seeds, "override seed count");
  compare_cmd->add_option("--T", cmp_horizon, "override iteration count");
  compare_cmd->add_option("--threshold", cmp_threshold, "override stationarity threshold");
  compare_cmd->add_option("--out", cmp_out, "override output directory");

  // --- rates -------------------------------------------------------------
  auto* rates_cmd = app.add_subcommand("rates", "Fit log-log convergence slopes");
  std::vector<std::string> rate_traces;
  std::string rate_metric = "grad_map_norm";
  std::int64_t rate_lo = 100, rate_hi = 10000;
  double rate_theory = 0.0;
  bool rate_theory_set = false;
  rates_cmd->add_option("traces", rate_traces, "trace CSV file(s)")
      ->required()
      ->check(CLI::ExistingFile);
  rates_cmd->add_option("--metric", rate_metric, "trace column to fit");
  rates_cmd->add_option("--t-lo", rate_lo, "window start (iteration)");
  rates_cmd->add_option("--t-hi", rate_hi, "window end (iteration)");
  rates_cmd->add_option("--theory", rate_theory, "theory slope to flag against")
      ->each([&](const std::string&) { rate_theory_set = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) return run_gen(gen_family, gf);

  if (run_cmd->parsed()) {
    json config = json::parse(read_file(run_config), nullptr, false);
    if (config.is_discarded()) {
      std::fprintf(stderr, "error: %s is not valid JSON\n", run_config.c_str());
      return 2;
    }
    // A trace header embeds its config; accept it directly.
    if (config.contains("config")) config = config["config"];
    if (ov_seed >= 0) config["solver"]["seed"] = ov_seed;
    if (ov_horizon > 0) config["solver"]["T"] = ov_horizon;
    if (!ov_solver.empty()) config["solver"]["name"] = ov_solver;
    if (!ov_out.empty()) config["output"]["dir"] = ov_out;
    if (!ov_problem.empty()) config["problem"] = {{"path", ov_problem}};
    if (ov_gnuplot) config["output"]["formats"] = {"csv", "gnuplot"};

    char* summary_raw = nullptr;
    const blo_status st = blo_run(config.dump().c_str(), &summary_raw);
    const std::string summary_text = take_string(summary_raw);
    if (!summary_text.empty()) {
      const json summary = json::parse(summary_text);
      std::printf("trace: %s\n", summary["trace_csv"].get<std::string>().c_str());
      // non-finite metrics serialize as null; skip them
      if (summary.contains("final_grad_map_norm") &&
          summary["final_grad_map_norm"].is_number() &&
          summary["final_running_mean"].is_number())
        std::printf("final grad_map_norm: %.6g  running mean: %.6g  samples: %" PRId64
                    "\n",
                    summary["final_grad_map_norm"].get<double>(),
                    summary["final_running_mean"].get<double>(),
                    summary["samples_used"].get<std::int64_t>());
      for (const auto& w : summary["warnings"])
        std::printf("warning: %s\n", w.get<std::string>().c_str());
      if (summary.contains("failed_iteration"))
        std::printf("numeric failure at iteration %" PRId64 " (partial trace)\n",
                    summary["failed_iteration"].get<std::int64_t>());
    }
    if (st != BLO_OK) return report_failure(st);
    return 0;
  }

  if (verify_cmd->parsed()) {
    char* report_raw = nullptr;
    const blo_status st = blo_verify(suite.c_str(), verify_seed, &report_raw);
    if (st != BLO_OK) return report_failure(st);
    const json report = json::parse(take_string(report_raw));
    bool all = true;
    for (const auto& item : report["results"]) {
      const bool pass = item["pass"].get<bool>();
      all = all && pass;
      std::printf("%s  %s  (measured %.3e, tolerance %.3e)\n",
                  pass ? "PASS" : "FAIL", item["name"].get<std::string>().c_str(),
                  item["measured"].get<double>(), item["tolerance"].get<double>());
    }
    std::printf("%s: %s\n", suite.c_str(), all ? "all properties hold" : "FAILURES");
    return all ? 0 : 1;
  }

  if (compare_cmd->parsed()) {
    json config = json::parse(read_file(compare_config), nullptr, false);
    if (config.is_discarded()) {
      std::fprintf(stderr, "error: %s is not valid JSON\n", compare_config.c_str());
      return 2;
    }
    if (cmp_seeds > 0) config["seeds"] = cmp_seeds;
    if (cmp_horizon > 0) config["T"] = cmp_horizon;
    if (cmp_threshold > 0) config["threshold"] = cmp_threshold;
    if (!cmp_out.empty()) config["output"]["dir"] = cmp_out;

    char* summary_raw = nullptr;
    const blo_status st = blo_compare(config.dump().c_str(), &summary_raw);
    if (st != BLO_OK) return report_failure(st);
    const json summary = json::parse(take_string(summary_raw));
    std::printf("%-12s %8s %8s %22s %14s %14s\n", "solver", "reached", "censored",
                "median_samples", "final_mean", "final_sd");
    for (const auto& s : summary["solvers"]) {
      const auto median = s["median_samples_to_threshold"];
      const auto sd = s["final_sd"];
      std::printf("%-12s %8" PRId64 " %8" PRId64 " %22s %14.6g %14s\n",
                  s["solver"].get<std::string>().c_str(),
                  s["reached"].get<std::int64_t>(), s["censored"].get<std::int64_t>(),
                  median.is_null() ? "censored" : median.dump().c_str(),
                  s["final_mean"].get<double>(),
                  sd.is_null() ? "" : sd.dump().c_str());
    }
    for (const auto& pair : summary["pairwise"])
      std::printf("%s vs %s: %" PRId64 "-%" PRId64 " (ties %" PRId64 ")\n",
                  pair["a"].get<std::string>().c_str(),
                  pair["b"].get<std::string>().c_str(),
                  pair["a_wins"].get<std::int64_t>(),
                  pair["b_wins"].get<std::int64_t>(), pair["ties"].get<std::int64_t>());
    std::printf("summary: %s\nverdict: %s\n",
                summary["summary_csv"].get<std::string>().c_str(),
                summary["verdict_json"].get<std::string>().c_str());
    return 0;
  }

  if (rates_cmd->parsed()) {
    int worst = 0;
    for (const auto& path : rate_traces) {
      double slope = 0, r2 = 0;
      const blo_status st =
          blo_fit_rate(path.c_str(), rate_metric.c_str(), rate_lo, rate_hi, &slope, &r2);
      if (st != BLO_OK) return report_failure(st);
      std::printf("%s: slope %.4f  r2 %.4f", path.c_str(), slope, r2);
      if (rate_theory_set) {
        const bool ok = slope <= rate_theory + 0.1;
        std::printf("  [%s vs theory %.2f]", ok ? "PASS" : "FLAG", rate_theory);
        if (!ok) worst = 1;
      }
      std::printf("\n");
    }
    return worst;
  }

  return 2;
}
