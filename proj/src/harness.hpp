#pragma once

#include "trace_io.hpp"

namespace bilevel {

// A configured problem ready to run: the oracle, its source instance, the
// default clip radii for configs that omit them, and the closed-form
// hyper-gradient when the family has one.
struct BuiltProblem {
  std::shared_ptr<const BilevelOracle> oracle;
  InstanceVariant instance;
  std::string family;
  ClipSpec default_clip;
  std::function<Vec(const Vec&)> true_hypergradient;  // quad only
  bool oracle_diag_default = true;
};

BuiltProblem build_problem(const ProblemConfig& pc);

// Problem constants assembled from the clip radii (assumed constants) and the
// oracle's measured smoothness moduli.
ProblemConstants constants_from(const BilevelOracle& oracle, const ClipSpec& clip);

std::string default_output_dir(const std::string& configured);

// Run one configured solve and write the trace (CSV + header sidecar, plus an
// optional gnuplot script). Serialized wall_nanos are zeroed so that identical
// (config, seed) yield byte-identical files.
struct RunArtifacts {
  std::string trace_csv;
  TraceFile trace;
  RunResult result;
  SolverEntry resolved;    // clip radii filled in
  ConstantsReport constants;
};

RunArtifacts execute_run(const RunConfigFile& cfg);

// Multi-seed solver comparison on one shared problem instance. Seeds run in a
// small worker pool; files are written by the collector thread.
struct CompareRow {
  std::string solver;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> samples_to_threshold;
  std::optional<std::int64_t> iters_to_threshold;
  double final_running_mean = 0.0;
};

struct CompareOutcome {
  std::vector<CompareRow> rows;
  json verdict;
  std::string summary_csv;   // written file paths
  std::string verdict_json;
};

CompareOutcome execute_compare(const CompareConfig& cfg);

}  // namespace bilevel
