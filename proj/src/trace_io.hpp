#pragma once

#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "diagnostics.hpp"

namespace bilevel {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration (JSON text <-> structured form with defaults filled).
// ---------------------------------------------------------------------------

struct ProblemConfig {
  std::string family;  // "plgame" | "sensing" | "quad"; empty when loading
  std::string path;    // instance file; empty when generating
  PLGameParams plgame;
  MatrixSensingParams sensing;
  QuadGenParams quad;
};

struct SolverEntry {
  SolverKind kind = SolverKind::Mgbio;
  SolverConfig cfg;
  bool clip_given = false;  // false: derive the clip radii from the problem
};

struct DiagnosticsConfig {
  std::int64_t diag_stride = 10;
  std::optional<bool> oracle;  // default: on except for matrix sensing
};

struct OutputConfig {
  std::string dir;  // empty: $BLO_OUT_DIR or "out"
  std::vector<std::string> formats = {"csv"};
};

struct RunConfigFile {
  ProblemConfig problem;
  SolverEntry solver;
  DiagnosticsConfig diagnostics;
  OutputConfig output;
};

// Strict parse: unknown keys are rejected with their JSON-pointer location;
// defaults are filled. Referenced instance files must exist.
RunConfigFile parse_config(const std::string& text);
json emit_config(const RunConfigFile& cfg);

// The "problem" object alone, same strictness.
ProblemConfig parse_problem_json(const json& obj);

// Multi-solver comparison config: one shared problem, >= 2 solver entries.
struct CompareConfig {
  ProblemConfig problem;
  std::vector<SolverEntry> solvers;
  std::int64_t seeds = 10;
  std::uint64_t base_seed = 0;
  double threshold = 1e-2;  // on the running mean of grad_map_norm
  std::int64_t horizon_override = 0;
  DiagnosticsConfig diagnostics;
  OutputConfig output;
};

CompareConfig parse_compare_config(const std::string& text);

// ---------------------------------------------------------------------------
// Trace files: CSV body plus JSON sidecar header ("<base>.header.json").
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceColumns =
    "t,eta,grad_map_norm,true_grad_norm,hyper_err,f_val,g_gap,lyapunov,"
    "samples_used,wall_nanos";

struct TraceFile {
  json header;
  std::vector<TraceRecord> rows;
};

void write_trace(const std::string& csv_path, const TraceFile& trace);
TraceFile read_trace(const std::string& csv_path);
std::string trace_header_path(const std::string& csv_path);

// ---------------------------------------------------------------------------
// Instance container: "BLOINST1" magic, JSON manifest, packed f64 payload.
// ---------------------------------------------------------------------------

using InstanceVariant =
    std::variant<PLGameInstance, MatrixSensingInstance, QuadOracleInstance>;

void save_instance(const std::string& path, const InstanceVariant& inst);
InstanceVariant load_instance(const std::string& path);
std::string instance_family(const InstanceVariant& inst);
json instance_summary(const InstanceVariant& inst);

// ---------------------------------------------------------------------------
// Report serialization.
// ---------------------------------------------------------------------------

json constants_report_to_json(const ConstantsReport& report);

}  // namespace bilevel
