#include "bilevel/bilevel.h"

#include <cstring>
#include <exception>
#include <string>

#include "harness.hpp"
#include "verify.hpp"

struct blo_instance {
  bilevel::InstanceVariant value;
};

namespace {

thread_local std::string g_last_error;

blo_status map_code(bilevel::ErrorCode code) {
  using bilevel::ErrorCode;
  switch (code) {
    case ErrorCode::InvalidInput:
      return BLO_ERR_INVALID_ARGUMENT;
    case ErrorCode::InvalidConfiguration:
    case ErrorCode::ParseError:
      return BLO_ERR_CONFIG;
    case ErrorCode::IoError:
      return BLO_ERR_IO;
    case ErrorCode::SymmetryViolation:
    case ErrorCode::Singularity:
    case ErrorCode::InfeasiblePoint:
    case ErrorCode::UnboundedBelow:
    case ErrorCode::NumericFailure:
      return BLO_ERR_NUMERIC;
    case ErrorCode::OracleUnavailable:
    case ErrorCode::InsufficientData:
      return BLO_ERR_UNAVAILABLE;
  }
  return BLO_ERR_INTERNAL;
}

template <typename Fn>
blo_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const bilevel::Error& e) {
    g_last_error = e.what();
    return map_code(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BLO_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return BLO_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

blo_status require(bool ok, const char* what) {
  if (ok) return BLO_OK;
  g_last_error = what;
  return BLO_ERR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* blo_version(void) { return "0.1.0"; }

const char* blo_last_error(void) { return g_last_error.c_str(); }

void blo_string_free(char* s) { std::free(s); }

blo_status blo_instance_generate(const char* family, const char* params_json,
                                 blo_instance** out) {
  if (auto st = require(family && params_json && out, "null argument")) return st;
  return guarded([&]() -> blo_status {
    bilevel::json obj{{"family", family}};
    const bilevel::json params =
        bilevel::json::parse(std::string(params_json), nullptr, false);
    if (params.is_discarded())
      bilevel::fail(bilevel::ErrorCode::ParseError, "params_json is not valid JSON");
    for (const auto& [key, value] : params.items()) obj[key] = value;
    auto built = bilevel::build_problem(bilevel::parse_problem_json(obj));
    *out = new blo_instance{std::move(built.instance)};
    return BLO_OK;
  });
}

blo_status blo_instance_load(const char* path, blo_instance** out) {
  if (auto st = require(path && out, "null argument")) return st;
  return guarded([&]() -> blo_status {
    *out = new blo_instance{bilevel::load_instance(path)};
    return BLO_OK;
  });
}

blo_status blo_instance_save(const blo_instance* inst, const char* path) {
  if (auto st = require(inst && path, "null argument")) return st;
  return guarded([&]() -> blo_status {
    bilevel::save_instance(path, inst->value);
    return BLO_OK;
  });
}

blo_status blo_instance_summary(const blo_instance* inst, char** out_json) {
  if (auto st = require(inst && out_json, "null argument")) return st;
  return guarded([&]() -> blo_status {
    *out_json = dup_string(bilevel::instance_summary(inst->value).dump());
    return BLO_OK;
  });
}

blo_status blo_instance_dims(const blo_instance* inst, int64_t* d, int64_t* p) {
  if (auto st = require(inst && d && p, "null argument")) return st;
  return guarded([&]() -> blo_status {
    if (const auto* g = std::get_if<bilevel::PLGameInstance>(&inst->value)) {
      *d = g->d;
      *p = g->d;
    } else if (const auto* s =
                   std::get_if<bilevel::MatrixSensingInstance>(&inst->value)) {
      *d = s->d * (s->r - 1);
      *p = s->d;
    } else {
      const auto& q = std::get<bilevel::QuadOracleInstance>(inst->value);
      *d = q.d;
      *p = q.p;
    }
    return BLO_OK;
  });
}

void blo_instance_free(blo_instance* inst) { delete inst; }

blo_status blo_run(const char* config_json, char** out_summary_json) {
  if (auto st = require(config_json != nullptr, "null argument")) return st;
  return guarded([&]() -> blo_status {
    const bilevel::RunConfigFile cfg = bilevel::parse_config(config_json);
    const bilevel::RunArtifacts art = bilevel::execute_run(cfg);

    if (out_summary_json) {
      bilevel::json summary;
      summary["trace_csv"] = art.trace_csv;
      summary["header_json"] = bilevel::trace_header_path(art.trace_csv);
      summary["rows"] = art.trace.rows.size();
      summary["warnings"] = art.result.warnings;
      summary["output_index"] = art.result.output_index;
      const auto& rows = art.trace.rows;
      if (!rows.empty()) {
        summary["final_grad_map_norm"] = rows.back().grad_map_norm;
        double cum = 0.0;
        for (const auto& r : rows) cum += r.grad_map_norm;
        summary["final_running_mean"] = cum / double(rows.size());
        summary["samples_used"] = rows.back().samples_used;
      }
      if (art.result.failed_iteration)
        summary["failed_iteration"] = *art.result.failed_iteration;
      *out_summary_json = dup_string(summary.dump());
    }
    if (art.result.failed_iteration) {
      g_last_error = "iterate went non-finite at iteration " +
                     std::to_string(*art.result.failed_iteration) +
                     "; partial trace written to " + art.trace_csv;
      return BLO_ERR_NUMERIC;
    }
    return BLO_OK;
  });
}

blo_status blo_verify(const char* suite, uint64_t seed, char** out_report_json) {
  if (auto st = require(suite && out_report_json, "null argument")) return st;
  return guarded([&]() -> blo_status {
    const auto results = bilevel::run_verify_suite(suite, seed);
    bilevel::json report;
    report["suite"] = suite;
    report["seed"] = seed;
    bilevel::json items = bilevel::json::array();
    for (const auto& r : results)
      items.push_back({{"name", r.name}, {"pass", r.pass}, {"measured", r.measured},
                       {"tolerance", r.tolerance}});
    report["results"] = items;
    report["all_pass"] = bilevel::all_pass(results);
    *out_report_json = dup_string(report.dump());
    return BLO_OK;
  });
}

blo_status blo_compare(const char* config_json, char** out_summary_json) {
  if (auto st = require(config_json != nullptr, "null argument")) return st;
  return guarded([&]() -> blo_status {
    const bilevel::CompareConfig cfg = bilevel::parse_compare_config(config_json);
    const bilevel::CompareOutcome outcome = bilevel::execute_compare(cfg);
    if (out_summary_json) {
      bilevel::json summary = outcome.verdict;
      summary["summary_csv"] = outcome.summary_csv;
      summary["verdict_json"] = outcome.verdict_json;
      *out_summary_json = dup_string(summary.dump());
    }
    return BLO_OK;
  });
}

blo_status blo_fit_rate(const char* trace_csv_path, const char* metric,
                        int64_t t_lo, int64_t t_hi, double* out_slope,
                        double* out_r2) {
  if (auto st = require(trace_csv_path && metric && out_slope && out_r2,
                        "null argument"))
    return st;
  return guarded([&]() -> blo_status {
    const bilevel::TraceFile trace = bilevel::read_trace(trace_csv_path);
    const bilevel::RateFit fit = bilevel::fit_rate(trace.rows, metric, t_lo, t_hi);
    *out_slope = fit.slope;
    *out_r2 = fit.r2;
    return BLO_OK;
  });
}

}  // extern "C"
