#pragma once

#include <cstdint>
#include <optional>

namespace bilevel {

// One per-iteration metrics row. Optional fields are present only when a
// truth oracle is available and the row falls on the diagnostics stride.
struct TraceRecord {
  std::int64_t t = 0;
  double eta = 0.0;
  double grad_map_norm = 0.0;               // ||G(x_t, w_t, gamma)||
  std::optional<double> true_grad_norm;     // ||grad F(x_t)||
  std::optional<double> hyper_err;          // ||w_t - grad F(x_t)||
  double f_val = 0.0;                       // f(x_t, y_t)
  std::optional<double> g_gap;              // g(x_t, y_t) - G(x_t)
  std::optional<double> lyapunov;
  std::int64_t samples_used = 0;
  std::int64_t wall_nanos = 0;

  bool operator==(const TraceRecord&) const = default;
};

}  // namespace bilevel
