#pragma once

#include <string>
#include <vector>

#include "harness.hpp"

namespace bilevel {

struct PropertyResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;   // worst observed value of the checked quantity
  double tolerance = 0.0;  // bound it must respect
};

// Suites: spectral, derivatives, hypergrad, lemma3, lyapunov, bounds.
std::vector<std::string> verify_suite_names();
std::vector<PropertyResult> run_verify_suite(std::string_view suite,
                                             std::uint64_t seed);

bool all_pass(const std::vector<PropertyResult>& results);

}  // namespace bilevel
