// Self-check property suite shared by `ittr verify` and the acceptance runner.
#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace ittr::app {

struct PropertyResult {
  std::string group;
  std::string name;
  std::string tolerance;  // human-readable bound, e.g. "< 1e-5"
  double measured = 0.0;
  bool pass = false;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  bool break_l2norm = false;  // feed raw Q/K to the factored scores (negative control)
};

std::vector<PropertyResult> factorization_properties(const SuiteOptions& opts);
std::vector<PropertyResult> oracle_properties(const SuiteOptions& opts);
std::vector<PropertyResult> logit_range_properties(const SuiteOptions& opts);
std::vector<PropertyResult> complexity_properties(const SuiteOptions& opts);
std::vector<PropertyResult> gradient_properties(const SuiteOptions& opts);
std::vector<PropertyResult> objective_properties(const SuiteOptions& opts);
std::vector<PropertyResult> frechet_properties(const SuiteOptions& opts);

std::vector<PropertyResult> run_property_suite(const SuiteOptions& opts);

bool all_pass(const std::vector<PropertyResult>& results);
void print_table(std::ostream& os, const std::vector<PropertyResult>& results);

}  // namespace ittr::app
