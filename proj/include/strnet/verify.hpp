#pragma once

// Property suite behind `strnet check`: naive-oracle equivalence, identity and
// degenerate cases, and finite-difference gradient checks.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace strnet::verify {

struct CheckResult {
  std::string group;  // oracle, identity, gradient, navsim, heads, config
  std::string name;
  double tolerance = 0;
  double measured = 0;
  bool passed = false;
  std::vector<std::string> ops;  // operations exercised
  std::string detail;
};

struct SuiteOptions {
  std::size_t oracle_instances = 20;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Random coordinates per tensor in the block-level gradient checks (0 = all).
  std::size_t coords_per_tensor = 12;
  /// Name of a primitive whose backward is replaced by a wrong one; empty for none.
  std::string inject_fault;
  std::size_t navsim_worlds = 100;
  /// When set, only checks whose name contains this text are kept, and the
  /// coverage requirement is not enforced.
  std::string filter;
};

/// Operations the suite must exercise; the report lists any left uncovered.
const std::vector<std::string>& required_ops();

/// Primitive names accepted by SuiteOptions::inject_fault.
const std::vector<std::string>& fault_targets();

std::vector<CheckResult> oracle_checks(const SuiteOptions& opts);
std::vector<CheckResult> identity_checks(const SuiteOptions& opts);
std::vector<CheckResult> gradient_checks(const SuiteOptions& opts);
/// Block and end-to-end gradients only (A = 8, T = 3, batch 2).
std::vector<CheckResult> block_gradient_checks(const SuiteOptions& opts);
std::vector<CheckResult> navsim_checks(const SuiteOptions& opts);
std::vector<CheckResult> head_checks(const SuiteOptions& opts);

struct SuiteReport {
  std::vector<CheckResult> checks;
  std::vector<std::string> uncovered;
  bool passed() const;
};

SuiteReport run_suite(const SuiteOptions& opts);

/// One line per check: status, group/name, tolerance, measured error.
std::string format_report(const SuiteReport& report);

}  // namespace strnet::verify
