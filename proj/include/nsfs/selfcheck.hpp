#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace nsfs {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick oracle and invariant battery (a few seconds): EM identities, quadrature
/// drift vs closed form, gradient checks for the drift net, every model and the
/// objective, the Gaussian-prior reduction, minibatch unbiasedness, Adam and the
/// zero-init Brownian law.
std::vector<CheckResult> run_selfcheck();

/// Prints one PASS/FAIL line per check; returns true when all passed.
bool print_selfcheck(const std::vector<CheckResult>& results, std::ostream& out);

}  // namespace nsfs
