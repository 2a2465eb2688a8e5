// Built-in numerical checks: finite-difference gradients, a brute-force NetVLAD
// reference, projection geometry and the overlap counting oracle.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xpr {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

struct SelfCheckOptions {
  std::uint64_t seed = 42;
  /// Negative control: perturbs every analytic gradient before comparison.
  bool corrupt_gradients = false;
};

/// Relative error used by the gradient checks: |a - n| / max(|a|, |n|, 1e-4).
double gradient_relative_error(double analytic, double numeric);

inline constexpr double kFiniteDifferenceStep = 1e-4;
inline constexpr double kGradientTolerance = 1e-3;

std::vector<CheckResult> check_gradients(const SelfCheckOptions& options);
CheckResult check_netvlad_reference(const SelfCheckOptions& options, int instances = 100);
CheckResult check_projection_shift(const SelfCheckOptions& options, int scenes = 20);
CheckResult check_sphere_normals(const SelfCheckOptions& options);
CheckResult check_overlap_oracle(const SelfCheckOptions& options);

/// Every check above, in a fixed order; each name appears once.
std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options);

}  // namespace xpr
