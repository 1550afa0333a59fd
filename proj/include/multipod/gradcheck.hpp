#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "multipod/model.hpp"

namespace multipod {

struct GradCheckOptions {
  int pods = 3;
  int blocks_per_stage = 1;
  int size = 8;
  int batch = 2;
  int classes = 10;
  Fusion fusion = Fusion::Concat;
  CombineMode combine_mode = CombineMode::Sum;
  double step = 1e-5;
  /// Entry error is |a - n| / max(|a|, |n|, abs_floor / kReferenceTolerance)
  /// and must be strictly below `tolerance`. At the reference tolerance this
  /// is relative error with absolute differences under abs_floor accepted;
  /// the floor shrinks with the tolerance, so 0 demands exact agreement.
  static constexpr double kReferenceTolerance = 1e-5;
  double tolerance = kReferenceTolerance;
  double abs_floor = 1e-8;
  std::uint64_t seed = 0;
  /// Routes pod 0 features through an identity whose backward is scaled by
  /// 1.001; every pod 0 parameter must then be reported.
  bool fault_injection = false;
  /// 0 checks every scalar; otherwise at most this many evenly spaced
  /// entries per parameter tensor.
  std::size_t max_entries_per_param = 0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t params = 0;
  double worst_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  /// Plain |a - n| / max(|a|, |n|) maxima, for diagnostics.
  double worst_relative = 0.0;
  double worst_absolute = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::string> failed_params;

  bool passed() const { return failed == 0; }
};

/// Central finite differences of the mean cross-entropy of a random 64-bit
/// model against its reverse-mode gradient. Batch norm runs in training
/// mode. Perturbing a parameter replays only the stages downstream of it.
GradCheckReport run_gradcheck(const GradCheckOptions& opts);

}  // namespace multipod
