#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "topodelin/trainer.hpp"

namespace topodelin {

struct GradcheckResult {
  std::string name;
  /// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖) over the probed coordinates.
  double error = 0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckResult> checks;
  double tolerance = 1e-4;
  bool passed() const;
  const GradcheckResult& worst() const;
  /// One line per check plus a summary line; contains no timing.
  std::string text() const;
};

/// Central finite differences against reverse-mode gradients for every layer
/// primitive, the network, and each loss, on random instances of at most
/// 16x16 pixels. Double precision is the reference; single precision is
/// expected to exceed the tolerance on some checks.
GradcheckReport run_gradcheck(std::uint64_t seed, Precision precision = Precision::double_, double tolerance = 1e-4);

}  // namespace topodelin
