#pragma once

#include <string>

namespace acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Defined in the double-precision translation unit.
Outcome gradient_check();
Outcome decay_contraction();

}  // namespace acceptance
