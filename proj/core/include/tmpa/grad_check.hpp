#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tmpa/ops.hpp"

namespace tmpa {

// Finite-difference gradient checking. `f` rebuilds the scalar computation on
// the given tape from one leaf per input, in order, so it must be
// deterministic and free of external state.
struct GradCheckInput {
  std::string name;
  Tensor value;
};

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  std::vector<Entry> entries;
  double tol = 0.0;
  bool passed = false;

  std::string summary() const;
};

using GradCheckFn = std::function<Value(Tape&, const std::vector<Value>&)>;

// Compares backprop gradients against central differences (f(x+h)-f(x-h))/2h
// elementwise. Relative error uses |a-b| / max(|a|,|b|,1e-4) so that
// near-zero gradients are compared absolutely at 1e-4 scale.
GradCheckReport grad_check(const GradCheckFn& f, std::vector<GradCheckInput> inputs,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace tmpa
