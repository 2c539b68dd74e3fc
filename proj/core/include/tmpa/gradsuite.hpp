#pragma once

#include <ostream>

#include "tmpa/grad_check.hpp"

namespace tmpa {

// Finite-difference verification of every differentiable primitive plus the
// full training objective on a two-identity micro-batch. Central differences
// with h=1e-5 against tolerance 1e-4.
struct GradSuiteResult {
  struct Item {
    std::string name;
    double max_rel_err = 0.0;
    bool passed = false;
  };
  std::vector<Item> items;
  bool passed = false;
};

GradSuiteResult run_gradient_suite();
void print_gradient_suite(const GradSuiteResult& r, std::ostream& out);

}  // namespace tmpa
