#pragma once

#include <stdexcept>
#include <string>

namespace tmpa {

// Thrown when an operation is called outside its contract (bad shapes,
// out-of-range labels, indivisible dimensions, ...). The CLI maps this
// to exit code 1.
class ContractViolation : public std::runtime_error {
 public:
  explicit ContractViolation(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] void contract_fail(const char* cond, const char* file, int line,
                                const std::string& msg);

}  // namespace tmpa

#define TMPA_CHECK(cond, msg)                                      \
  do {                                                             \
    if (!(cond)) ::tmpa::contract_fail(#cond, __FILE__, __LINE__, (msg)); \
  } while (0)
