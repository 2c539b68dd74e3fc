#include "tmpa/check.hpp"

#include <sstream>

namespace tmpa {

void contract_fail(const char* cond, const char* file, int line, const std::string& msg) {
  std::ostringstream os;
  os << "contract violation: " << msg << " [" << cond << " failed at " << file << ":" << line
     << "]";
  throw ContractViolation(os.str());
}

}  // namespace tmpa
