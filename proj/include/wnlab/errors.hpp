#pragma once

#include <stdexcept>
#include <string>

namespace wnlab {

// Violation of a module invariant audit (attack budget, report bounds).
// Distinguished from plain runtime errors for the CLI exit code.
struct AuditError : std::runtime_error {
  explicit AuditError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace wnlab
