#pragma once

#include <stdexcept>
#include <string>

namespace aisle {

/// Raised when an argument violates an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace aisle
