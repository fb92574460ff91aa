#pragma once

#include <stdexcept>
#include <string>

namespace dpmn {

/// Raised for problems in user-supplied data, config or spec files.
/// The CLI maps it to exit code 1; anything else is an internal failure.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dpmn
