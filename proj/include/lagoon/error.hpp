#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace lagoon {

// All recoverable failures carry a stable machine-readable code next to the
// human-readable message. Codes are kebab-case and part of the public contract.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

}  // namespace lagoon
