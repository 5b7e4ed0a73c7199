#pragma once

#include <stdexcept>
#include <string>

namespace qfam {

// Exception carrying a module-specific error code. Each module declares its
// own enum and an alias, e.g. `using TokenError = CodedError<TokenErrc>`.
template <class Code>
class CodedError : public std::runtime_error {
 public:
  CodedError(Code code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

enum class ConfigErrc { kInvalidValue, kMissingField, kParse, kIo };
using ConfigError = CodedError<ConfigErrc>;

}  // namespace qfam
