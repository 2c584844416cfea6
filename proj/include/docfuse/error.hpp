#pragma once

#include <stdexcept>
#include <string>

namespace docfuse {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or unreadable input files; the CLI maps this to exit code 2.
struct FileError : Error {
  using Error::Error;
};

}  // namespace docfuse
