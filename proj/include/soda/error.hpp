#pragma once

#include <stdexcept>
#include <string>

namespace soda {

// Exit-code mapping used by the CLI: InvalidInput -> 2, NumericalAbort -> 3,
// IoError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

// AUC is undefined when only one class is present.
class UndefinedAuc : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class NumericalAbort : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace soda
