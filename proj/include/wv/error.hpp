#pragma once

#include <stdexcept>
#include <string>

namespace wv {

// Every error thrown by the library derives from Error so callers (the CLI in
// particular) can map library failures to a data/contract exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range head, location or element index.
class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace wv
