#ifndef FEDLITE_ERRORS_H_
#define FEDLITE_ERRORS_H_

#include <stdexcept>
#include <string>

namespace fedlite {

// Root of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor codec.
class MalformedTensor : public Error {
 public:
  using Error::Error;
};

class UnsupportedDtype : public Error {
 public:
  using Error::Error;
};

// Raised when tensors do not line up: an invalid MLP chain, or models with
// differing tensor lists handed to aggregation.
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class MissingModel : public Error {
 public:
  explicit MissingModel(std::string id)
      : Error("no stored model for learner '" + id + "'"), id_(std::move(id)) {}
  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

// Wire protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class TruncatedFrame : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class UnknownMessageType : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class MalformedPayload : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class OversizeMessage : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// Transport.
class TransportError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

// Metrics / bench.
class IncompleteRound : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

// Configuration files and command-line settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Driver lifecycle.
class StartupFailure : public Error {
 public:
  StartupFailure(std::string component, const std::string& why)
      : Error("startup failure (" + component + "): " + why),
        component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

class IoFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace fedlite

#endif  // FEDLITE_ERRORS_H_
