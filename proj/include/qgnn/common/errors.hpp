#pragma once

#include <stdexcept>
#include <string>

namespace qgnn {

// Malformed wire bytes (bad chunk header, truncated payload, index mismatch).
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Devices disagree on shared state (plan versions, payload routing, buffer sizes).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An exact algorithm was asked to run past its intended instance size.
class ResourceLimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be read, written, or parsed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qgnn
