#pragma once

#include <stdexcept>
#include <string>

namespace ditsinger {

// Broken precondition: bad shapes, out-of-range ids, malformed spans.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChecksumMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint and score/corpus disagree on bins, hop, vocabulary, ...
class GeometryMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DS_REQUIRE(cond, msg)                                            \
  do {                                                                   \
    if (!(cond)) throw ::ditsinger::ContractViolation(std::string(msg)); \
  } while (0)

}  // namespace ditsinger
