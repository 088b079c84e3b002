#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mspn {

// Bad user input: malformed datasets, unusable flags, invalid configurations.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input image narrower than the convolution chain accepts.
struct MinWidthError : std::runtime_error {
  MinWidthError(int got, int min_w)
      : std::runtime_error("input width " + std::to_string(got) +
                           " is below the minimum acceptable width " +
                           std::to_string(min_w)),
        width(got),
        min_width(min_w) {}
  int width;
  int min_width;
};

// Corrupt, truncated or incompatible checkpoint file.
struct CheckpointError : std::runtime_error {
  CheckpointError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

// Filesystem trouble: unreadable inputs, unwritable outputs.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller broke an API contract. Signals a bug, not bad user input.
struct ContractViolation : std::logic_error {
  explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace mspn
