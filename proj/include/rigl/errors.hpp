#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rigl {

// Invalid architecture or layer wiring.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller supplied an out-of-range or inconsistent argument.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operation called in the wrong order (e.g. backward before forward).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed dataset or checkpoint file.
struct FormatError : std::runtime_error {
    FormatError(const std::string& what, std::size_t byte_offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Training diverged.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rigl
