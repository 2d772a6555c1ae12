#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scanet {

// Base for everything thrown by the library. CLI maps these to exit code 2.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not fit the operation (e.g. matmul inner dims disagree).
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A configuration value is inconsistent (bad token grid, D % H != 0, ...).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// A caller-supplied argument violates a precondition.
struct ArgumentError : Error {
    explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

// Non-finite values reached a numeric kernel.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed on-disk artifact; byte_offset points at the first bad byte.
struct FormatError : Error {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Metric is mathematically undefined for the given inputs (single-class AUC).
struct MetricError : Error {
    explicit MetricError(const std::string& msg) : Error(msg) {}
};

// File or directory could not be opened, read, or written.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// A class has too few members to fill every fold.
struct StratificationError : Error {
    explicit StratificationError(const std::string& msg) : Error(msg) {}
};

}  // namespace scanet
