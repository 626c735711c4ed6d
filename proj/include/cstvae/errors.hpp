#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cstvae {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape / axis mismatches. Messages name both shapes.
struct DimensionError : Error {
    using Error::Error;
};

// log of a non-positive value, exp overflow and friends.
struct NumericDomainError : Error {
    using Error::Error;
};

// A precondition stated by an operation's contract was violated.
struct ContractError : Error {
    using Error::Error;
};

// Affine transform with |det| below the invertibility threshold.
struct SingularTransformError : Error {
    SingularTransformError(const std::string& msg, double det,
                           std::vector<std::int64_t> batch_rows = {})
        : Error(msg), determinant(det), rows(std::move(batch_rows)) {}
    double determinant;
    std::vector<std::int64_t> rows;  // offending minibatch rows, when batched
};

// Malformed input file; offset points at the offending byte.
struct FormatError : Error {
    FormatError(const std::string& msg, std::size_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    std::size_t byte_offset;
};

struct ConfigError : Error {
    using Error::Error;
};

// Non-finite loss or gradient during optimization.
struct DivergenceError : Error {
    DivergenceError(const std::string& msg, std::string param)
        : Error(msg), parameter(std::move(param)) {}
    std::string parameter;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace cstvae
