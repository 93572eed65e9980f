#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdistill {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes, bad axes, windows larger than inputs.
struct ShapeError : Error {
    using Error::Error;
};

/// Misuse of an API contract (e.g. backward on a non-scalar or detached loss).
struct ContractError : Error {
    using Error::Error;
};

/// Invalid hyperparameter or configuration value.
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed or out-of-range data (labels, CSV rows, too-small datasets).
struct DataError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Raised by the optimizer when a gradient contains NaN or Inf.
struct NonFiniteGradient : Error {
    NonFiniteGradient(std::size_t epoch, std::size_t batch, std::string param)
        : Error("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                std::to_string(batch) + ", parameter '" + param + "'"),
          epoch(epoch),
          batch(batch),
          parameter(std::move(param)) {}

    std::size_t epoch;
    std::size_t batch;
    std::string parameter;
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    if (shape.size() == 1) os << ',';
    os << ')';
    return os.str();
}

}  // namespace sdistill
