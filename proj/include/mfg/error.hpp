#pragma once

#include <stdexcept>
#include <string>

namespace mfg {

/// Thrown when an iterative solver fails to reach its tolerance, or when a
/// training loop produces a non-finite loss.
class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on malformed experiment configuration (unknown keys, bad values,
/// unusable paths).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mfg
