#pragma once

#include <stdexcept>
#include <string>

namespace labelflow {

/// Bad arguments or inputs that violate a documented precondition.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// File could not be opened, read, parsed, or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical routine failed: singular system, non-convergence, blow-up.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace labelflow
