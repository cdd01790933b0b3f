#pragma once

#include <stdexcept>
#include <string>

namespace invcop {

/// Raised when a parameter point violates one of its model's identification
/// or stationarity inequalities. `which()` names the inequality.
class ConstraintViolation : public std::domain_error {
public:
    ConstraintViolation(const std::string& which, const std::string& detail)
        : std::domain_error(which + ": " + detail), which_(which) {}
    const std::string& which() const noexcept { return which_; }

private:
    std::string which_;
};

/// Quadrature, root-finding or filter breakdown.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed user input (data files, command-line values).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace invcop
