#pragma once

#include <stdexcept>
#include <string>

namespace bifctl {

// Shape or index mismatch in user supplied data.
class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Out-of-range or meaningless parameter value.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class GeometryError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class SingularMatrixError : public std::runtime_error {
public:
    SingularMatrixError(const std::string& what, int pivot)
        : std::runtime_error(what), pivot_(pivot) {}
    int pivot() const noexcept { return pivot_; }

private:
    int pivot_;
};

// Shift coincides (numerically) with an eigenvalue of the pencil.
class ShiftError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual, int iterations)
        : std::runtime_error(what), residual_(residual), iterations_(iterations) {}
    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace bifctl
