#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cclab {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// -- geometry --------------------------------------------------------------

class InvalidMetric : public Error {
public:
    using Error::Error;
};

class InvalidTT : public Error {
public:
    using Error::Error;
};

class InvalidExponent : public Error {
public:
    using Error::Error;
};

// -- elliptic ---------------------------------------------------------------

class SingularOperator : public Error {
public:
    SingularOperator(const std::string& what, std::vector<double> kernel)
        : Error(what), kernel_direction(std::move(kernel)) {}
    std::vector<double> kernel_direction;
};

class EigenFailure : public Error {
public:
    using Error::Error;
};

class NotYamabePositive : public Error {
public:
    using Error::Error;
};

class InvalidTransform : public Error {
public:
    using Error::Error;
};

// -- lichnerowicz -----------------------------------------------------------

class InvalidState : public Error {
public:
    using Error::Error;
};

class NoBracket : public Error {
public:
    using Error::Error;
};

class SolveFailure : public Error {
public:
    SolveFailure(const std::string& what, std::vector<double> residual_history = {})
        : Error(what), residual_history(std::move(residual_history)) {}
    std::vector<double> residual_history;
};

// -- coupled ----------------------------------------------------------------

class ConformalKillingKernel : public Error {
public:
    ConformalKillingKernel(const std::string& what, std::vector<double> kernel)
        : Error(what), kernel_direction(std::move(kernel)) {}
    std::vector<double> kernel_direction;
};

class InvalidLayout : public Error {
public:
    using Error::Error;
};

class NotFound : public Error {
public:
    using Error::Error;
};

// -- halfcont ---------------------------------------------------------------

class NotAssociation : public Error {
public:
    NotAssociation(const std::string& what, std::vector<double> witness = {})
        : Error(what), witness(std::move(witness)) {}
    std::vector<double> witness;
};

// -- config / cli -----------------------------------------------------------

class ParseError : public Error {
public:
    using Error::Error;
};

class UnknownKey : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

}  // namespace cclab
