#pragma once

#include <stdexcept>
#include <string>

namespace hfmm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the domain of a special function, or a non-finite result.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid user configuration (bad curve, non-positive sizes, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// The quadtree cannot satisfy its structural constraints.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// An analytic bound was requested outside its hypotheses.
class NotApplicable : public Error {
public:
    using Error::Error;
};

/// A checked identity or geometric invariant failed.
class InvariantViolation : public Error {
public:
    using Error::Error;
};

}  // namespace hfmm
