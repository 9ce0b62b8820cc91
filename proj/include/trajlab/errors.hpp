#pragma once

#include <stdexcept>
#include <string>

namespace trajlab {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad caller input: out-of-range token ids, malformed configs, unknown names.
class InputError : public Error {
public:
    using Error::Error;
};

// A computation produced NaN/Inf or otherwise left the valid numeric domain.
class NumericError : public Error {
public:
    using Error::Error;
};

// An API contract was violated (stale cache, precondition breach).
class ContractError : public Error {
public:
    using Error::Error;
};

// A fit could not be performed because the system is rank deficient or the
// data carries no usable signal.
class DegenerateFitError : public Error {
public:
    using Error::Error;
};

// Too few data points for the requested fit.
class InsufficientDataError : public Error {
public:
    using Error::Error;
};

// Checkpoint or registry content failed an integrity check.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// File could not be read/written/parsed.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace trajlab
