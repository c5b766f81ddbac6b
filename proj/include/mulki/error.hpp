#pragma once

#include <stdexcept>
#include <string>

namespace mulki {

// Base of every error the library throws. The CLI maps these to a nonzero exit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes that do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Inputs on which an operation is undefined (zero-norm vectors, empty classes).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

// Caller broke a precondition (non-scalar backward, unknown class, empty prototypes).
class ContractError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

// Non-finite loss during training.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace mulki
