#pragma once

#include <stdexcept>
#include <string>

namespace gpcl {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller passed arguments violating a precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Malformed, truncated or inconsistent data (files, clouds, labels).
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or parameters during training.
class NumericalError : public Error {
public:
    using Error::Error;
};

class OverlapUnsatisfiable : public Error {
public:
    using Error::Error;
};

class EmptyBank : public Error {
public:
    using Error::Error;
};

} // namespace gpcl
