// Copyright 2026 The Subtoken Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace subtoken {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Inconsistent model, routing, or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A function argument is out of its valid range.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// A non-finite value was produced or supplied.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Checkpoint or corpus I/O failure.
class FileError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged; message names the step and the offending term.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace subtoken
