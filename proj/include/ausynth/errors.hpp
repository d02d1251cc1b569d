#pragma once

#include <stdexcept>
#include <string>

namespace ausynth {

/// Base of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or inconsistent configuration (unbound inputs, empty datasets, unknown ids).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("configuration error: " + what) {}
};

/// Non-finite values or other numerical breakdown.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

/// Caller violated an operation's precondition (shapes, dimensions).
class ContractError : public Error {
public:
    explicit ContractError(const std::string& what) : Error("contract error: " + what) {}
};

/// Malformed input file.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error("parse error: " + what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("I/O error: " + what) {}
};

}  // namespace ausynth
