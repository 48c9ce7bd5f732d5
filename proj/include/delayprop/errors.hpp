#pragma once

#include <stdexcept>
#include <string>

namespace delayprop {

// Exit codes used by the command-line tool.
enum class ExitCode : int { ok = 0, config = 2, data = 3, numeric = 4 };

/// Invalid configuration or argument values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed, missing or inconsistent input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or divergence during numerical work.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace delayprop
