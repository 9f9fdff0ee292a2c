#pragma once

#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace viewret {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or hyperparameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated file. Carries the byte offset where parsing failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// A metric is undefined for the given data (single class, zero area, ...).
class MetricError : public Error {
public:
    using Error::Error;
};

/// Caller passed unusable data (empty candidate list, non-binary mask, ...).
class InputError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure; the message includes the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

namespace log {

inline bool& quiet()
{
    static bool value = false;
    return value;
}

inline void warn(std::string_view message)
{
    if (quiet()) {
        return;
    }
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    std::cerr << "warning: " << message << '\n';
}

inline void info(std::string_view message)
{
    if (quiet()) {
        return;
    }
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    std::cerr << message << '\n';
}

} // namespace log

} // namespace viewret
