#pragma once

#include <stdexcept>
#include <string>

namespace wsss {

// Error taxonomy used across the library. Everything derives from
// std::runtime_error so callers can catch coarsely; the CLI maps any
// of these to exit code 1 and flag misuse to exit code 2.

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error("value error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ConstructionError : std::runtime_error {
    explicit ConstructionError(const std::string& msg) : std::runtime_error("construction error: " + msg) {}
};

struct ResourceError : std::runtime_error {
    explicit ResourceError(const std::string& msg) : std::runtime_error("resource error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct TrainAbort : std::runtime_error {
    explicit TrainAbort(const std::string& msg) : std::runtime_error("training aborted: " + msg) {}
};

}  // namespace wsss
