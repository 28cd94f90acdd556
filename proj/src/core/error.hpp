#pragma once

#include <stdexcept>
#include <string>

namespace valcon {

enum class ErrorKind {
    invalid_argument,
    config,
    network,
    validation,
    parse,
    numeric,
    internal,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; the kind drives C API status codes
// and CLI exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorKind::invalid_argument, message);
}

}  // namespace valcon
