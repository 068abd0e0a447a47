#pragma once

#include <stdexcept>
#include <string>

namespace dkd {

// Error classes map onto process exit codes: usage/config/shape -> 2,
// parse/validation/data -> 3, numeric/training -> 4.
enum class ErrorKind {
    usage,
    config,
    parse,
    validation,
    data,
    shape,
    numeric,
    training,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    int exit_code() const noexcept {
        switch (kind_) {
        case ErrorKind::usage:
        case ErrorKind::config:
        case ErrorKind::shape:
            return 2;
        case ErrorKind::parse:
        case ErrorKind::validation:
        case ErrorKind::data:
            return 3;
        case ErrorKind::numeric:
        case ErrorKind::training:
            return 4;
        }
        return 1;
    }

private:
    ErrorKind kind_;
};

const char* to_string(ErrorKind kind);

} // namespace dkd
