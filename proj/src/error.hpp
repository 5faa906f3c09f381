#pragma once

#include <stdexcept>
#include <string>

namespace dhm {

enum class ErrorCode {
    invalid_argument,
    config,
    numeric,
    io,
    state,
};

// All failure paths in the core throw Error; the C API translates the code
// into its status enum and the CLI maps it onto exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message)
        : std::runtime_error(std::move(message)), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail_arg(const std::string& msg) {
    throw Error(ErrorCode::invalid_argument, msg);
}
[[noreturn]] inline void fail_config(const std::string& msg) {
    throw Error(ErrorCode::config, msg);
}
[[noreturn]] inline void fail_numeric(const std::string& msg) {
    throw Error(ErrorCode::numeric, msg);
}
[[noreturn]] inline void fail_io(const std::string& msg) {
    throw Error(ErrorCode::io, msg);
}

inline void require(bool cond, ErrorCode code, const std::string& msg) {
    if (!cond) throw Error(code, msg);
}

}  // namespace dhm
