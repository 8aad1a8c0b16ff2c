#pragma once

#include <stdexcept>
#include <string>

namespace calib {

/// Base exception for every failure raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The DDE integration produced a non-finite state.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, double last_valid_time)
        : Error(what), last_valid_time_(last_valid_time) {}

    double last_valid_time() const noexcept { return last_valid_time_; }

private:
    double last_valid_time_;
};

} // namespace calib
