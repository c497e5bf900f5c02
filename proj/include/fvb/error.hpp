#pragma once

#include <stdexcept>
#include <string>

namespace fvb {

/// Failure category. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
    Usage = 1,      // bad arguments, bad configuration, violated preconditions
    Data = 2,       // unreadable / malformed / inconsistent input files
    Numerical = 3,  // singular or degenerate numerical problem
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

}  // namespace fvb
