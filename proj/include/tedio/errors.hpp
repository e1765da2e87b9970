#pragma once

#include <stdexcept>
#include <string>

namespace tedio {

// Error taxonomy shared by the library and the CLI exit codes:
// usage -> 2, io -> 3, dimension/numeric -> 4.
enum class ErrorKind { usage, io, dimension, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }
    int exit_code() const {
        switch (kind_) {
            case ErrorKind::usage: return 2;
            case ErrorKind::io: return 3;
            default: return 4;
        }
    }
    const char* kind_name() const {
        switch (kind_) {
            case ErrorKind::usage: return "usage";
            case ErrorKind::io: return "io";
            case ErrorKind::dimension: return "dimension";
            default: return "numeric";
        }
    }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error(ErrorKind::usage, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string& m) : Error(ErrorKind::dimension, m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

}  // namespace tedio
