#pragma once

#include <stdexcept>
#include <string>

namespace sdfrec {

// Base for all toolkit errors. `kind` is a stable machine-readable tag used
// by the CLI when emitting JSON error reports.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

struct NonFiniteError : Error {
    NonFiniteError(const std::string& msg, int node_index)
        : Error("non_finite", msg), node(node_index) {}
    int node = -1;
};

struct PreconditionError : Error {
    explicit PreconditionError(const std::string& msg) : Error("precondition", msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io", msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error("usage", msg) {}
};

}  // namespace sdfrec
