#pragma once

#include <stdexcept>
#include <string>

namespace edd {

// Base for every error the library raises. The kind maps onto CLI exit codes.
class Error : public std::runtime_error {
public:
    enum class Kind { Invalid, Config, Divergence, Io };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& what) : Error(Kind::Invalid, what) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(Kind::Invalid, what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(Kind::Config, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(Kind::Io, what) {}
};

// Raised when a training loss or gradient goes non-finite.
struct DivergenceError : Error {
    DivergenceError(const std::string& what, long step, std::string term)
        : Error(Kind::Divergence, what), step_(step), term_(std::move(term)) {}

    long step() const noexcept { return step_; }
    const std::string& term() const noexcept { return term_; }

private:
    long step_;
    std::string term_;
};

} // namespace edd
