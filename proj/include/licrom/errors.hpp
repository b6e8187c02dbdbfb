#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace licrom {

// Base of every error thrown by the library. kind() is a stable, machine
// readable tag used by the CLI when it reports failures as JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string &what)
        : std::runtime_error(what), kind_(std::move(kind)) {}
    const std::string &kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

class FormatError : public Error {
public:
    FormatError(const std::string &what, std::size_t line = 0, std::size_t offset = 0)
        : Error("format", decorate(what, line, offset)), line_(line), offset_(offset) {}
    std::size_t line() const noexcept { return line_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    static std::string decorate(const std::string &what, std::size_t line, std::size_t offset) {
        if (line > 0) return what + " (line " + std::to_string(line) + ")";
        if (offset > 0) return what + " (offset " + std::to_string(offset) + ")";
        return what;
    }
    std::size_t line_;
    std::size_t offset_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string &what) : Error("validation", what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string &what) : Error("config", what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string &what) : Error("io", what) {}
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string &what, int iteration)
        : Error("divergence", what + " at iteration " + std::to_string(iteration)),
          iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

class DegenerateCubatureError : public Error {
public:
    explicit DegenerateCubatureError(const std::string &what) : Error("degenerate_cubature", what) {}
};

class StaleFactorError : public Error {
public:
    StaleFactorError()
        : Error("stale_factor", "projection factor is stale; call refactor() after changing the scheme") {}
};

} // namespace licrom
