#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mgm {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// ConfigError -> 2, FormatError/DataError -> 3, NumericError/TrainingError -> 4.

class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class InvalidToken : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LookupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file payloads. `offset` is the byte position where decoding failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& stage, const std::string& what)
        : std::runtime_error("non-finite value in " + stage + ": " + what), stage_(stage) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

class TrainingError : public std::runtime_error {
public:
    TrainingError(long iteration, const std::string& what)
        : std::runtime_error("training diverged at iteration " + std::to_string(iteration) +
                             ": " + what),
          iteration_(iteration) {}

    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

}  // namespace mgm
