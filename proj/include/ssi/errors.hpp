#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ssi {

/// Tensor or layer shape mismatch. Messages name the offending shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad command-line usage or conflicting configuration. CLI exit code 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// I/O and data problems (missing files, bad splits, ...). CLI exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed binary or text file. Carries the byte offset of the defect.
class ParseError : public DataError {
public:
    ParseError(const std::string& msg, std::uint64_t offset)
        : DataError(msg + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

/// Numeric breakdown during training (non-finite loss). CLI exit code 4.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ssi
