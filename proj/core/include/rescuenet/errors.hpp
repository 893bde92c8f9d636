#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rescuenet {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument values, incompatible configuration, bad user input.
class ValueError : public Error {
public:
    using Error::Error;
};

// Tensor shape mismatches. The message names both shapes.
class ShapeError : public ValueError {
public:
    using ValueError::ValueError;
};

// Configuration that cannot be realized (e.g. dilation too large for the
// feature map, fusion mode requiring a disabled head).
class ConfigError : public ValueError {
public:
    using ValueError::ValueError;
};

// File-system and serialization failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Text parse failure with the byte offset of the first offending character.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t offset)
        : Error(msg + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Violated internal invariant; indicates a bug rather than bad input.
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace rescuenet
