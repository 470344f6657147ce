#pragma once

#include <stdexcept>
#include <string>

namespace orthotrace {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or text; carries an optional 1-based line number.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what, int line = 0)
        : Error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    int line() const noexcept { return line_; }

private:
    int line_;
};

/// A value violates a documented precondition or domain invariant.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace orthotrace
