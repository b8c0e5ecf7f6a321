#pragma once

#include <stdexcept>
#include <string>

namespace pcclip {

// Input violates an operation's contract (shapes, ranges, counts).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Filesystem failure: missing path, unreadable or unwritable file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A file exists but its contents do not parse.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure during optimization (non-finite loss).
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Broken internal invariant, e.g. a frozen component changed during training.
class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace pcclip
