#pragma once

#include <stdexcept>
#include <string>

namespace fetalnav {

/// Input violates a documented precondition or invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A rotation representation that cannot be orthonormalized (zero or parallel columns).
class DegenerateRepresentationError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss. `snapshot_path` points at the diagnostic dump.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::string snapshot_path)
        : std::runtime_error(what), snapshot_path_(std::move(snapshot_path)) {}
    const std::string& snapshot_path() const noexcept { return snapshot_path_; }

private:
    std::string snapshot_path_;
};

}  // namespace fetalnav
