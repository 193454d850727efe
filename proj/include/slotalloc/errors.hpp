#pragma once

#include <stdexcept>
#include <string>

namespace slotalloc {

/// Dimension mismatch, infeasible action or otherwise malformed model input.
class StructuralError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A size guard (state space, action enumeration, pivots) was exceeded.
class ResourceLimitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Instance or experiment file does not satisfy its schema.
class SchemaError : public std::runtime_error {
public:
    SchemaError(std::string field, const std::string& message)
        : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Linear algebra failure (singular or non-finite systems).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Least-squares design matrix without full column rank.
class RankDeficientError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

} // namespace slotalloc
