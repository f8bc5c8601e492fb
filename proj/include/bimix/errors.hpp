#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace bimix {

// Invalid argument to a numerical routine (non-finite input, sigma <= 0, ...).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Spec/data mismatch detected before fitting. Carries one message per problem.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

// A mixture component collected (numerically) no posterior weight.
class DegenerateComponent : public std::runtime_error {
public:
    DegenerateComponent(int profile, int component, double total_weight);
    int profile() const noexcept { return profile_; }
    int component() const noexcept { return component_; }
    double total_weight() const noexcept { return total_weight_; }

private:
    int profile_;
    int component_;
    double total_weight_;
};

// Unreadable or malformed input file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Every start of a multi-start fit failed.
class FitError : public std::runtime_error {
public:
    explicit FitError(std::vector<std::string> reasons);
    const std::vector<std::string>& reasons() const noexcept { return reasons_; }

private:
    std::vector<std::string> reasons_;
};

}  // namespace bimix
