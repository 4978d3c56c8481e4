#pragma once

#include <stdexcept>
#include <string>

namespace mixenv {

/// Covariance matrix that should be positive definite is not.
class SingularCovarianceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Centered design X_c X_c^T is rank deficient.
class DesignError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data.
class DataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid configuration or option value.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InformationSingularError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnstableBootstrapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mixenv
