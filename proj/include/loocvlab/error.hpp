#pragma once

#include <stdexcept>
#include <string>

namespace loocvlab {

/// Bad input: dimension mismatch, violated precondition, malformed flag.
class invalid_input : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure: rank deficiency, non-positive-definite covariance,
/// unrepresentable linear term.
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw invalid_input(what);
}

}  // namespace loocvlab
