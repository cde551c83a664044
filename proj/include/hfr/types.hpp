#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace hfr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad inputs: shape mismatches, degenerate columns, malformed files.
struct ValidationError : Error {
    using Error::Error;
};

/// Numerical failures: rank deficiency, solver non-convergence, infeasibility.
struct NumericError : Error {
    using Error::Error;
};

/// File system problems (missing input, unwritable output directory).
struct IoError : Error {
    using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

inline bool all_finite(const Matrix& m) {
    return m.allFinite();
}

} // namespace detail

} // namespace hfr
