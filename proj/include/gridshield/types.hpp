#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridshield {

using Scalar = double;
using Complex = std::complex<double>;

template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<Scalar>;
using Matrix = MatrixX<Scalar>;
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<Scalar>;
using SparseRowMatrix = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;
using ComplexSparseRowMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<Scalar>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed case-file text. Carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Structurally valid input that violates a model invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Newton or Gauss-Newton iteration failed to converge.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, int iterations, double residual_norm)
        : Error(what), iterations_(iterations), residual_norm_(residual_norm) {}
    int iterations() const noexcept { return iterations_; }
    double residual_norm() const noexcept { return residual_norm_; }

private:
    int iterations_;
    double residual_norm_;
};

/// Singular Newton Jacobian or rank-deficient WLS gain matrix.
class SingularMatrixError : public Error {
public:
    SingularMatrixError(const std::string& what, int iteration)
        : Error(what), iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace gridshield
