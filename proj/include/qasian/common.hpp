#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <utility>
#include <string>

namespace qasian {

using cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

constexpr double kPi = 3.14159265358979323846;

// bad inputs; the CLI maps this to exit code 2
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// singular factors, blow-ups, residual failures; exit code 3
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline bool is_pow2(long long v) { return v > 0 && (v & (v - 1)) == 0; }

// largest singular value / smallest, via LAPACK gesdd (values only)
RVec singular_values(const CMat& a);
double spectral_norm(const CMat& a);
// {largest, smallest}; Gram eigenvalues for big well-conditioned matrices
std::pair<double, double> singular_extremes(const CMat& a);
double cond2(const CMat& a);

}  // namespace qasian
