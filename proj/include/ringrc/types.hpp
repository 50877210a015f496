#pragma once

#include <Eigen/Dense>
#include <complex>

namespace ringrc {

using Real = double;
using Complex = std::complex<double>;

using VecR = Eigen::VectorXd;
using VecC = Eigen::VectorXcd;
using MatR = Eigen::MatrixXd;
using Index = Eigen::Index;

namespace constants {
inline constexpr double c_light = 299792458.0; // m/s
inline constexpr double pi = 3.141592653589793238462643383279502884;
inline constexpr double two_pi = 2.0 * pi;
} // namespace constants

} // namespace ringrc
