#ifndef BAYESBOOST_TYPES_HPP
#define BAYESBOOST_TYPES_HPP

#include <Eigen/Dense>
#include <stdexcept>

namespace bayesboost {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntVector = Eigen::VectorXi;

inline constexpr double kPi = 3.14159265358979323846;

// Error taxonomy mirrored by the CLI exit codes:
// config misuse -> 2, bad input data -> 3, unrecoverable numerics -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bayesboost

#endif
