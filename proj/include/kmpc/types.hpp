#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace kmpc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Raised when a configuration or argument violates a documented precondition.
/// The CLI maps it to a distinct exit code from runtime failures.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace kmpc
