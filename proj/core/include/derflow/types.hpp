#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace derflow {

using Complex = std::complex<double>;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using CVec3 = Eigen::Vector3cd;
using CVecX = Eigen::VectorXcd;
using CMatX = Eigen::MatrixXcd;
using Mat2X = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class TopologyError : public Error {
 public:
  using Error::Error;
};

class DegenerateNetworkError : public Error {
 public:
  using Error::Error;
};

class PhaseError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double residual)
      : Error(what), last_residual(residual) {}
  double last_residual;
};

class VoltageCollapseError : public Error {
 public:
  using Error::Error;
};

class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class ScenarioError : public Error {
 public:
  using Error::Error;
};

}  // namespace derflow
