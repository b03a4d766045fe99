#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace magic {

using Eigen::VectorXd;

struct BoxBounds {
  VectorXd lower;
  VectorXd upper;

  static BoxBounds unbounded(Eigen::Index n);
  VectorXd project(const VectorXd& x) const;
};

struct QuasiNewtonOptions {
  int max_iterations = 200;
  /// Stop when the infinity norm of the projected gradient is below this.
  double projected_gradient_tolerance = 1e-6;
  /// Stop when the relative objective change falls below factr * eps.
  double factr = 1e7;
  int memory = 10;
  int max_line_search = 40;
  /// Central differences use h = fd_relative_step * max(1, |x_i|).
  double fd_relative_step = 1e-6;
};

struct QuasiNewtonResult {
  VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

using ScalarObjective = std::function<double(const VectorXd&)>;
using GradientFunction = std::function<VectorXd(const VectorXd&)>;

/// Central-difference gradient, one-sided where x +- h leaves the box.
VectorXd finite_difference_gradient(const ScalarObjective& f, const VectorXd& x,
                                    const BoxBounds& bounds, double relative_step,
                                    int* evaluations = nullptr);

/// Maximizes f over the box with a limited-memory quasi-Newton method
/// restricted to the free variables and projected backtracking. Gradients
/// come from `gradient` when given, else from finite differences.
///
/// Non-finite objective values during the line search are treated as
/// failed trial points. Throws OptimizerError when f(x0) is not finite or
/// every trial along a direction is non-finite.
QuasiNewtonResult maximize_bounded(const ScalarObjective& f, const VectorXd& x0,
                                   const BoxBounds& bounds,
                                   const QuasiNewtonOptions& options = {},
                                   const GradientFunction& gradient = {});

} // namespace magic
