#pragma once

// Cubic B-spline basis, trapezoidal functional covariates and penalized
// functional logistic regression.

#include <Eigen/Dense>

#include <vector>

#include "magic/core_math.hpp"

namespace magic {

/// Cubic (order 4) B-spline basis with an open knot vector.
class BasisConfig {
public:
  static constexpr int kOrder = 4;

  BasisConfig() = default;
  /// Validates: non-decreasing, end knots repeated kOrder times, K >= 1.
  explicit BasisConfig(std::vector<double> knots);

  /// K basis functions, open uniform knots over [lo, hi]. Requires K >= 4.
  static BasisConfig open_uniform(int num_basis, double lo, double hi);

  int num_basis() const noexcept { return static_cast<int>(knots_.size()) - kOrder; }
  const std::vector<double>& knots() const noexcept { return knots_; }
  double lo() const { return knots_.front(); }
  double hi() const { return knots_.back(); }

  bool operator==(const BasisConfig&) const = default;

private:
  std::vector<double> knots_;
};

/// phi(t) in R^K via the Cox-de Boor recursion. Throws DomainError
/// outside [first knot, last knot].
VectorXd basis_eval(const BasisConfig& config, double t);

/// Trapezoid weights w with sum_k w_k f(t_k) ~ integral of f over the grid.
VectorXd trapezoid_weights(const TimeGrid& grid);

/// Basis evaluated on a grid and pre-multiplied by quadrature weights, so
/// that integral phi(t) f(t) dt = weighted_basis()^T f.
class QuadratureBasis {
public:
  QuadratureBasis() = default;
  QuadratureBasis(const TimeGrid& grid, const BasisConfig& config);

  const TimeGrid& grid() const noexcept { return grid_; }
  const BasisConfig& config() const noexcept { return config_; }
  int num_basis() const noexcept { return config_.num_basis(); }
  /// n x K matrix Phi.
  const MatrixXd& basis() const noexcept { return basis_; }
  /// n x K matrix W Phi.
  const MatrixXd& weighted_basis() const noexcept { return weighted_; }

private:
  TimeGrid grid_;
  BasisConfig config_;
  MatrixXd basis_;
  MatrixXd weighted_;
};

/// x = [1, integral phi f]; x[0] is exactly one.
struct FunctionalCovariate {
  VectorXd x;
};

FunctionalCovariate functional_covariate(const VectorXd& f, const QuadratureBasis& quad);

/// Double trapezoid quadrature of phi(t) C(t,t') phi(t')^T.
MatrixXd weighted_double_integral(const MatrixXd& c, const QuadratureBasis& quad);

/// beta = [beta0, beta1].
class LogisticCoefficients {
public:
  LogisticCoefficients() = default;
  explicit LogisticCoefficients(int num_basis) : beta_(VectorXd::Zero(num_basis + 1)) {}
  explicit LogisticCoefficients(VectorXd beta);

  double intercept() const { return beta_[0]; }
  auto weights() const { return beta_.tail(beta_.size() - 1); }
  int num_basis() const { return static_cast<int>(beta_.size()) - 1; }
  const VectorXd& vector() const noexcept { return beta_; }
  VectorXd& vector() noexcept { return beta_; }

  bool operator==(const LogisticCoefficients& o) const {
    return beta_.size() == o.beta_.size() && beta_ == o.beta_;
  }

private:
  VectorXd beta_;
};

/// Logistic function 1/(1+exp(-s)) without overflow.
double logistic(double s);
/// log(1 + exp(s)) without overflow.
double log1p_exp(double s);

/// p(z = 1 | x) under beta.
double flr_prob(const LogisticCoefficients& beta, const FunctionalCovariate& x);

struct FlrOptions {
  double gradient_tolerance = 1e-6;
  /// Also stop once half the squared Newton decrement is below this,
  /// relative to 1 + |objective|.
  double decrement_tolerance = 1e-12;
  int max_iterations = 200;
};

/// Maximizes sum[z x^T beta - log(1 + exp(x^T beta))] - lambda/2 |beta1|^2
/// (intercept unpenalized) by damped Newton. `covariates` is N x (K+1),
/// one x per row.
LogisticCoefficients fit_flr(const MatrixXd& covariates, const std::vector<int>& labels,
                             double lambda, const FlrOptions& options = {});

LogisticCoefficients fit_flr(const std::vector<FunctionalCovariate>& covariates,
                             const std::vector<int>& labels, double lambda,
                             const FlrOptions& options = {});

/// The penalized log-likelihood maximized by fit_flr.
double flr_objective(const MatrixXd& covariates, const std::vector<int>& labels,
                     double lambda, const VectorXd& beta);

} // namespace magic
