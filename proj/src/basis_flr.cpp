#include "magic/basis_flr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace magic {

BasisConfig::BasisConfig(std::vector<double> knots) : knots_(std::move(knots)) {
  const auto n = knots_.size();
  if (n < 2 * kOrder)
    throw InvalidArgument("cubic basis needs at least 8 knots");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(knots_[i] >= knots_[i - 1]) || !std::isfinite(knots_[i]))
      throw InvalidArgument("knot vector must be finite and non-decreasing");
  }
  for (int i = 1; i < kOrder; ++i) {
    if (knots_[i] != knots_[0] || knots_[n - 1 - i] != knots_[n - 1])
      throw InvalidArgument("open knot vector must repeat each end knot 4 times");
  }
  if (!(knots_.back() > knots_.front()))
    throw InvalidArgument("knot span must have positive length");
}

BasisConfig BasisConfig::open_uniform(int num_basis, double lo, double hi) {
  if (num_basis < kOrder)
    throw InvalidArgument("open uniform cubic basis needs K >= 4");
  if (!(hi > lo))
    throw InvalidArgument("basis interval must have hi > lo");
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(num_basis + kOrder));
  for (int i = 0; i < kOrder; ++i)
    knots.push_back(lo);
  const int segments = num_basis - kOrder + 1;
  for (int j = 1; j < segments; ++j)
    knots.push_back(lo + (hi - lo) * j / segments);
  for (int i = 0; i < kOrder; ++i)
    knots.push_back(hi);
  return BasisConfig(std::move(knots));
}

VectorXd basis_eval(const BasisConfig& config, double t) {
  const auto& u = config.knots();
  const int k = config.num_basis();
  const int p = BasisConfig::kOrder - 1;
  if (!(t >= u.front() && t <= u.back())) {
    std::ostringstream os;
    os << "t = " << t << " outside knot span [" << u.front() << ", " << u.back() << "]";
    throw DomainError(os.str());
  }
  VectorXd out = VectorXd::Zero(k);

  // Knot span index s with u[s] <= t < u[s+1]; the right end belongs to the
  // last non-empty span.
  int span;
  if (t >= u[static_cast<std::size_t>(k)]) {
    span = k - 1;
  } else {
    span = static_cast<int>(std::upper_bound(u.begin(), u.end(), t) - u.begin()) - 1;
  }

  // Triangular table of the p+1 non-vanishing functions (de Boor).
  double n[BasisConfig::kOrder];
  double left[BasisConfig::kOrder];
  double right[BasisConfig::kOrder];
  n[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - u[static_cast<std::size_t>(span + 1 - j)];
    right[j] = u[static_cast<std::size_t>(span + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0.0 ? n[r] / denom : 0.0;
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
  for (int j = 0; j <= p; ++j)
    out[span - p + j] = n[j];
  return out;
}

VectorXd trapezoid_weights(const TimeGrid& grid) {
  const Eigen::Index n = grid.size();
  if (n < 2)
    throw InvalidArgument("trapezoid quadrature needs at least 2 grid points");
  VectorXd w = VectorXd::Zero(n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double h = grid[i + 1] - grid[i];
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

QuadratureBasis::QuadratureBasis(const TimeGrid& grid, const BasisConfig& config)
    : grid_(grid), config_(config) {
  const VectorXd w = trapezoid_weights(grid);
  basis_.resize(grid.size(), config.num_basis());
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    basis_.row(i) = basis_eval(config, grid[i]).transpose();
  weighted_ = w.asDiagonal() * basis_;
}

FunctionalCovariate functional_covariate(const VectorXd& f, const QuadratureBasis& quad) {
  if (f.size() != quad.grid().size())
    throw InvalidArgument("curve length does not match the quadrature grid");
  FunctionalCovariate c;
  c.x.resize(quad.num_basis() + 1);
  c.x[0] = 1.0;
  c.x.tail(quad.num_basis()).noalias() = quad.weighted_basis().transpose() * f;
  return c;
}

MatrixXd weighted_double_integral(const MatrixXd& c, const QuadratureBasis& quad) {
  const Eigen::Index n = quad.grid().size();
  if (c.rows() != n || c.cols() != n)
    throw InvalidArgument("covariance surface does not match the quadrature grid");
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw InvalidArgument("covariance surface is not symmetric");
  const MatrixXd& wb = quad.weighted_basis();
  MatrixXd out = wb.transpose() * c * wb;
  return 0.5 * (out + out.transpose());
}

LogisticCoefficients::LogisticCoefficients(VectorXd beta) : beta_(std::move(beta)) {
  if (beta_.size() < 1)
    throw InvalidArgument("coefficient vector needs an intercept");
  if (!beta_.allFinite())
    throw InvalidArgument("logistic coefficients must be finite");
}

double logistic(double s) {
  if (s >= 0.0)
    return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

double log1p_exp(double s) {
  if (s > 0.0)
    return s + std::log1p(std::exp(-s));
  return std::log1p(std::exp(s));
}

double flr_prob(const LogisticCoefficients& beta, const FunctionalCovariate& x) {
  if (x.x.size() != beta.vector().size())
    throw InvalidArgument("covariate and coefficient dimensions differ");
  return logistic(x.x.dot(beta.vector()));
}

namespace {

void check_labels(const MatrixXd& x, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw InvalidArgument("number of covariates and labels differ");
  int n1 = 0;
  for (int z : labels) {
    if (z != 0 && z != 1)
      throw InvalidArgument("labels must be 0 or 1");
    n1 += z;
  }
  if (n1 == 0 || n1 == static_cast<int>(labels.size()))
    throw DegenerateLabelsError("logistic fit needs at least one sample of each class");
}

VectorXd label_vector(const std::vector<int>& labels) {
  VectorXd z(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i)
    z[static_cast<Eigen::Index>(i)] = labels[i];
  return z;
}

} // namespace

double flr_objective(const MatrixXd& covariates, const std::vector<int>& labels,
                     double lambda, const VectorXd& beta) {
  const VectorXd s = covariates * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    ll += labels[static_cast<std::size_t>(i)] * s[i] - log1p_exp(s[i]);
  return ll - 0.5 * lambda * beta.tail(beta.size() - 1).squaredNorm();
}

LogisticCoefficients fit_flr(const MatrixXd& x, const std::vector<int>& labels, double lambda,
                             const FlrOptions& options) {
  check_labels(x, labels);
  if (!(lambda >= 0.0))
    throw InvalidArgument("ridge penalty must be non-negative");
  const Eigen::Index d = x.cols();
  const VectorXd z = label_vector(labels);
  VectorXd penalty = VectorXd::Constant(d, lambda);
  penalty[0] = 0.0;

  VectorXd beta = VectorXd::Zero(d);
  double n1 = z.sum();
  beta[0] = std::log(n1 / (static_cast<double>(z.size()) - n1));
  double value = flr_objective(x, labels, lambda, beta);

  for (int it = 0; it < options.max_iterations; ++it) {
    const VectorXd s = x * beta;
    VectorXd p(s.size()), w(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      p[i] = logistic(s[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const VectorXd grad = x.transpose() * (z - p) - penalty.cwiseProduct(beta);
    if (grad.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance)
      return LogisticCoefficients(beta);

    MatrixXd h = x.transpose() * w.asDiagonal() * x;
    h.diagonal() += penalty;
    const VectorXd step = StabilizedCholesky<double>(h).solve(grad);
    // Half the squared Newton decrement predicts the remaining ascent.
    const double decrement = 0.5 * grad.dot(step);
    if (decrement <= options.decrement_tolerance * (1.0 + std::abs(value)))
      return LogisticCoefficients(beta);

    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60 && !accepted; ++ls, t *= 0.5) {
      const VectorXd cand = beta + t * step;
      const double v = flr_objective(x, labels, lambda, cand);
      if (std::isfinite(v) && v > value) {
        beta = cand;
        value = v;
        accepted = true;
      }
    }
    if (!accepted) {
      // No ascent left at machine precision.
      if (decrement <= 1e-8 * (1.0 + std::abs(value)))
        return LogisticCoefficients(beta);
      throw OptimizerError("logistic fit: line search failed to increase the objective");
    }
  }
  std::ostringstream os;
  os << "logistic fit did not reach gradient tolerance " << options.gradient_tolerance
     << " in " << options.max_iterations << " iterations";
  throw OptimizerError(os.str());
}

LogisticCoefficients fit_flr(const std::vector<FunctionalCovariate>& covariates,
                             const std::vector<int>& labels, double lambda,
                             const FlrOptions& options) {
  if (covariates.empty())
    throw InvalidArgument("no covariates");
  const Eigen::Index d = covariates.front().x.size();
  MatrixXd x(static_cast<Eigen::Index>(covariates.size()), d);
  for (std::size_t i = 0; i < covariates.size(); ++i) {
    if (covariates[i].x.size() != d)
      throw InvalidArgument("covariates differ in dimension");
    x.row(static_cast<Eigen::Index>(i)) = covariates[i].x.transpose();
  }
  return fit_flr(x, labels, lambda, options);
}

} // namespace magic
