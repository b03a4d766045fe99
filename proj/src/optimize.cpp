#include "magic/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "magic/errors.hpp"

namespace magic {

BoxBounds BoxBounds::unbounded(Eigen::Index n) {
  const double inf = std::numeric_limits<double>::infinity();
  return {VectorXd::Constant(n, -inf), VectorXd::Constant(n, inf)};
}

VectorXd BoxBounds::project(const VectorXd& x) const {
  return x.cwiseMax(lower).cwiseMin(upper);
}

VectorXd finite_difference_gradient(const ScalarObjective& f, const VectorXd& x,
                                    const BoxBounds& bounds, double relative_step,
                                    int* evaluations) {
  VectorXd g(x.size());
  VectorXd probe = x;
  double fx = std::numeric_limits<double>::quiet_NaN();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = relative_step * std::max(1.0, std::abs(x[i]));
    const bool up_ok = x[i] + h <= bounds.upper[i];
    const bool down_ok = x[i] - h >= bounds.lower[i];
    if (up_ok && down_ok) {
      probe[i] = x[i] + h;
      const double fp = f(probe);
      probe[i] = x[i] - h;
      const double fm = f(probe);
      g[i] = (fp - fm) / (2.0 * h);
      if (evaluations)
        *evaluations += 2;
    } else {
      if (std::isnan(fx)) {
        fx = f(x);
        if (evaluations)
          ++*evaluations;
      }
      probe[i] = up_ok ? x[i] + h : x[i] - h;
      const double fs = f(probe);
      g[i] = up_ok ? (fs - fx) / h : (fx - fs) / h;
      if (evaluations)
        ++*evaluations;
    }
    probe[i] = x[i];
  }
  return g;
}

namespace {

// Gradient of the minimized function -f with bound-blocked components removed.
VectorXd projected_gradient(const VectorXd& x, const VectorXd& g, const BoxBounds& b) {
  VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] <= b.lower[i] && g[i] > 0.0)
      pg[i] = 0.0;
    else if (x[i] >= b.upper[i] && g[i] < 0.0)
      pg[i] = 0.0;
  }
  return pg;
}

struct CorrectionPair {
  VectorXd s;
  VectorXd y;
  double rho;
};

// Two-loop recursion applied to q, all vectors masked to the free set.
VectorXd lbfgs_direction(const VectorXd& q_in, const std::deque<CorrectionPair>& mem,
                         const Eigen::Array<bool, Eigen::Dynamic, 1>& free) {
  auto mask = [&](const VectorXd& v) {
    VectorXd out = v;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (!free[i])
        out[i] = 0.0;
    return out;
  };
  VectorXd q = mask(q_in);
  std::vector<double> alpha(mem.size());
  for (std::size_t k = mem.size(); k-- > 0;) {
    const VectorXd s = mask(mem[k].s);
    alpha[k] = mem[k].rho * s.dot(q);
    q -= alpha[k] * mask(mem[k].y);
  }
  double gamma = 1.0;
  if (!mem.empty()) {
    const auto& last = mem.back();
    gamma = last.s.dot(last.y) / last.y.squaredNorm();
  }
  VectorXd r = gamma * q;
  for (std::size_t k = 0; k < mem.size(); ++k) {
    const double beta = mem[k].rho * mask(mem[k].y).dot(r);
    r += (alpha[k] - beta) * mask(mem[k].s);
  }
  return mask(r);
}

} // namespace

QuasiNewtonResult maximize_bounded(const ScalarObjective& f, const VectorXd& x0,
                                   const BoxBounds& bounds, const QuasiNewtonOptions& options,
                                   const GradientFunction& gradient) {
  const Eigen::Index n = x0.size();
  if (bounds.lower.size() != n || bounds.upper.size() != n)
    throw InvalidArgument("bounds do not match the parameter dimension");
  if ((bounds.lower.array() > bounds.upper.array()).any())
    throw InvalidArgument("lower bound exceeds upper bound");

  QuasiNewtonResult res;
  // Internally minimize phi = -f.
  auto phi = [&](const VectorXd& x) {
    ++res.evaluations;
    return -f(x);
  };
  auto grad_phi = [&](const VectorXd& x) -> VectorXd {
    if (gradient)
      return -gradient(x);
    int evals = 0;
    VectorXd g = -finite_difference_gradient(f, x, bounds, options.fd_relative_step, &evals);
    res.evaluations += evals;
    return g;
  };

  VectorXd x = bounds.project(x0);
  double fx = phi(x);
  if (!std::isfinite(fx))
    throw OptimizerError("objective is not finite at the starting point");
  VectorXd g = grad_phi(x);

  std::deque<CorrectionPair> memory;
  const double eps = std::numeric_limits<double>::epsilon();

  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    const VectorXd pg = projected_gradient(x, g, bounds);
    if (!pg.allFinite())
      throw OptimizerError("gradient is not finite");
    if (pg.lpNorm<Eigen::Infinity>() <= options.projected_gradient_tolerance) {
      res.converged = true;
      res.message = "projected gradient below tolerance";
      break;
    }
    Eigen::Array<bool, Eigen::Dynamic, 1> free(n);
    for (Eigen::Index i = 0; i < n; ++i)
      free[i] = pg[i] != 0.0;

    VectorXd d = -lbfgs_direction(g, memory, free);
    if (memory.empty() || !(d.dot(pg) < 0.0)) {
      memory.clear();
      d = -pg;
      const double norm = d.norm();
      if (norm > 1.0)
        d /= norm;
    }

    // Projected backtracking with an Armijo condition along the bent path.
    double t = 1.0;
    bool accepted = false;
    bool any_finite = false;
    int evaluated = 0;
    VectorXd x_new;
    double f_new = fx;
    for (int ls = 0; ls < options.max_line_search; ++ls, t *= 0.5) {
      x_new = bounds.project(x + t * d);
      if ((x_new - x).lpNorm<Eigen::Infinity>() == 0.0)
        break;
      f_new = phi(x_new);
      ++evaluated;
      if (!std::isfinite(f_new))
        continue;
      any_finite = true;
      if (f_new <= fx + 1e-4 * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!memory.empty()) {
        memory.clear();
        continue;
      }
      if (evaluated > 0 && !any_finite)
        throw OptimizerError("objective is not finite along the search direction");
      res.message = "line search could not decrease the objective";
      break;
    }

    const VectorXd g_new = grad_phi(x_new);
    CorrectionPair pair{x_new - x, g_new - g, 0.0};
    const double sy = pair.s.dot(pair.y);
    if (sy > eps * pair.y.squaredNorm() && sy > 0.0) {
      pair.rho = 1.0 / sy;
      memory.push_back(std::move(pair));
      if (static_cast<int>(memory.size()) > options.memory)
        memory.pop_front();
    }
    const double rel = (fx - f_new) / std::max({std::abs(fx), std::abs(f_new), 1.0});
    x = x_new;
    g = g_new;
    fx = f_new;
    if (rel <= options.factr * eps) {
      res.converged = true;
      res.message = "relative reduction of objective below factr*eps";
      ++res.iterations;
      break;
    }
  }
  if (res.message.empty())
    res.message = "iteration limit reached";
  res.x = x;
  res.value = -fx;
  return res;
}

} // namespace magic
