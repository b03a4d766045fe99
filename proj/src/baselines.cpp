#include "magic/baselines.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace magic {

namespace {

std::vector<int> labels_of(const std::vector<SampleSeries>& samples) {
  std::vector<int> z;
  z.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.label)
      throw DataError("sample '" + s.id + "' has no label");
    z.push_back(*s.label);
  }
  return z;
}

// Fits the logistic model on completed curves, one per row of the design.
LogisticCoefficients fit_on_curves(const std::vector<VectorXd>& curves,
                                   const std::vector<SampleSeries>& samples,
                                   const QuadratureBasis& quad, const MethodOptions& options) {
  MatrixXd x(static_cast<Index>(curves.size()), quad.num_basis() + 1);
  for (std::size_t i = 0; i < curves.size(); ++i)
    x.row(static_cast<Index>(i)) = functional_covariate(curves[i], quad).x.transpose();
  return fit_flr(x, labels_of(samples), options.magic.lambda, options.flr);
}

} // namespace

SgpHyper fit_sgp_hyper(const TimeGrid& grid, const std::vector<SampleSeries>& samples,
                       const VectorXd& prior_mean, const MagicOptions& options) {
  if (samples.empty())
    throw DataError("no training samples");
  auto log_likelihood = [&](const VectorXd& x) {
    const KernelParams kp{std::exp(x[0]), std::exp(x[1])};
    const double noise = std::exp(x[2]);
    const MatrixXd k = rbf_kernel(kp, grid.points());
    double total = 0.0;
    try {
      for (const auto& s : samples) {
        if (s.obs_index.empty())
          continue;
        MatrixXd c = gather(k, s.obs_index, s.obs_index);
        c.diagonal().array() += noise;
        const StabilizedCholesky<double> chol(c);
        const VectorXd r = s.obs_values - gather(prior_mean, s.obs_index);
        total += -0.5 * (static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi) +
                         chol.log_det() + r.dot(chol.solve(r)));
      }
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return total;
  };

  double sum = 0.0, ss = 0.0, n = 0.0;
  for (const auto& s : samples) {
    sum += s.obs_values.sum();
    ss += s.obs_values.squaredNorm();
    n += static_cast<double>(s.obs_values.size());
  }
  double var = n > 1.0 ? (ss - sum * sum / n) / (n - 1.0) : 1.0;
  if (!(var > 0.0))
    var = 1.0;
  VectorXd x0(3);
  x0 << 0.5 * std::log(var), std::log(std::max(0.3 * grid.span(), options.kernel_lower)),
      std::log(std::clamp(0.1 * var, options.noise_lower, options.noise_upper));
  BoxBounds bounds;
  bounds.lower = (VectorXd(3) << std::log(options.kernel_lower), std::log(options.kernel_lower),
                  std::log(options.noise_lower))
                     .finished();
  bounds.upper = (VectorXd(3) << std::log(options.kernel_upper), std::log(options.kernel_upper),
                  std::log(options.noise_upper))
                     .finished();
  const QuasiNewtonResult res = maximize_bounded(log_likelihood, x0, bounds, options.optimizer);
  return {{std::exp(res.x[0]), std::exp(res.x[1])}, std::exp(res.x[2]), res.value};
}

FittedModel fit_sgp(const TimeGrid& grid, const BasisConfig& basis,
                    const std::vector<SampleSeries>& train, const MethodOptions& options) {
  FittedModel model;
  model.method = Method::Sgp;
  model.grid = grid;
  model.basis = basis;
  model.num_groups = 1;
  model.prior = ClassPrior::from_labels(train);
  model.class_kernel_nugget = options.magic.class_kernel_nugget;
  const QuadratureBasis quad(grid, basis);

  const Index n = grid.size();
  double level = 0.0;
  if (options.sgp_pooled_mean) {
    double sum = 0.0, cnt = 0.0;
    for (const auto& s : train) {
      sum += s.obs_values.sum();
      cnt += static_cast<double>(s.obs_values.size());
    }
    level = cnt > 0.0 ? sum / cnt : 0.0;
  }
  const VectorXd mean = VectorXd::Constant(n, level);
  const SgpHyper hyper = fit_sgp_hyper(grid, train, mean, options.magic);

  ModelParams& p = model.params;
  p.class_kernels = {hyper.kernel, hyper.kernel};
  p.individual_kernel = hyper.kernel;
  p.noise_variance = hyper.noise_variance;
  p.prior_means = {mean, mean};
  model.posteriors[0] = {mean, MatrixXd::Zero(n, n)};

  std::vector<VectorXd> curves;
  curves.reserve(train.size());
  for (const auto& s : train) {
    s.validate(n);
    curves.push_back(imputed_training_curve(s, unobserved_indices(s, n), model.posteriors[0], p, grid));
  }
  p.beta = fit_on_curves(curves, train, quad, options);
  return model;
}

FittedModel fit_mtgp(const TimeGrid& grid, const BasisConfig& basis,
                     const std::vector<SampleSeries>& train, const MethodOptions& options) {
  MagicOptions opts = options.magic;
  opts.class_split = false;
  opts.label_term = false;
  opts.roughness_weight = options.mtgp_roughness_weight;
  opts.prior_means.reset();

  const TrainingData data(grid, basis, train, false);
  const EMState state = fit(data, opts);

  FittedModel model;
  model.method = Method::Mtgp;
  model.grid = grid;
  model.basis = basis;
  model.num_groups = 1;
  model.params = state.params;
  model.posteriors = state.posteriors;
  model.prior = ClassPrior::from_labels(train);
  model.class_kernel_nugget = opts.class_kernel_nugget;
  model.q_history = state.q_history;

  std::vector<VectorXd> curves;
  curves.reserve(train.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    curves.push_back(imputed_training_curve(train[i], data.unobserved(i), state.posteriors[0],
                                            state.params, grid));
  model.params.beta = fit_on_curves(curves, train, data.quadrature(), options);
  return model;
}

FittedModel fit_magic(const TimeGrid& grid, const BasisConfig& basis,
                      const std::vector<SampleSeries>& train, const MethodOptions& options) {
  const TrainingData data(grid, basis, train, true);
  const EMState state = fit(data, options.magic);
  FittedModel model;
  model.method = Method::Magic;
  model.grid = grid;
  model.basis = basis;
  model.num_groups = 2;
  model.params = state.params;
  model.posteriors = state.posteriors;
  model.prior = ClassPrior::from_labels(train);
  model.class_kernel_nugget = options.magic.class_kernel_nugget;
  model.q_history = state.q_history;
  return model;
}

FittedModel fit_method(Method method, const TimeGrid& grid, const BasisConfig& basis,
                       const std::vector<SampleSeries>& train, const MethodOptions& options) {
  switch (method) {
  case Method::Magic:
    return fit_magic(grid, basis, train, options);
  case Method::Sgp:
    return fit_sgp(grid, basis, train, options);
  case Method::Mtgp:
    return fit_mtgp(grid, basis, train, options);
  }
  throw InvalidArgument("unknown method");
}

} // namespace magic
