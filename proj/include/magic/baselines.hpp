#pragma once

// Comparison pipelines: per-sample GP imputation (SGP) and common-mean
// multi-task GP imputation (MTGP), each followed by penalized functional
// logistic regression. Both return the same FittedModel as MAGIC.

#include <vector>

#include "magic/predict.hpp"

namespace magic {

struct MethodOptions {
  /// MAGIC options; lambda, class_kernel_nugget, tolerances and bounds are
  /// shared with the baselines.
  MagicOptions magic;
  /// Roughness weight of the common mean in MTGP.
  double mtgp_roughness_weight = 0.0;
  /// SGP prior mean: false = zero, true = pooled mean of the training values.
  bool sgp_pooled_mean = false;
  FlrOptions flr;
};

/// Shared (theta, sigma^2) maximizing the summed per-sample marginal
/// log-likelihood under `prior_mean`.
struct SgpHyper {
  KernelParams kernel;
  double noise_variance = 1.0;
  double log_likelihood = 0.0;
};
SgpHyper fit_sgp_hyper(const TimeGrid& grid, const std::vector<SampleSeries>& samples,
                       const VectorXd& prior_mean, const MagicOptions& options);

FittedModel fit_sgp(const TimeGrid& grid, const BasisConfig& basis,
                    const std::vector<SampleSeries>& train, const MethodOptions& options = {});

FittedModel fit_mtgp(const TimeGrid& grid, const BasisConfig& basis,
                     const std::vector<SampleSeries>& train, const MethodOptions& options = {});

FittedModel fit_magic(const TimeGrid& grid, const BasisConfig& basis,
                      const std::vector<SampleSeries>& train, const MethodOptions& options = {});

FittedModel fit_method(Method method, const TimeGrid& grid, const BasisConfig& basis,
                       const std::vector<SampleSeries>& train, const MethodOptions& options = {});

} // namespace magic
