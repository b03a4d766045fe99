#pragma once

// Hierarchical two-class GP with a functional-logistic label model, fitted
// by EM with block-coordinate M-steps and monotone acceptance.
//
//   y_i = mu_{z_i} + delta_i + eps_i,  mu_z ~ GP(m_z, K_{theta_z}),
//   delta_i ~ GP(0, K_theta),  eps_i ~ N(0, sigma^2 I),
//   logit p(z_i = 1) = beta0 + beta1^T int phi(t) f_i(t) dt.
//
// Samples live on a shared global grid; each carries the indices of its
// observed grid points. Quadratic forms for partially observed samples use
// the observed sub-block of K_theta + sigma^2 I (exact marginal).

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "magic/basis_flr.hpp"
#include "magic/core_math.hpp"
#include "magic/optimize.hpp"

namespace magic {

using Index = Eigen::Index;

/// One individual's observations on the global grid.
struct SampleSeries {
  std::string id;
  std::vector<Index> obs_index;  ///< strictly increasing grid indices
  VectorXd obs_values;
  std::optional<int> label;

  Index num_observed() const { return static_cast<Index>(obs_index.size()); }
  /// Throws InvalidArgument on broken invariants.
  void validate(Index grid_size) const;
  VectorXd obs_times(const TimeGrid& grid) const;

  bool operator==(const SampleSeries& o) const {
    return id == o.id && obs_index == o.obs_index && label == o.label &&
           obs_values.size() == o.obs_values.size() && obs_values == o.obs_values;
  }
};

/// Snaps `times` to grid indices within `tol`; throws DomainError when a
/// time is off-grid.
SampleSeries make_series(const TimeGrid& grid, std::string id, const VectorXd& times,
                         const VectorXd& values, std::optional<int> label = std::nullopt,
                         double tol = 1e-9);

/// Grid indices not in sample.obs_index, increasing.
std::vector<Index> unobserved_indices(const SampleSeries& sample, Index grid_size);

using ClassPosterior = GaussianOnGrid;

/// Theta = {theta0, theta1, theta, sigma^2, beta} plus the class prior means.
struct ModelParams {
  std::array<KernelParams, 2> class_kernels;
  KernelParams individual_kernel;
  double noise_variance = 1.0;
  LogisticCoefficients beta;
  std::array<VectorXd, 2> prior_means;
};

/// Second-difference roughness penalty R = weight * D^T D.
struct RoughnessPenalty {
  MatrixXd d;
  MatrixXd r;
  double weight = 0.0;
};

RoughnessPenalty build_roughness(const TimeGrid& grid, double weight);
/// All-zero penalty of the right size (any grid length).
RoughnessPenalty no_roughness(Index grid_size);

/// Mean U and variance V of the linear predictor x_i^T beta.
struct TaylorMoments {
  double u = 0.0;
  double v = 0.0;
};

/// Second-order approximation of E[log(1 + exp(X))], X ~ (U, V).
double taylor_label_term(const TaylorMoments& m);
/// z U - taylor_label_term(m).
double label_likelihood(const TaylorMoments& m, int z);

/// K_theta_z plus a relative nugget on the diagonal.
MatrixXd class_kernel_matrix(const TimeGrid& grid, const KernelParams& params, double nugget);

struct MagicOptions {
  double lambda = 1.0;
  double roughness_weight = 1.0;
  double class_kernel_nugget = 1e-6;
  double tolerance = 1e-4;
  int max_iterations = 100;
  double kernel_lower = 1e-3;
  double kernel_upper = 1e4;
  double noise_lower = 1e-8;
  double noise_upper = 1e2;
  QuasiNewtonOptions optimizer;
  /// false merges all samples into a single common mean (MTGP baseline).
  bool class_split = true;
  /// false drops the label likelihood and beta from Q.
  bool label_term = true;
  /// Class prior means on the grid; zero functions when unset.
  std::optional<std::array<VectorXd, 2>> prior_means;
  /// Keep a copy of parameters and posteriors after every iteration.
  bool keep_trace = false;
};

/// Samples with precomputed index sets and group assignment.
class TrainingData {
public:
  TrainingData(TimeGrid grid, BasisConfig basis, std::vector<SampleSeries> samples,
               bool class_split = true);

  const TimeGrid& grid() const noexcept { return grid_; }
  const QuadratureBasis& quadrature() const noexcept { return quad_; }
  const std::vector<SampleSeries>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }
  int num_groups() const noexcept { return num_groups_; }
  int group(std::size_t i) const { return groups_[i]; }
  int label(std::size_t i) const { return *samples_[i].label; }
  const std::vector<Index>& observed(std::size_t i) const { return samples_[i].obs_index; }
  const std::vector<Index>& unobserved(std::size_t i) const { return unobserved_[i]; }
  std::size_t group_count(int g) const;
  /// Pooled mean and (sample) variance of all observed values.
  double pooled_mean() const;
  double pooled_variance() const;

private:
  TimeGrid grid_;
  QuadratureBasis quad_;
  std::vector<SampleSeries> samples_;
  std::vector<std::vector<Index>> unobserved_;
  std::vector<int> groups_;
  int num_groups_ = 2;
};

struct EStepReport {
  std::array<bool, 2> empty_group{false, false};
};

/// Class-mean posteriors N(m~_z, K~_z) with
/// K~_z = (K_z^{-1} + R + sum_i P_i^T S_i^{-1} P_i)^{-1},
/// m~_z = K~_z (K_z^{-1} m_z + sum_i P_i^T S_i^{-1} y_i),
/// S_i the observed block of K_theta + sigma^2 I. Evaluated without
/// inverting K_z. A group with no samples gets (K_z^{-1} + R)^{-1}.
std::array<ClassPosterior, 2> e_step(const TrainingData& data, const ModelParams& params,
                                     const RoughnessPenalty& penalty, double nugget,
                                     EStepReport* report = nullptr);

/// Curve f_i of the sample: observed values at observed points, the
/// conditional mean given mu = m~ elsewhere.
VectorXd imputed_training_curve(const SampleSeries& sample, const std::vector<Index>& unobserved,
                                const ClassPosterior& post, const ModelParams& params,
                                const TimeGrid& grid);

/// Covariance surface of f_i induced by mu ~ N(m~, K~): zero on observed
/// rows/columns, K~ - B K~ - K~ B^T + B K~ B^T on the unobserved block.
MatrixXd imputed_curve_covariance(const SampleSeries& sample, const std::vector<Index>& unobserved,
                                  const ClassPosterior& post, const ModelParams& params,
                                  const TimeGrid& grid);

TaylorMoments compute_moments(const SampleSeries& sample, const std::vector<Index>& unobserved,
                              const ClassPosterior& post, const ModelParams& params,
                              const QuadratureBasis& quad);

/// Terms of the expected complete-data log-likelihood (constant dropped).
struct QBreakdown {
  double label = 0.0;      ///< sum_i L_i
  double series = 0.0;     ///< complete time series terms
  std::array<double, 2> prior{0.0, 0.0};
  double ridge = 0.0;      ///< lambda/2 |beta1|^2
  double entropy = 0.0;    ///< sum_z 1/2 log|K~_z|
  double roughness = 0.0;  ///< -1/2 sum_z E[mu_z^T R mu_z]

  double q() const { return label + series + prior[0] + prior[1]; }
  double penalized_q() const { return q() - ridge; }
  /// Monotone EM objective recorded in q_history.
  double free_energy() const { return penalized_q() + entropy + roughness; }
};

QBreakdown q_function(const TrainingData& data, const ModelParams& params,
                      const std::array<ClassPosterior, 2>& posteriors,
                      const RoughnessPenalty& penalty, const MagicOptions& options);

/// -1/2 [log|K| + Tr(K~ K^{-1}) + (m~ - m)^T K^{-1} (m~ - m)].
double class_prior_term(const ClassPosterior& post, const VectorXd& prior_mean,
                        const MatrixXd& class_kernel);

/// Expectation of the Gaussian quadratic form, E[(x - m)^T K^{-1} (x - m)]
/// for x ~ N(m~, K~): Tr(K~ K^{-1}) + (m~ - m)^T K^{-1} (m~ - m).
double expected_quadratic_form(const VectorXd& post_mean, const MatrixXd& post_cov,
                               const VectorXd& mean, const MatrixXd& cov);

struct EMSnapshot {
  ModelParams params;
  std::array<ClassPosterior, 2> posteriors;
};

struct EMState {
  ModelParams params;
  std::array<ClassPosterior, 2> posteriors;
  std::vector<double> q_history;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<EMSnapshot> trace;
};

/// Initial Theta from data scale: amplitude = pooled sd, length-scale =
/// 0.3 |T|, sigma^2 = 0.1 * pooled variance, beta = 0.
ModelParams initial_params(const TrainingData& data, const MagicOptions& options);

/// One monotone M-step over the blocks theta0, theta1, beta, (theta, sigma^2).
/// A block's optimizer result is kept only if the penalized Q does not
/// decrease; failures keep the old block and append to `warnings`.
ModelParams m_step(const EMState& state, const TrainingData& data,
                   const RoughnessPenalty& penalty, const MagicOptions& options,
                   std::vector<std::string>* warnings = nullptr);

/// EM until the per-block relative parameter change is below
/// options.tolerance or options.max_iterations.
EMState fit(const TrainingData& data, const MagicOptions& options);
EMState fit(const TrainingData& data, const MagicOptions& options, ModelParams start);

} // namespace magic
