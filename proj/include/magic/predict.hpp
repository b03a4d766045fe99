#pragma once

// Classification, imputation and scoring of new samples with a fitted model.

#include <array>
#include <string>
#include <vector>

#include "magic/magic_model.hpp"

namespace magic {

enum class Method { Magic, Sgp, Mtgp };

std::string method_name(Method m);
/// Accepts "magic", "sgp", "mtgp" (any case). Throws InvalidArgument.
Method parse_method(const std::string& name);

struct ClassPrior {
  double p0 = 0.5;
  double p1 = 0.5;

  /// Throws InvalidArgument unless both are >= 0 and sum to 1.
  void validate() const;
  double operator[](int z) const { return z == 0 ? p0 : p1; }
  /// Fraction of training samples in each class.
  static ClassPrior from_labels(const std::vector<SampleSeries>& samples);
  bool operator==(const ClassPrior&) const = default;
};

/// Everything prediction needs. Group posteriors are indexed by class for
/// MAGIC (two groups), shared for MTGP (one group); SGP stores a single
/// degenerate posterior (its prior mean, zero covariance).
struct FittedModel {
  Method method = Method::Magic;
  TimeGrid grid;
  BasisConfig basis;
  ModelParams params;
  int num_groups = 2;
  std::array<ClassPosterior, 2> posteriors;
  ClassPrior prior;
  double class_kernel_nugget = 1e-6;
  std::vector<double> q_history;

  const ClassPosterior& posterior_for(int z) const;
  QuadratureBasis quadrature() const { return {grid, basis}; }
};

/// Sigma~_z = K~_z + K_theta + sigma^2 I on the full grid.
MatrixXd predictive_covariance(const FittedModel& model, int z);

/// log N(y_o; m~_z[o], Sigma~_z[o, o]); 0 when nothing is observed.
double class_marginal(const SampleSeries& sample, int z, const FittedModel& model);

/// argmax_z class_marginal + log prior_z, ties to class 0.
int map_classify(const SampleSeries& sample, const FittedModel& model, const ClassPrior& prior);

struct ImputedCurve {
  VectorXd mean;
  VectorXd variance;
};

/// Conditional of N(m~_z, Sigma~_z) on the observed entries. Observed points
/// are copied through with variance 0.
ImputedCurve impute_new(const SampleSeries& sample, int z, const FittedModel& model);

/// logistic(beta0 + beta1^T int phi f).
double predict_prob(const FittedModel& model, const VectorXd& curve, const QuadratureBasis& quad);

/// Arithmetic mean. Throws InvalidArgument on an empty list.
double meta_combine(const std::vector<double>& probs);

struct PredictionResult {
  int assigned_class = 0;
  std::array<double, 2> map_log_scores{0.0, 0.0};
  double probability = 0.5;
  VectorXd curve;
  VectorXd variance;
  /// Classified by the prior alone.
  bool no_observations = false;
};

/// MAP class, its imputation, then the logistic probability of that curve.
PredictionResult predict(const FittedModel& model, const SampleSeries& sample);
PredictionResult predict(const FittedModel& model, const SampleSeries& sample,
                         const QuadratureBasis& quad);

} // namespace magic
