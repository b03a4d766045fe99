#pragma once

// Synthetic two-class data, bin-based missingness, metrics and the
// repeated-split and leave-one-out evaluation harnesses.

#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "magic/baselines.hpp"

namespace magic {

using Rng = std::mt19937_64;

/// splitmix64 of the base seed mixed with a stream of indices.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream);

struct SimConfig {
  int grid_first = 0;
  int grid_last = 50;
  /// m0(t) = amplitude * sin(frequency * t), m1 = -m0.
  double mean_frequency = std::numbers::pi / 2.0;
  double mean_amplitude = 1.0;
  std::array<KernelParams, 2> class_kernels{KernelParams{1.0, 50.0}, KernelParams{1.0, 50.0}};
  KernelParams individual_kernel{10.0, 100.0};
  double noise_sd = 0.01;
  int per_class = 75;
  std::uint64_t seed = 1;

  void validate() const;
  TimeGrid grid() const;
  std::array<VectorXd, 2> prior_means() const;
};

struct SimulatedDataset {
  TimeGrid grid;
  /// Complete, labelled curves (all grid points observed): class 0 first.
  std::vector<SampleSeries> samples;
  std::array<VectorXd, 2> prior_means;
  /// The single draw of mu_z per class.
  std::array<VectorXd, 2> latent_means;
};

SimulatedDataset generate_dataset(const SimConfig& config);

/// x ~ N(mean, cov) via a symmetric square root of cov.
VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, Rng& rng);

/// Keeps round((1 - alpha) n) of the sample's n points: the points are cut
/// into that many contiguous bins of near-equal size and one uniformly chosen
/// point survives in each. Throws InvalidArgument if nothing would be kept.
SampleSeries apply_missingness(const SampleSeries& sample, double alpha, Rng& rng);
SampleSeries apply_missingness(const SampleSeries& sample, double alpha, std::uint64_t seed);

/// Mann-Whitney AUC: (concordant + ties/2) / (n0 n1). Scores of class 1
/// are expected to be larger. Throws DegenerateLabelsError on one class.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Mean squared error over `indices`. Throws InvalidArgument when empty.
double imputation_mse(const VectorXd& imputed, const VectorXd& truth,
                      const std::vector<Index>& indices);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per class, round(fraction * n_c) samples go to train. Indices ascending.
Split stratified_split(const std::vector<int>& labels, double train_fraction, Rng& rng);

/// Mean and sample standard deviation (n - 1; 0 for a single value).
std::pair<double, double> mean_sd(const std::vector<double>& values);

struct ReportRow {
  std::string method;
  double alpha = 0.0;
  double auc_mean = 0.0;
  double auc_sd = 0.0;
  double mse_mean = 0.0;
  double mse_sd = 0.0;
  int n_reps = 0;
  int n_failures = 0;
  std::string feature;

  bool operator==(const ReportRow&) const;
};

struct BenchmarkReport {
  /// Ordered key/value pairs echoed as comment lines.
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<ReportRow> rows;
  /// Failure diagnostics; not part of the table.
  std::vector<std::string> failures;
  /// Wall-clock seconds per row; not part of the table.
  std::vector<double> seconds;

  bool operator==(const BenchmarkReport& o) const {
    return metadata == o.metadata && rows == o.rows;
  }
};

struct BenchmarkConfig {
  SimConfig sim;
  BasisConfig basis = BasisConfig::open_uniform(8, 0.0, 50.0);
  MethodOptions options;
  std::vector<Method> methods{Method::Magic, Method::Sgp, Method::Mtgp};
  std::vector<double> alphas{0.5, 0.8};
  int repetitions = 20;
  double train_fraction = 0.7;
  std::uint64_t seed = 1;
  /// MAGIC uses the generating prior means unless options set them.
  bool use_sim_prior_means = true;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Simulates once, then per (alpha, repetition) draws a stratified split
/// and a mask, fits every method on the masked training samples and scores
/// AUC on test probabilities and MSE on the masked test points. Failed
/// fits are excluded from that row's aggregate and counted.
BenchmarkReport run_benchmark(const BenchmarkConfig& config, const ProgressFn& progress = {});
BenchmarkReport run_benchmark(const BenchmarkConfig& config, const SimulatedDataset& data,
                              const ProgressFn& progress = {});

struct LoocvResult {
  Method method = Method::Magic;
  std::vector<std::string> ids;
  std::vector<int> labels;
  /// Out-of-fold probabilities; NaN where the fold failed.
  std::vector<double> probabilities;
  /// Per-sample mean of the held-out-value squared errors; NaN if none.
  std::vector<double> sample_mse;
  int failures = 0;
  std::vector<std::string> failure_messages;
};

/// Outer leave-one-sample-out for probabilities; inside each fold every
/// observed value of the held-out sample is masked once and re-imputed with
/// the fold's model. Needs at least two samples per class.
LoocvResult run_loocv(const TimeGrid& grid, const BasisConfig& basis,
                      const std::vector<SampleSeries>& samples, Method method,
                      const MethodOptions& options, const ProgressFn& progress = {});

/// Averages probabilities across features per sample id (ids present in
/// every result); MSE is averaged the same way.
LoocvResult combine_features(const std::vector<LoocvResult>& per_feature);

/// AUC over the folds that succeeded, MSE mean/sd over samples with a value.
ReportRow loocv_row(const LoocvResult& result, const std::string& feature, double alpha);

} // namespace magic
