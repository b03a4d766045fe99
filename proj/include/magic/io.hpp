#pragma once

// Run configuration, long-format CSV ingestion, model checkpoints and
// report tables.

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "magic/simgen_eval.hpp"

namespace magic {

/// Bad command-line or configuration input (exit code 1 in the CLI).
class UsageError : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

/// Shortest decimal form that parses back to the same double.
std::string format_double(double x);
/// Whole-string decimal parse; nullopt on anything else.
std::optional<double> parse_double(const std::string& s);

// ------------------------------------------------------------------ config

struct RunConfig {
  // Global grid: grid_start, grid_start + grid_step, ..., grid_end.
  double grid_start = 0.0;
  double grid_end = 50.0;
  double grid_step = 1.0;
  // Basis: open uniform over the grid unless knots are given.
  int num_basis = 8;
  std::vector<double> knots;

  double lambda = 1.0;
  double roughness_weight = 1.0;
  double mtgp_roughness_weight = 0.0;
  double class_kernel_nugget = 1e-6;
  double tolerance = 1e-4;
  int max_iterations = 100;
  double kernel_lower = 1e-3;
  double kernel_upper = 1e4;
  double noise_lower = 1e-8;
  double noise_upper = 1e2;
  int optimizer_max_iterations = 200;
  double optimizer_gradient_tolerance = 1e-6;
  /// "zero" or "sine" (amplitude * sin(frequency t) for class 0, its negative for class 1).
  std::string prior_mean = "zero";
  /// "zero" or "pooled".
  std::string sgp_prior_mean = "zero";

  std::string method = "magic";
  std::uint64_t seed = 1;

  int repetitions = 20;
  double train_fraction = 0.7;
  std::vector<double> alphas{0.5, 0.8};

  int sim_per_class = 75;
  double sim_noise_sd = 0.01;
  double sim_mean_frequency = 1.5707963267948966;
  double sim_mean_amplitude = 1.0;
  double sim_class_amplitude = 1.0;
  double sim_class_length_scale = 50.0;
  double sim_individual_amplitude = 10.0;
  double sim_individual_length_scale = 100.0;

  /// Throws UsageError on out-of-range values.
  void validate() const;
  TimeGrid grid() const;
  BasisConfig basis() const;
  MethodOptions method_options() const;
  SimConfig sim_config() const;
  BenchmarkConfig benchmark_config() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown or repeated keys
/// and malformed values throw UsageError naming the line.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::string& path);
/// MAGIC_SEED, when set, replaces the seed.
void apply_environment(RunConfig& config);
/// Every key with its current value, in the parseable format.
std::string format_run_config(const RunConfig& config);

// --------------------------------------------------------------- CSV input

/// Series CSV `sample_id,time,value` (header required, any column order)
/// with an optional labels CSV `sample_id,label`. Times snap to the grid
/// within `tol`; duplicate (id, time) readings are averaged. Samples keep
/// the order of first appearance. Errors are ParseError with the line.
std::vector<SampleSeries> ingest_long_csv(const std::string& series_path,
                                          const std::optional<std::string>& labels_path,
                                          const TimeGrid& grid, double tol = 1e-9);
std::vector<SampleSeries> ingest_long_csv(std::istream& series, const std::string& series_name,
                                          std::istream* labels, const std::string& labels_name,
                                          const TimeGrid& grid, double tol = 1e-9);

void write_series_csv(std::ostream& out, const std::vector<SampleSeries>& samples,
                      const TimeGrid& grid);
void write_labels_csv(std::ostream& out, const std::vector<SampleSeries>& samples);

// -------------------------------------------------------------- checkpoint

constexpr int kCheckpointVersion = 1;

void save_model(std::ostream& out, const FittedModel& model);
void save_model(const std::string& path, const FittedModel& model);
/// ParseError carries the byte offset of the problem; a newer version
/// throws UnsupportedVersionError. Nothing is returned on failure.
FittedModel load_model(std::istream& in);
FittedModel load_model(const std::string& path);

// ------------------------------------------------------------------ report

void write_report(std::ostream& out, const BenchmarkReport& report);
void write_report(const std::string& path, const BenchmarkReport& report);
BenchmarkReport parse_report(std::istream& in);
BenchmarkReport read_report(const std::string& path);

// ------------------------------------------------------------- predictions

/// sample_id,label,assigned_class,probability,log_score0,log_score1
void write_predictions(std::ostream& out, const std::vector<SampleSeries>& samples,
                       const std::vector<PredictionResult>& results);
/// sample_id,time,value,variance,observed
void write_curves(std::ostream& out, const std::vector<SampleSeries>& samples,
                  const std::vector<PredictionResult>& results, const TimeGrid& grid);

} // namespace magic
