#include "magic/simgen_eval.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace magic {

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  for (std::uint64_t s : stream)
    h = mix(h ^ mix(s));
  return h;
}

// ------------------------------------------------------------- simulation

void SimConfig::validate() const {
  if (grid_last <= grid_first)
    throw InvalidArgument("simulation grid needs at least two points");
  for (const auto& k : class_kernels)
    k.validate();
  individual_kernel.validate();
  if (!(noise_sd > 0.0) || !std::isfinite(noise_sd))
    throw InvalidArgument("noise standard deviation must be positive");
  if (per_class < 1)
    throw InvalidArgument("need at least one sample per class");
  if (!std::isfinite(mean_frequency) || !std::isfinite(mean_amplitude))
    throw InvalidArgument("mean function parameters must be finite");
}

TimeGrid SimConfig::grid() const { return TimeGrid::integers(grid_first, grid_last); }

std::array<VectorXd, 2> SimConfig::prior_means() const {
  const VectorXd t = grid().points();
  const VectorXd m0 = mean_amplitude * (mean_frequency * t.array()).sin().matrix();
  return {m0, -m0};
}

VectorXd sample_gaussian(const VectorXd& mean, const MatrixXd& cov, Rng& rng) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  std::normal_distribution<double> normal;
  VectorXd z(mean.size());
  for (Index k = 0; k < z.size(); ++k)
    z[k] = normal(rng);
  return mean + es.eigenvectors() * root.cwiseProduct(z);
}

SimulatedDataset generate_dataset(const SimConfig& config) {
  config.validate();
  SimulatedDataset out;
  out.grid = config.grid();
  out.prior_means = config.prior_means();
  Rng rng(config.seed);
  const VectorXd& t = out.grid.points();
  for (std::size_t z = 0; z < 2; ++z)
    out.latent_means[z] =
        sample_gaussian(out.prior_means[z], rbf_kernel(config.class_kernels[z], t), rng);

  MatrixXd s = rbf_kernel(config.individual_kernel, t);
  s.diagonal().array() += config.noise_sd * config.noise_sd;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(s);
  const MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::normal_distribution<double> normal;

  std::vector<Index> all(static_cast<std::size_t>(out.grid.size()));
  for (Index g = 0; g < out.grid.size(); ++g)
    all[static_cast<std::size_t>(g)] = g;
  for (int z = 0; z < 2; ++z) {
    for (int i = 0; i < config.per_class; ++i) {
      VectorXd e(t.size());
      for (Index k = 0; k < e.size(); ++k)
        e[k] = normal(rng);
      SampleSeries sample;
      sample.id = "c" + std::to_string(z) + "_" + std::to_string(i);
      sample.obs_index = all;
      sample.obs_values = out.latent_means[static_cast<std::size_t>(z)] + root * e;
      sample.label = z;
      out.samples.push_back(std::move(sample));
    }
  }
  return out;
}

// ------------------------------------------------------------ missingness

SampleSeries apply_missingness(const SampleSeries& sample, double alpha, Rng& rng) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw InvalidArgument("missing ratio must lie in [0, 1)");
  const auto n = static_cast<std::size_t>(sample.num_observed());
  const auto kept = static_cast<std::size_t>(std::lround((1.0 - alpha) * static_cast<double>(n)));
  if (kept == 0) {
    std::ostringstream os;
    os << "missing ratio " << alpha << " keeps no points of sample '" << sample.id << "'";
    throw InvalidArgument(os.str());
  }
  SampleSeries out;
  out.id = sample.id;
  out.label = sample.label;
  out.obs_values.resize(static_cast<Index>(kept));
  out.obs_index.reserve(kept);
  for (std::size_t b = 0; b < kept; ++b) {
    const std::size_t lo = b * n / kept;
    const std::size_t hi = (b + 1) * n / kept;
    std::uniform_int_distribution<std::size_t> pick(lo, hi - 1);
    const std::size_t k = pick(rng);
    out.obs_index.push_back(sample.obs_index[k]);
    out.obs_values[static_cast<Index>(b)] = sample.obs_values[static_cast<Index>(k)];
  }
  return out;
}

SampleSeries apply_missingness(const SampleSeries& sample, double alpha, std::uint64_t seed) {
  Rng rng(seed);
  return apply_missingness(sample, alpha, rng);
}

// ---------------------------------------------------------------- metrics

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw InvalidArgument("scores and labels differ in length");
  std::vector<double> pos;
  std::vector<double> neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1)
      pos.push_back(scores[i]);
    else if (labels[i] == 0)
      neg.push_back(scores[i]);
    else
      throw InvalidArgument("labels must be 0 or 1");
    if (std::isnan(scores[i]))
      throw InvalidArgument("AUC scores must not be NaN");
  }
  if (pos.empty() || neg.empty())
    throw DegenerateLabelsError("AUC is undefined with a single class");
  std::sort(neg.begin(), neg.end());
  // Counts in integers: 2 * concordant + ties, exact for any size.
  std::uint64_t twice = 0;
  for (double p : pos) {
    const auto below = std::lower_bound(neg.begin(), neg.end(), p) - neg.begin();
    const auto upto = std::upper_bound(neg.begin(), neg.end(), p) - neg.begin();
    twice += 2 * static_cast<std::uint64_t>(below) + static_cast<std::uint64_t>(upto - below);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double imputation_mse(const VectorXd& imputed, const VectorXd& truth,
                      const std::vector<Index>& indices) {
  if (indices.empty())
    throw InvalidArgument("MSE needs at least one index");
  if (imputed.size() != truth.size())
    throw InvalidArgument("imputed and true curves differ in length");
  double ss = 0.0;
  for (Index k : indices) {
    if (k < 0 || k >= truth.size())
      throw InvalidArgument("MSE index outside the curve");
    const double d = imputed[k] - truth[k];
    ss += d * d;
  }
  return ss / static_cast<double>(indices.size());
}

Split stratified_split(const std::vector<int>& labels, double train_fraction, Rng& rng) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InvalidArgument("train fraction must lie in (0, 1)");
  Split out;
  for (int z = 0; z < 2; ++z) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == z)
        members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::lround(train_fraction * static_cast<double>(members.size())));
    out.train.insert(out.train.end(), members.begin(), members.begin() + n_train);
    out.test.insert(out.test.end(), members.begin() + n_train, members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<double, double> mean_sd(const std::vector<double>& values) {
  if (values.empty())
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double sum = 0.0;
  for (double v : values)
    sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() == 1)
    return {mean, 0.0};
  double ss = 0.0;
  for (double v : values)
    ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

namespace {

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

std::string format_alpha(double a) {
  std::ostringstream os;
  os << a;
  return os.str();
}

std::vector<double> finite_only(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v)
    if (std::isfinite(x))
      out.push_back(x);
  return out;
}

} // namespace

bool ReportRow::operator==(const ReportRow& o) const {
  return method == o.method && same(alpha, o.alpha) && same(auc_mean, o.auc_mean) &&
         same(auc_sd, o.auc_sd) && same(mse_mean, o.mse_mean) && same(mse_sd, o.mse_sd) &&
         n_reps == o.n_reps && n_failures == o.n_failures && feature == o.feature;
}

// -------------------------------------------------------------- benchmark

BenchmarkReport run_benchmark(const BenchmarkConfig& config, const ProgressFn& progress) {
  return run_benchmark(config, generate_dataset(config.sim), progress);
}

BenchmarkReport run_benchmark(const BenchmarkConfig& config, const SimulatedDataset& data,
                              const ProgressFn& progress) {
  if (config.repetitions < 1)
    throw InvalidArgument("repetitions must be at least 1");
  if (config.methods.empty() || config.alphas.empty())
    throw InvalidArgument("benchmark needs at least one method and one missing ratio");
  MethodOptions options = config.options;
  if (config.use_sim_prior_means && !options.magic.prior_means)
    options.magic.prior_means = data.prior_means;

  std::vector<int> labels;
  for (const auto& s : data.samples)
    labels.push_back(s.label.value_or(-1));

  BenchmarkReport report;
  report.metadata = {{"seed", std::to_string(config.seed)},
                     {"sim_seed", std::to_string(config.sim.seed)},
                     {"repetitions", std::to_string(config.repetitions)},
                     {"train_fraction", format_alpha(config.train_fraction)},
                     {"samples", std::to_string(data.samples.size())},
                     {"grid_points", std::to_string(data.grid.size())},
                     {"num_basis", std::to_string(config.basis.num_basis())},
                     {"lambda", format_alpha(options.magic.lambda)}};

  const QuadratureBasis quad(data.grid, config.basis);
  struct Acc {
    std::vector<double> auc, mse;
    int failures = 0;
    double seconds = 0.0;
  };
  for (std::size_t ai = 0; ai < config.alphas.size(); ++ai) {
    const double alpha = config.alphas[ai];
    std::vector<Acc> acc(config.methods.size());
    for (int rep = 0; rep < config.repetitions; ++rep) {
      const std::uint64_t rep_seed =
          derive_seed(config.seed, {static_cast<std::uint64_t>(ai), static_cast<std::uint64_t>(rep)});
      Rng split_rng(derive_seed(rep_seed, {0}));
      const Split split = stratified_split(labels, config.train_fraction, split_rng);
      Rng mask_rng(derive_seed(rep_seed, {1}));
      std::vector<SampleSeries> masked;
      masked.reserve(data.samples.size());
      for (const auto& s : data.samples)
        masked.push_back(apply_missingness(s, alpha, mask_rng));
      std::vector<SampleSeries> train;
      for (std::size_t i : split.train)
        train.push_back(masked[i]);

      for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
        const Method method = config.methods[mi];
        const auto start = std::chrono::steady_clock::now();
        try {
          const FittedModel model = fit_method(method, data.grid, config.basis, train, options);
          std::vector<double> probs;
          std::vector<int> test_labels;
          std::vector<double> mses;
          for (std::size_t i : split.test) {
            const PredictionResult r = predict(model, masked[i], quad);
            probs.push_back(r.probability);
            test_labels.push_back(labels[i]);
            const auto hidden = unobserved_indices(masked[i], data.grid.size());
            if (!hidden.empty())
              mses.push_back(imputation_mse(r.curve, data.samples[i].obs_values, hidden));
          }
          acc[mi].auc.push_back(auc(probs, test_labels));
          acc[mi].mse.push_back(mses.empty() ? std::numeric_limits<double>::quiet_NaN()
                                             : mean_sd(mses).first);
          if (progress) {
            std::ostringstream os;
            os << method_name(method) << " alpha=" << alpha << " rep=" << rep + 1
               << " auc=" << acc[mi].auc.back() << " mse=" << acc[mi].mse.back();
            progress(os.str());
          }
        } catch (const Error& e) {
          ++acc[mi].failures;
          std::ostringstream os;
          os << method_name(method) << " alpha=" << alpha << " rep=" << rep + 1 << ": "
             << e.what();
          report.failures.push_back(os.str());
          if (progress)
            progress("failed: " + os.str());
        }
        acc[mi].seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
    }
    for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
      ReportRow row;
      row.method = method_name(config.methods[mi]);
      row.alpha = alpha;
      std::tie(row.auc_mean, row.auc_sd) = mean_sd(acc[mi].auc);
      std::tie(row.mse_mean, row.mse_sd) = mean_sd(finite_only(acc[mi].mse));
      row.n_reps = static_cast<int>(acc[mi].auc.size());
      row.n_failures = acc[mi].failures;
      row.feature = "simulation";
      report.rows.push_back(row);
      report.seconds.push_back(acc[mi].seconds);
    }
  }
  return report;
}

// ------------------------------------------------------------------ LOOCV

LoocvResult run_loocv(const TimeGrid& grid, const BasisConfig& basis,
                      const std::vector<SampleSeries>& samples, Method method,
                      const MethodOptions& options, const ProgressFn& progress) {
  std::array<int, 2> counts{0, 0};
  for (const auto& s : samples) {
    if (!s.label)
      throw DataError("LOOCV needs a label for sample '" + s.id + "'");
    ++counts[static_cast<std::size_t>(*s.label)];
  }
  if (counts[0] < 2 || counts[1] < 2)
    throw DataError("LOOCV needs at least two samples per class (got " +
                    std::to_string(counts[0]) + " and " + std::to_string(counts[1]) + ")");

  const QuadratureBasis quad(grid, basis);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  LoocvResult out;
  out.method = method;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.ids.push_back(samples[i].id);
    out.labels.push_back(*samples[i].label);
    std::vector<SampleSeries> train;
    train.reserve(samples.size() - 1);
    for (std::size_t j = 0; j < samples.size(); ++j)
      if (j != i)
        train.push_back(samples[j]);
    try {
      const FittedModel model = fit_method(method, grid, basis, train, options);
      const SampleSeries& held = samples[i];
      out.probabilities.push_back(predict(model, held, quad).probability);
      // Nested masking: hide each observed value once.
      std::vector<double> errs;
      for (std::size_t k = 0; k < held.obs_index.size(); ++k) {
        SampleSeries reduced;
        reduced.id = held.id;
        reduced.label = held.label;
        reduced.obs_values.resize(held.num_observed() - 1);
        for (std::size_t q = 0, w = 0; q < held.obs_index.size(); ++q) {
          if (q == k)
            continue;
          reduced.obs_index.push_back(held.obs_index[q]);
          reduced.obs_values[static_cast<Index>(w++)] = held.obs_values[static_cast<Index>(q)];
        }
        const PredictionResult r = predict(model, reduced, quad);
        const double d = r.curve[held.obs_index[k]] - held.obs_values[static_cast<Index>(k)];
        errs.push_back(d * d);
      }
      out.sample_mse.push_back(errs.empty() ? nan : mean_sd(errs).first);
      if (progress) {
        std::ostringstream os;
        os << method_name(method) << " fold " << i + 1 << "/" << samples.size()
           << " p=" << out.probabilities.back();
        progress(os.str());
      }
    } catch (const Error& e) {
      ++out.failures;
      out.failure_messages.push_back("fold " + std::to_string(i + 1) + ": " + e.what());
      out.probabilities.push_back(nan);
      out.sample_mse.push_back(nan);
      if (progress)
        progress("failed: " + out.failure_messages.back());
    }
  }
  return out;
}

LoocvResult combine_features(const std::vector<LoocvResult>& per_feature) {
  if (per_feature.empty())
    throw InvalidArgument("no per-feature results to combine");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  LoocvResult out;
  out.method = per_feature.front().method;
  const LoocvResult& first = per_feature.front();
  for (std::size_t i = 0; i < first.ids.size(); ++i) {
    std::vector<double> probs;
    std::vector<double> mses;
    bool everywhere = true;
    bool failed = false;
    for (const auto& r : per_feature) {
      const auto it = std::find(r.ids.begin(), r.ids.end(), first.ids[i]);
      if (it == r.ids.end()) {
        everywhere = false;
        break;
      }
      const auto j = static_cast<std::size_t>(it - r.ids.begin());
      if (std::isnan(r.probabilities[j]))
        failed = true;
      else
        probs.push_back(r.probabilities[j]);
      if (!std::isnan(r.sample_mse[j]))
        mses.push_back(r.sample_mse[j]);
    }
    if (!everywhere)
      continue;
    out.ids.push_back(first.ids[i]);
    out.labels.push_back(first.labels[i]);
    out.probabilities.push_back(failed ? nan : meta_combine(probs));
    out.sample_mse.push_back(mses.empty() ? nan : mean_sd(mses).first);
    if (failed)
      ++out.failures;
  }
  return out;
}

ReportRow loocv_row(const LoocvResult& result, const std::string& feature, double alpha) {
  ReportRow row;
  row.method = method_name(result.method);
  row.feature = feature;
  row.alpha = alpha;
  std::vector<double> probs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < result.probabilities.size(); ++i) {
    if (std::isnan(result.probabilities[i]))
      continue;
    probs.push_back(result.probabilities[i]);
    labels.push_back(result.labels[i]);
  }
  try {
    row.auc_mean = auc(probs, labels);
  } catch (const DataError&) {
    row.auc_mean = std::numeric_limits<double>::quiet_NaN();
  }
  row.auc_sd = 0.0;
  std::tie(row.mse_mean, row.mse_sd) = mean_sd(finite_only(result.sample_mse));
  row.n_reps = static_cast<int>(probs.size());
  row.n_failures = result.failures;
  return row;
}

} // namespace magic
