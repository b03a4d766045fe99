#include <gtest/gtest.h>

#include <set>

#include "magic/simgen_eval.hpp"
#include "oracles.hpp"

using namespace magic;

namespace {

SampleSeries complete_series(int n) {
  SampleSeries s;
  s.id = "full";
  s.label = 1;
  for (int i = 0; i < n; ++i)
    s.obs_index.push_back(i);
  s.obs_values = VectorXd::LinSpaced(n, 0.0, n - 1.0).array() * 10.0;
  return s;
}

BenchmarkConfig small_benchmark() {
  BenchmarkConfig c;
  c.sim.grid_last = 20;
  c.sim.per_class = 10;
  c.basis = BasisConfig::open_uniform(6, 0, 20);
  c.options.magic.max_iterations = 5;
  c.options.magic.optimizer.max_iterations = 50;
  c.alphas = {0.6};
  c.repetitions = 2;
  return c;
}

} // namespace

TEST(DeriveSeed, DeterministicAndStreamSensitive) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 20; ++a)
    for (std::uint64_t b = 0; b < 20; ++b)
      seen.insert(derive_seed(7, {a, b}));
  EXPECT_EQ(seen.size(), 400u);
  EXPECT_NE(derive_seed(1, {0}), derive_seed(2, {0}));
  EXPECT_NE(derive_seed(1, {1, 2}), derive_seed(1, {2, 1}));
}

TEST(SimConfigTest, Validation) {
  SimConfig c;
  c.per_class = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.noise_sd = -1;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = {};
  c.grid_last = c.grid_first;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(GenerateDataset, ShapeAndPriorMeans) {
  const SimulatedDataset d = generate_dataset(SimConfig{});
  EXPECT_EQ(d.grid.size(), 51);
  ASSERT_EQ(d.samples.size(), 150u);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_EQ(d.samples[i].num_observed(), 51);
    EXPECT_EQ(*d.samples[i].label, i < 75 ? 0 : 1);
  }
  EXPECT_NEAR(d.prior_means[0][1], 1.0, 1e-15);
  EXPECT_NEAR(d.prior_means[0][3], -1.0, 1e-15);
  EXPECT_EQ(d.prior_means[1], -d.prior_means[0]);
}

TEST(GenerateDataset, IndividualVarianceAroundClassMean) {
  const SimulatedDataset d = generate_dataset(SimConfig{});
  // Per-point spread around the class mean draw is theta_v^2 + sigma^2.
  double total = 0.0;
  int count = 0;
  for (const auto& s : d.samples) {
    const VectorXd r = s.obs_values - d.latent_means[static_cast<std::size_t>(*s.label)];
    total += r.squaredNorm();
    count += static_cast<int>(r.size());
  }
  const double var = total / count;
  EXPECT_GT(var, 80.0);
  EXPECT_LT(var, 120.0);
}

TEST(GenerateDataset, SeedDeterminism) {
  SimConfig c;
  c.per_class = 5;
  const SimulatedDataset a = generate_dataset(c), b = generate_dataset(c);
  EXPECT_EQ(a.samples, b.samples);
  c.seed = 2;
  EXPECT_FALSE(generate_dataset(c).samples == a.samples);
}

TEST(SampleGaussian, MomentsMatch) {
  oracle::Rng seed_rng(1);
  const MatrixXd cov = oracle::spd(seed_rng, 3, 0.5, 2.0);
  const VectorXd mean = (VectorXd(3) << 1, -2, 0.5).finished();
  Rng rng(2);
  const int n = 100000;
  VectorXd sum = VectorXd::Zero(3);
  MatrixXd outer = MatrixXd::Zero(3, 3);
  for (int i = 0; i < n; ++i) {
    const VectorXd x = sample_gaussian(mean, cov, rng);
    sum += x;
    outer += (x - mean) * (x - mean).transpose();
  }
  EXPECT_LE((sum / n - mean).cwiseAbs().maxCoeff(), 0.03);
  EXPECT_LE((outer / n - cov).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Missingness, BinStructureExhaustive) {
  for (int n = 1; n <= 60; ++n) {
    const SampleSeries full = complete_series(n);
    for (int a10 = 0; a10 < 10; ++a10) {
      const double alpha = a10 / 10.0;
      const long kept = std::lround((1.0 - alpha) * n);
      if (kept == 0) {
        EXPECT_THROW(apply_missingness(full, alpha, 1), InvalidArgument);
        continue;
      }
      const SampleSeries m = apply_missingness(full, alpha, derive_seed(3, {std::uint64_t(n), std::uint64_t(a10)}));
      ASSERT_EQ(m.num_observed(), kept);
      EXPECT_NO_THROW(m.validate(n));
      for (long b = 0; b < kept; ++b) {
        const Index idx = m.obs_index[static_cast<std::size_t>(b)];
        EXPECT_GE(idx, b * n / kept);
        EXPECT_LT(idx, (b + 1) * n / kept);
        EXPECT_EQ(m.obs_values[b], full.obs_values[idx]);
      }
      EXPECT_EQ(m.id, full.id);
      EXPECT_EQ(m.label, full.label);
    }
  }
  EXPECT_THROW(apply_missingness(complete_series(5), 1.0, 1), InvalidArgument);
}

TEST(Missingness, EveryPointInABinIsReachable) {
  const SampleSeries full = complete_series(10);
  std::set<Index> hit;
  for (std::uint64_t s = 0; s < 200; ++s)
    for (Index i : apply_missingness(full, 0.8, s).obs_index)
      hit.insert(i);
  EXPECT_EQ(hit.size(), 10u);
}

TEST(Auc, MatchesPairwiseOracleExhaustive) {
  oracle::Rng rng(4);
  int checked = 0;
  for (int n = 2; n <= 12; ++n) {
    for (int draw = 0; draw < 1000; ++draw) {
      std::vector<double> s;
      std::vector<int> z;
      for (int i = 0; i < n; ++i) {
        s.push_back(oracle::uniform_int(rng, 0, 4) * 0.25);
        z.push_back(oracle::uniform_int(rng, 0, 1));
      }
      const int ones = static_cast<int>(std::count(z.begin(), z.end(), 1));
      if (ones == 0 || ones == n) {
        EXPECT_THROW(auc(s, z), DegenerateLabelsError);
        continue;
      }
      EXPECT_EQ(auc(s, z), oracle::auc_pairs(s, z));
      ++checked;
    }
  }
  EXPECT_GT(checked, 9000);
}

TEST(Auc, KnownValuesAndErrors) {
  EXPECT_EQ(auc({0.1, 0.9}, {0, 1}), 1.0);
  EXPECT_EQ(auc({0.9, 0.1}, {0, 1}), 0.0);
  EXPECT_EQ(auc({0.5, 0.5}, {0, 1}), 0.5);
  EXPECT_THROW(auc({0.5}, {0, 1}), InvalidArgument);
  EXPECT_THROW(auc({0.5, 0.2}, {0, 2}), InvalidArgument);
}

TEST(ImputationMse, Values) {
  const VectorXd a = (VectorXd(4) << 1, 2, 3, 4).finished();
  const VectorXd b = (VectorXd(4) << 1, 0, 3, 0).finished();
  EXPECT_EQ(imputation_mse(a, b, {1, 3}), (4.0 + 16.0) / 2);
  EXPECT_EQ(imputation_mse(a, b, {0}), 0.0);
  EXPECT_THROW(imputation_mse(a, b, {}), InvalidArgument);
}

TEST(StratifiedSplit, CountsAndPartition) {
  oracle::Rng gen(5);
  for (int rep = 0; rep < 100; ++rep) {
    const int n0 = oracle::uniform_int(gen, 1, 30), n1 = oracle::uniform_int(gen, 1, 30);
    std::vector<int> labels(static_cast<std::size_t>(n0), 0);
    labels.insert(labels.end(), static_cast<std::size_t>(n1), 1);
    std::shuffle(labels.begin(), labels.end(), gen);
    const double frac = oracle::uniform(gen, 0.1, 0.9);
    Rng rng(static_cast<std::uint64_t>(rep));
    const Split s = stratified_split(labels, frac, rng);
    EXPECT_TRUE(std::is_sorted(s.train.begin(), s.train.end()));
    EXPECT_TRUE(std::is_sorted(s.test.begin(), s.test.end()));
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), labels.size());
    for (std::size_t i = 0; i < all.size(); ++i)
      EXPECT_EQ(all[i], i);
    for (int z = 0; z < 2; ++z) {
      const long nz = z == 0 ? n0 : n1;
      const auto in_train = std::count_if(s.train.begin(), s.train.end(),
                                          [&](std::size_t i) { return labels[i] == z; });
      EXPECT_EQ(in_train, std::lround(frac * nz));
    }
  }
}

TEST(MeanSd, Values) {
  EXPECT_EQ(mean_sd({2.0}), std::make_pair(2.0, 0.0));
  const auto [m, sd] = mean_sd({1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(m, 2.5);
  EXPECT_NEAR(sd, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_TRUE(std::isnan(mean_sd({}).first));
}

TEST(Benchmark, SingleRepetitionHasZeroSpread) {
  BenchmarkConfig c = small_benchmark();
  c.repetitions = 1;
  const BenchmarkReport r = run_benchmark(c);
  ASSERT_EQ(r.rows.size(), 3u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.n_reps + row.n_failures, 1);
    if (row.n_reps == 1) {
      EXPECT_EQ(row.auc_sd, 0.0);
      EXPECT_EQ(row.mse_sd, 0.0);
    }
    EXPECT_EQ(row.alpha, 0.6);
    EXPECT_EQ(row.feature, "simulation");
  }
  EXPECT_EQ(r.rows[0].method, "magic");
}

TEST(Benchmark, Deterministic) {
  const BenchmarkConfig c = small_benchmark();
  const BenchmarkReport a = run_benchmark(c);
  const BenchmarkReport b = run_benchmark(c);
  EXPECT_TRUE(a == b);
  for (const auto& row : a.rows) {
    EXPECT_GE(row.auc_mean, 0.0);
    EXPECT_LE(row.auc_mean, 1.0);
    EXPECT_GT(row.mse_mean, 0.0);
  }
}

TEST(Loocv, StructureAndCombination) {
  SimConfig sc;
  sc.grid_last = 15;
  sc.per_class = 4;
  const SimulatedDataset d = generate_dataset(sc);
  std::vector<SampleSeries> s;
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    s.push_back(apply_missingness(d.samples[i], 0.6, derive_seed(1, {i})));
  MethodOptions o;
  o.magic.max_iterations = 3;
  const BasisConfig b = BasisConfig::open_uniform(5, 0, 15);
  const LoocvResult r = run_loocv(d.grid, b, s, Method::Sgp, o);
  ASSERT_EQ(r.ids.size(), 8u);
  EXPECT_EQ(r.probabilities.size(), 8u);
  EXPECT_EQ(r.failures, 0);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_GE(r.probabilities[i], 0.0);
    EXPECT_LE(r.probabilities[i], 1.0);
    EXPECT_TRUE(std::isfinite(r.sample_mse[i]));
  }
  const ReportRow row = loocv_row(r, "f1", 0.6);
  EXPECT_EQ(row.n_reps, 8);
  EXPECT_EQ(row.method, "sgp");

  // Meta combination averages over ids present in both features.
  LoocvResult other = r;
  other.ids.pop_back();
  other.labels.pop_back();
  other.sample_mse.pop_back();
  for (double& p : other.probabilities)
    p = 1.0 - p;
  other.probabilities.pop_back();
  const LoocvResult meta = combine_features({r, other});
  ASSERT_EQ(meta.ids.size(), 7u);
  for (double p : meta.probabilities)
    EXPECT_NEAR(p, 0.5, 1e-15);

  std::vector<SampleSeries> too_few(s.begin(), s.begin() + 5);
  EXPECT_THROW(run_loocv(d.grid, b, too_few, Method::Sgp, o), DataError);
}
