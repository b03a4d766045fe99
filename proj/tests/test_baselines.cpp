#include <gtest/gtest.h>

#include "magic/baselines.hpp"
#include "magic/simgen_eval.hpp"
#include "oracles.hpp"

using namespace magic;

namespace {

std::vector<SampleSeries> gp_samples(const TimeGrid& grid, const KernelParams& k, double noise,
                                     int count, double alpha, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd cov = rbf_kernel(k, grid.points());
  cov.diagonal().array() += noise;
  std::vector<SampleSeries> out;
  for (int i = 0; i < count; ++i) {
    SampleSeries full;
    full.id = "g" + std::to_string(i);
    full.label = i % 2;
    for (Index j = 0; j < grid.size(); ++j)
      full.obs_index.push_back(j);
    full.obs_values = sample_gaussian(VectorXd::Zero(grid.size()), cov, rng);
    out.push_back(alpha > 0 ? apply_missingness(full, alpha, rng) : full);
  }
  return out;
}

MethodOptions quick() {
  MethodOptions o;
  o.magic.max_iterations = 10;
  return o;
}

} // namespace

TEST(SgpHyperTest, RecoversLengthScale) {
  const TimeGrid grid = TimeGrid::integers(0, 30);
  const KernelParams truth{2.0, 3.0};
  const auto samples = gp_samples(grid, truth, 0.01, 30, 0.5, 1);
  const SgpHyper h = fit_sgp_hyper(grid, samples, VectorXd::Zero(31), MagicOptions{});
  EXPECT_GT(h.kernel.length_scale, truth.length_scale / 2);
  EXPECT_LT(h.kernel.length_scale, truth.length_scale * 2);
  EXPECT_GT(h.kernel.amplitude, truth.amplitude / 2);
  EXPECT_LT(h.kernel.amplitude, truth.amplitude * 2);
}

TEST(SgpHyperTest, LikelihoodIsOptimal) {
  // No nearby hyperparameter scores higher than the returned one.
  const TimeGrid grid = TimeGrid::integers(0, 15);
  const auto samples = gp_samples(grid, {1.0, 2.0}, 0.05, 10, 0.4, 2);
  const SgpHyper h = fit_sgp_hyper(grid, samples, VectorXd::Zero(16), MagicOptions{});
  auto ll = [&](const KernelParams& k, double noise) {
    double total = 0.0;
    for (const auto& s : samples) {
      const VectorXd t = s.obs_times(grid);
      MatrixXd c = oracle::rbf(t, t, k.amplitude, k.length_scale);
      c.diagonal().array() += noise;
      total += oracle::mvn_logpdf(s.obs_values, VectorXd::Zero(t.size()), c);
    }
    return total;
  };
  EXPECT_NEAR(h.log_likelihood, ll(h.kernel, h.noise_variance), 1e-8);
  for (double f : {0.97, 1.03}) {
    EXPECT_LE(ll({h.kernel.amplitude * f, h.kernel.length_scale}, h.noise_variance), h.log_likelihood + 1e-8);
    EXPECT_LE(ll({h.kernel.amplitude, h.kernel.length_scale * f}, h.noise_variance), h.log_likelihood + 1e-8);
    EXPECT_LE(ll(h.kernel, h.noise_variance * f), h.log_likelihood + 1e-8);
  }
}

TEST(Sgp, FullyObservedEqualsPlainLogisticFit) {
  const TimeGrid grid = TimeGrid::integers(0, 20);
  const BasisConfig basis = BasisConfig::open_uniform(6, 0, 20);
  const auto samples = gp_samples(grid, {1.0, 4.0}, 0.01, 16, 0.0, 3);
  const FittedModel m = fit_sgp(grid, basis, samples);
  const QuadratureBasis q(grid, basis);
  std::vector<FunctionalCovariate> x;
  std::vector<int> z;
  for (const auto& s : samples) {
    x.push_back(functional_covariate(s.obs_values, q));
    z.push_back(*s.label);
  }
  EXPECT_EQ(m.params.beta, fit_flr(x, z, 1.0));
  EXPECT_EQ(m.num_groups, 1);
  EXPECT_EQ(m.posteriors[0].covariance.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Sgp, PredictionIsPerSampleGp) {
  const TimeGrid grid = TimeGrid::integers(0, 20);
  const BasisConfig basis = BasisConfig::open_uniform(6, 0, 20);
  const auto train = gp_samples(grid, {1.0, 4.0}, 0.01, 12, 0.5, 4);
  const FittedModel m = fit_sgp(grid, basis, train);
  const SampleSeries s = gp_samples(grid, {1.0, 4.0}, 0.01, 1, 0.6, 5)[0];
  const auto hidden = unobserved_indices(s, grid.size());
  const GaussianOnGrid ref = sgp_posterior(s.obs_times(grid), s.obs_values, gather(grid.points(), hidden),
                                           m.params.individual_kernel, m.params.noise_variance);
  const PredictionResult r = predict(m, s);
  for (std::size_t k = 0; k < hidden.size(); ++k)
    EXPECT_NEAR(r.curve[hidden[k]], ref.mean[static_cast<Index>(k)], 1e-10);
}

TEST(Sgp, PooledMeanOption) {
  const TimeGrid grid = TimeGrid::integers(0, 10);
  auto samples = gp_samples(grid, {1.0, 3.0}, 0.01, 8, 0.3, 6);
  for (auto& s : samples)
    s.obs_values.array() += 5.0;
  MethodOptions o;
  o.sgp_pooled_mean = true;
  const FittedModel m = fit_sgp(grid, BasisConfig::open_uniform(4, 0, 10), samples, o);
  EXPECT_NEAR(m.posteriors[0].mean[0], 5.0, 1.0);
  EXPECT_EQ(m.posteriors[0].mean.maxCoeff(), m.posteriors[0].mean.minCoeff());
}

TEST(Mtgp, SharedMeanAndSingleGroup) {
  SimConfig c;
  c.grid_last = 20;
  c.per_class = 8;
  const SimulatedDataset d = generate_dataset(c);
  std::vector<SampleSeries> s;
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    s.push_back(apply_missingness(d.samples[i], 0.5, derive_seed(9, {i})));
  const FittedModel m = fit_mtgp(d.grid, BasisConfig::open_uniform(6, 0, 20), s, quick());
  EXPECT_EQ(m.method, Method::Mtgp);
  EXPECT_EQ(m.num_groups, 1);
  EXPECT_EQ(m.posteriors[1].mean.size(), 0);
  EXPECT_EQ(m.posteriors[0].mean.size(), 21);
  for (std::size_t r = 1; r < m.q_history.size(); ++r)
    EXPECT_GE(m.q_history[r], m.q_history[r - 1]);
  EXPECT_EQ(&m.posterior_for(1), &m.posterior_for(0));
}

TEST(Mtgp, SingleSampleFitsCommonMean) {
  const TimeGrid grid = TimeGrid::integers(0, 10);
  const auto s = gp_samples(grid, {1.0, 3.0}, 0.01, 1, 0.0, 7);
  const TrainingData data(grid, BasisConfig::open_uniform(4, 0, 10), s, false);
  MagicOptions o;
  o.class_split = false;
  o.label_term = false;
  o.roughness_weight = 0.0;
  o.max_iterations = 5;
  const EMState st = fit(data, o);
  EXPECT_TRUE(st.posteriors[0].mean.allFinite());
  EXPECT_EQ(st.posteriors[1].mean.size(), 0);
}

TEST(FitMethod, Dispatch) {
  const TimeGrid grid = TimeGrid::integers(0, 10);
  const auto s = gp_samples(grid, {1.0, 3.0}, 0.01, 6, 0.3, 8);
  const BasisConfig b = BasisConfig::open_uniform(4, 0, 10);
  EXPECT_EQ(fit_method(Method::Sgp, grid, b, s).method, Method::Sgp);
  EXPECT_EQ(fit_method(Method::Mtgp, grid, b, s, quick()).method, Method::Mtgp);
  const FittedModel m = fit_method(Method::Magic, grid, b, s, quick());
  EXPECT_EQ(m.method, Method::Magic);
  EXPECT_EQ(m.num_groups, 2);
}

TEST(FitMethod, UnlabeledTrainingIsDataError) {
  const TimeGrid grid = TimeGrid::integers(0, 10);
  auto s = gp_samples(grid, {1.0, 3.0}, 0.01, 4, 0.3, 9);
  s[2].label.reset();
  const BasisConfig b = BasisConfig::open_uniform(4, 0, 10);
  for (Method m : {Method::Magic, Method::Sgp, Method::Mtgp})
    EXPECT_THROW(fit_method(m, grid, b, s, quick()), DataError);
}
