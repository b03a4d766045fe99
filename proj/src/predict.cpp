#include "magic/predict.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>

namespace magic {

std::string method_name(Method m) {
  switch (m) {
  case Method::Magic:
    return "magic";
  case Method::Sgp:
    return "sgp";
  case Method::Mtgp:
    return "mtgp";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "magic")
    return Method::Magic;
  if (s == "sgp")
    return Method::Sgp;
  if (s == "mtgp")
    return Method::Mtgp;
  throw InvalidArgument("unknown method '" + name + "'");
}

void ClassPrior::validate() const {
  if (!(p0 >= 0.0 && p1 >= 0.0) || std::abs(p0 + p1 - 1.0) > 1e-12)
    throw InvalidArgument("class prior must be two non-negative probabilities summing to 1");
}

ClassPrior ClassPrior::from_labels(const std::vector<SampleSeries>& samples) {
  double n1 = 0.0;
  double n = 0.0;
  for (const auto& s : samples) {
    if (!s.label)
      continue;
    n1 += *s.label;
    n += 1.0;
  }
  if (n == 0.0)
    throw DataError("class prior needs labelled samples");
  return {1.0 - n1 / n, n1 / n};
}

const ClassPosterior& FittedModel::posterior_for(int z) const {
  if (z != 0 && z != 1)
    throw InvalidArgument("class must be 0 or 1");
  return num_groups == 2 ? posteriors[static_cast<std::size_t>(z)] : posteriors[0];
}

MatrixXd predictive_covariance(const FittedModel& model, int z) {
  MatrixXd s = model.posterior_for(z).covariance +
               rbf_kernel(model.params.individual_kernel, model.grid.points());
  s.diagonal().array() += model.params.noise_variance;
  return s;
}

double class_marginal(const SampleSeries& sample, int z, const FittedModel& model) {
  sample.validate(model.grid.size());
  const auto& obs = sample.obs_index;
  if (obs.empty())
    return 0.0;
  const ClassPosterior& post = model.posterior_for(z);
  // Only the observed block of Sigma~ is needed.
  const VectorXd t_o = sample.obs_times(model.grid);
  MatrixXd s = gather(post.covariance, obs, obs) + rbf_kernel(model.params.individual_kernel, t_o);
  s.diagonal().array() += model.params.noise_variance;
  const StabilizedCholesky<double> chol(s);
  const VectorXd r = sample.obs_values - gather(post.mean, obs);
  const double n = static_cast<double>(obs.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + chol.log_det() + r.dot(chol.solve(r)));
}

int map_classify(const SampleSeries& sample, const FittedModel& model, const ClassPrior& prior) {
  prior.validate();
  const double s0 = class_marginal(sample, 0, model) + std::log(prior.p0);
  const double s1 = class_marginal(sample, 1, model) + std::log(prior.p1);
  return s1 > s0 ? 1 : 0;
}

ImputedCurve impute_new(const SampleSeries& sample, int z, const FittedModel& model) {
  sample.validate(model.grid.size());
  const ClassPosterior& post = model.posterior_for(z);
  const MatrixXd sigma = predictive_covariance(model, z);
  const auto& obs = sample.obs_index;
  ImputedCurve out{post.mean, sigma.diagonal()};
  if (obs.empty())
    return out;
  const auto un = unobserved_indices(sample, model.grid.size());
  for (std::size_t k = 0; k < obs.size(); ++k) {
    out.mean[obs[k]] = sample.obs_values[static_cast<Index>(k)];
    out.variance[obs[k]] = 0.0;
  }
  if (un.empty())
    return out;
  const StabilizedCholesky<double> chol(gather(sigma, obs, obs));
  const MatrixXd s_ou = gather(sigma, obs, un);
  const VectorXd alpha = chol.solve(sample.obs_values - gather(post.mean, obs));
  const MatrixXd h = chol.half_solve(s_ou);
  const VectorXd mean_u = gather(post.mean, un) + s_ou.transpose() * alpha;
  const VectorXd var_u = gather(VectorXd(sigma.diagonal()), un) - h.colwise().squaredNorm().transpose();
  for (std::size_t k = 0; k < un.size(); ++k) {
    out.mean[un[k]] = mean_u[static_cast<Index>(k)];
    out.variance[un[k]] = std::max(var_u[static_cast<Index>(k)], 0.0);
  }
  return out;
}

double predict_prob(const FittedModel& model, const VectorXd& curve, const QuadratureBasis& quad) {
  return flr_prob(model.params.beta, functional_covariate(curve, quad));
}

double meta_combine(const std::vector<double>& probs) {
  if (probs.empty())
    throw InvalidArgument("meta_combine needs at least one probability");
  double sum = 0.0;
  for (double p : probs)
    sum += p;
  return sum / static_cast<double>(probs.size());
}

PredictionResult predict(const FittedModel& model, const SampleSeries& sample) {
  return predict(model, sample, model.quadrature());
}

PredictionResult predict(const FittedModel& model, const SampleSeries& sample,
                         const QuadratureBasis& quad) {
  model.prior.validate();
  PredictionResult r;
  r.no_observations = sample.obs_index.empty();
  const double ninf = -std::numeric_limits<double>::infinity();
  for (int z = 0; z < 2; ++z) {
    const double p = model.prior[z];
    r.map_log_scores[static_cast<std::size_t>(z)] =
        (p > 0.0 ? std::log(p) : ninf) + class_marginal(sample, z, model);
  }
  r.assigned_class = r.map_log_scores[1] > r.map_log_scores[0] ? 1 : 0;
  ImputedCurve c = impute_new(sample, r.assigned_class, model);
  r.probability = predict_prob(model, c.mean, quad);
  r.curve = std::move(c.mean);
  r.variance = std::move(c.variance);
  return r;
}

} // namespace magic
