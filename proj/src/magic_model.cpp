#include "magic/magic_model.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace magic {

// ---------------------------------------------------------------- samples

void SampleSeries::validate(Index grid_size) const {
  if (static_cast<Index>(obs_index.size()) != obs_values.size())
    throw InvalidArgument("sample '" + id + "': index and value counts differ");
  for (std::size_t k = 0; k < obs_index.size(); ++k) {
    if (obs_index[k] < 0 || obs_index[k] >= grid_size)
      throw InvalidArgument("sample '" + id + "': observation outside the grid");
    if (k > 0 && obs_index[k] <= obs_index[k - 1])
      throw InvalidArgument("sample '" + id + "': observation times must be strictly increasing");
  }
  if (!obs_values.allFinite())
    throw InvalidArgument("sample '" + id + "': non-finite value");
  if (label && *label != 0 && *label != 1)
    throw InvalidArgument("sample '" + id + "': label must be 0 or 1");
}

VectorXd SampleSeries::obs_times(const TimeGrid& grid) const {
  return gather(grid.points(), obs_index);
}

SampleSeries make_series(const TimeGrid& grid, std::string id, const VectorXd& times,
                         const VectorXd& values, std::optional<int> label, double tol) {
  if (times.size() != values.size())
    throw InvalidArgument("sample '" + id + "': times and values differ in length");
  SampleSeries s;
  s.id = std::move(id);
  s.label = label;
  s.obs_index.reserve(static_cast<std::size_t>(times.size()));
  for (Index k = 0; k < times.size(); ++k) {
    const Index g = grid.find(times[k], tol);
    if (g < 0) {
      std::ostringstream os;
      os << "sample '" << s.id << "': time " << times[k] << " is not on the grid";
      throw DomainError(os.str());
    }
    s.obs_index.push_back(g);
  }
  s.obs_values = values;
  s.validate(grid.size());
  return s;
}

std::vector<Index> unobserved_indices(const SampleSeries& sample, Index grid_size) {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(grid_size) - sample.obs_index.size());
  std::size_t k = 0;
  for (Index g = 0; g < grid_size; ++g) {
    if (k < sample.obs_index.size() && sample.obs_index[k] == g)
      ++k;
    else
      out.push_back(g);
  }
  return out;
}

// -------------------------------------------------------------- roughness

RoughnessPenalty build_roughness(const TimeGrid& grid, double weight) {
  const Index n = grid.size();
  if (n < 3)
    throw InvalidArgument("roughness penalty needs a grid of at least 3 points");
  if (!(weight >= 0.0))
    throw InvalidArgument("roughness weight must be non-negative");
  RoughnessPenalty p;
  p.weight = weight;
  p.d = MatrixXd::Zero(n - 2, n);
  for (Index k = 0; k + 2 < n; ++k) {
    p.d(k, k) = 1.0;
    p.d(k, k + 1) = -2.0;
    p.d(k, k + 2) = 1.0;
  }
  p.r = weight * (p.d.transpose() * p.d);
  return p;
}

RoughnessPenalty no_roughness(Index grid_size) {
  RoughnessPenalty p;
  p.d = MatrixXd::Zero(0, grid_size);
  p.r = MatrixXd::Zero(grid_size, grid_size);
  return p;
}

// ------------------------------------------------------------ label terms

double taylor_label_term(const TaylorMoments& m) {
  const double u = m.u;
  const double v = m.v;
  // D = 1 + e^U (1 + V/2); returns log D - (V/2) (e^U / D)^2.
  double log_d;
  double ratio;  // e^U / D
  if (u > 0.0) {
    const double e = std::exp(-u);
    log_d = u + std::log(e + 1.0 + 0.5 * v);
    ratio = 1.0 / (e + 1.0 + 0.5 * v);
  } else {
    const double e = std::exp(u);
    log_d = std::log1p(e * (1.0 + 0.5 * v));
    ratio = e / (1.0 + e * (1.0 + 0.5 * v));
  }
  return log_d - 0.5 * v * ratio * ratio;
}

double label_likelihood(const TaylorMoments& m, int z) {
  return z * m.u - taylor_label_term(m);
}

MatrixXd class_kernel_matrix(const TimeGrid& grid, const KernelParams& params, double nugget) {
  MatrixXd k = rbf_kernel(params, grid.points());
  k.diagonal().array() += nugget * params.variance();
  return k;
}

// ---------------------------------------------------------- training data

TrainingData::TrainingData(TimeGrid grid, BasisConfig basis, std::vector<SampleSeries> samples,
                           bool class_split)
    : grid_(std::move(grid)), quad_(grid_, basis), samples_(std::move(samples)),
      num_groups_(class_split ? 2 : 1) {
  if (samples_.empty())
    throw DataError("training data is empty");
  unobserved_.reserve(samples_.size());
  groups_.reserve(samples_.size());
  for (const auto& s : samples_) {
    s.validate(grid_.size());
    if (s.num_observed() == 0)
      throw DataError("sample '" + s.id + "' has no observations");
    if (class_split && !s.label)
      throw DataError("sample '" + s.id + "' has no label");
    unobserved_.push_back(unobserved_indices(s, grid_.size()));
    groups_.push_back(class_split ? *s.label : 0);
  }
}

std::size_t TrainingData::group_count(int g) const {
  return static_cast<std::size_t>(std::count(groups_.begin(), groups_.end(), g));
}

double TrainingData::pooled_mean() const {
  double sum = 0.0;
  double n = 0.0;
  for (const auto& s : samples_) {
    sum += s.obs_values.sum();
    n += static_cast<double>(s.obs_values.size());
  }
  return sum / n;
}

double TrainingData::pooled_variance() const {
  const double mean = pooled_mean();
  double ss = 0.0;
  double n = 0.0;
  for (const auto& s : samples_) {
    ss += (s.obs_values.array() - mean).square().sum();
    n += static_cast<double>(s.obs_values.size());
  }
  return n > 1.0 ? ss / (n - 1.0) : 0.0;
}

// ----------------------------------------------------------------- E-step

namespace {

// Posterior of mu ~ N(m, K) under an extra Gaussian factor
// exp(-1/2 mu^T A mu + b^T mu), computed as
// K~ = K - K L (I + L^T K L)^{-1} L^T K with A = L L^T.
ClassPosterior posterior_from_precision(const MatrixXd& k, const VectorXd& m, const MatrixXd& a,
                                        const VectorXd& b) {
  const Index n = k.rows();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
  const VectorXd& evals = es.eigenvalues();
  const double cutoff = std::max(evals.cwiseAbs().maxCoeff(), 1.0) * 1e-14;
  std::vector<Index> keep;
  for (Index j = 0; j < n; ++j)
    if (evals[j] > cutoff)
      keep.push_back(j);

  ClassPosterior post;
  if (keep.empty()) {
    post.mean = m;
    post.covariance = k;
    return post;
  }
  MatrixXd l(n, static_cast<Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c)
    l.col(static_cast<Index>(c)) = es.eigenvectors().col(keep[c]) * std::sqrt(evals[keep[c]]);
  const MatrixXd kl = k * l;
  MatrixXd inner = l.transpose() * kl;
  inner.diagonal().array() += 1.0;
  const StabilizedCholesky<double> chol(inner);
  const MatrixXd h = chol.half_solve(kl.transpose());
  post.covariance = k;
  post.covariance.noalias() -= h.transpose() * h;
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
  post.mean = m + post.covariance * (b - a * m);
  return post;
}

const VectorXd& prior_mean_or_throw(const ModelParams& params, int g, Index n) {
  const VectorXd& m = params.prior_means[static_cast<std::size_t>(g)];
  if (m.size() != n)
    throw InvalidArgument("class prior mean does not match the grid");
  return m;
}

} // namespace

std::array<ClassPosterior, 2> e_step(const TrainingData& data, const ModelParams& params,
                                     const RoughnessPenalty& penalty, double nugget,
                                     EStepReport* report) {
  const Index n = data.grid().size();
  if (penalty.r.rows() != n || penalty.r.cols() != n)
    throw InvalidArgument("roughness penalty does not match the grid");
  params.individual_kernel.validate();
  const MatrixXd kfull = rbf_kernel(params.individual_kernel, data.grid().points());

  std::array<MatrixXd, 2> a{penalty.r, penalty.r};
  std::array<VectorXd, 2> b{VectorXd::Zero(n), VectorXd::Zero(n)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& obs = data.observed(i);
    const int g = data.group(i);
    MatrixXd s = gather(kfull, obs, obs);
    s.diagonal().array() += params.noise_variance;
    const MatrixXd s_inv = StabilizedCholesky<double>(s).inverse();
    const VectorXd s_inv_y = s_inv * data.samples()[i].obs_values;
    auto& ag = a[static_cast<std::size_t>(g)];
    auto& bg = b[static_cast<std::size_t>(g)];
    for (std::size_t q = 0; q < obs.size(); ++q) {
      bg[obs[q]] += s_inv_y[static_cast<Index>(q)];
      for (std::size_t p = 0; p < obs.size(); ++p)
        ag(obs[p], obs[q]) += s_inv(static_cast<Index>(p), static_cast<Index>(q));
    }
  }

  std::array<ClassPosterior, 2> out;
  for (int g = 0; g < data.num_groups(); ++g) {
    const auto gi = static_cast<std::size_t>(g);
    if (report)
      report->empty_group[gi] = data.group_count(g) == 0;
    const MatrixXd k = class_kernel_matrix(data.grid(), params.class_kernels[gi], nugget);
    out[gi] = posterior_from_precision(k, prior_mean_or_throw(params, g, n), a[gi], b[gi]);
  }
  return out;
}

// ---------------------------------------------------------------- moments

VectorXd imputed_training_curve(const SampleSeries& sample, const std::vector<Index>& unobserved,
                                const ClassPosterior& post, const ModelParams& params,
                                const TimeGrid& grid) {
  const auto& obs = sample.obs_index;
  VectorXd f(grid.size());
  for (std::size_t k = 0; k < obs.size(); ++k)
    f[obs[k]] = sample.obs_values[static_cast<Index>(k)];
  if (unobserved.empty())
    return f;
  const VectorXd t_o = gather(grid.points(), obs);
  const VectorXd t_u = gather(grid.points(), unobserved);
  const GaussianOnGrid cond =
      sgp_posterior(t_o, sample.obs_values, gather(post.mean, obs), t_u,
                    gather(post.mean, unobserved), params.individual_kernel,
                    params.noise_variance);
  for (std::size_t k = 0; k < unobserved.size(); ++k)
    f[unobserved[k]] = cond.mean[static_cast<Index>(k)];
  return f;
}

MatrixXd imputed_curve_covariance(const SampleSeries& sample, const std::vector<Index>& unobserved,
                                  const ClassPosterior& post, const ModelParams& params,
                                  const TimeGrid& grid) {
  const Index n = grid.size();
  const auto& obs = sample.obs_index;
  MatrixXd c = MatrixXd::Zero(n, n);
  if (unobserved.empty())
    return c;
  const VectorXd t_o = gather(grid.points(), obs);
  const VectorXd t_u = gather(grid.points(), unobserved);
  MatrixXd s = rbf_kernel(params.individual_kernel, t_o);
  s.diagonal().array() += params.noise_variance;
  const MatrixXd k_uo = rbf_kernel(params.individual_kernel, t_u, t_o);
  const MatrixXd bmat = StabilizedCholesky<double>(s).solve(k_uo.transpose()).transpose();
  const MatrixXd kuu = gather(post.covariance, unobserved, unobserved);
  const MatrixXd kou = gather(post.covariance, obs, unobserved);
  const MatrixXd koo = gather(post.covariance, obs, obs);
  MatrixXd block = kuu - bmat * kou - kou.transpose() * bmat.transpose() +
                   bmat * koo * bmat.transpose();
  block = 0.5 * (block + block.transpose());
  for (std::size_t q = 0; q < unobserved.size(); ++q)
    for (std::size_t p = 0; p < unobserved.size(); ++p)
      c(unobserved[p], unobserved[q]) = block(static_cast<Index>(p), static_cast<Index>(q));
  return c;
}

namespace {

// Per-sample pieces shared by Q evaluations: series term and (U, V).
struct SampleEval {
  double series = 0.0;
  TaylorMoments moments;
};

// kfull = K_theta on the whole grid; g = W Phi beta1 on the grid.
SampleEval evaluate_sample(const SampleSeries& sample, const std::vector<Index>& unobserved,
                           const ClassPosterior& post, const MatrixXd& kfull,
                           double noise_variance, bool with_label, const VectorXd& g,
                           double beta0) {
  const auto& obs = sample.obs_index;
  MatrixXd s = gather(kfull, obs, obs);
  s.diagonal().array() += noise_variance;
  const StabilizedCholesky<double> chol(s);
  const VectorXd r = sample.obs_values - gather(post.mean, obs);
  const VectorXd alpha = chol.solve(r);
  const MatrixXd kt_oo = gather(post.covariance, obs, obs);

  SampleEval out;
  out.series = -0.5 * (chol.log_det() + chol.solve(kt_oo).trace() + r.dot(alpha));
  if (!with_label)
    return out;

  double u = beta0;
  for (std::size_t k = 0; k < obs.size(); ++k)
    u += g[obs[k]] * sample.obs_values[static_cast<Index>(k)];
  if (unobserved.empty()) {
    out.moments = {u, 0.0};
    return out;
  }
  const MatrixXd k_uo = gather(kfull, unobserved, obs);
  const VectorXd g_u = gather(g, unobserved);
  const VectorXd f_u = gather(post.mean, unobserved) + k_uo * alpha;
  u += g_u.dot(f_u);
  // Linear functional of mu: a_u = g_u, a_o = -S^{-1} K_ou g_u.
  const VectorXd a_o = -chol.solve(k_uo.transpose() * g_u);
  VectorXd a = VectorXd::Zero(kfull.rows());
  for (std::size_t k = 0; k < unobserved.size(); ++k)
    a[unobserved[k]] = g_u[static_cast<Index>(k)];
  for (std::size_t k = 0; k < obs.size(); ++k)
    a[obs[k]] = a_o[static_cast<Index>(k)];
  const double v = a.dot(post.covariance * a);
  out.moments = {u, std::max(v, 0.0)};
  return out;
}

VectorXd weighted_coefficient_curve(const QuadratureBasis& quad, const LogisticCoefficients& beta) {
  if (beta.num_basis() != quad.num_basis())
    throw InvalidArgument("coefficient vector does not match the basis");
  return quad.weighted_basis() * beta.weights();
}

struct SampleTermSums {
  double series = 0.0;
  double label = 0.0;
};

SampleTermSums sum_sample_terms(const TrainingData& data, const ModelParams& params,
                                const std::array<ClassPosterior, 2>& posteriors, bool with_label) {
  const MatrixXd kfull = rbf_kernel(params.individual_kernel, data.grid().points());
  VectorXd g;
  if (with_label)
    g = weighted_coefficient_curve(data.quadrature(), params.beta);
  SampleTermSums sums;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& post = posteriors[static_cast<std::size_t>(data.group(i))];
    const SampleEval e =
        evaluate_sample(data.samples()[i], data.unobserved(i), post, kfull,
                        params.noise_variance, with_label, g,
                        with_label ? params.beta.intercept() : 0.0);
    sums.series += e.series;
    if (with_label)
      sums.label += label_likelihood(e.moments, data.label(i));
  }
  return sums;
}

} // namespace

TaylorMoments compute_moments(const SampleSeries& sample, const std::vector<Index>& unobserved,
                              const ClassPosterior& post, const ModelParams& params,
                              const QuadratureBasis& quad) {
  const MatrixXd kfull = rbf_kernel(params.individual_kernel, quad.grid().points());
  const VectorXd g = weighted_coefficient_curve(quad, params.beta);
  return evaluate_sample(sample, unobserved, post, kfull, params.noise_variance, true, g,
                         params.beta.intercept())
      .moments;
}

// ------------------------------------------------------------- Q function

double expected_quadratic_form(const VectorXd& post_mean, const MatrixXd& post_cov,
                               const VectorXd& mean, const MatrixXd& cov) {
  const StabilizedCholesky<double> chol(cov);
  const VectorXd d = post_mean - mean;
  return chol.solve(post_cov).trace() + d.dot(chol.solve(d));
}

double class_prior_term(const ClassPosterior& post, const VectorXd& prior_mean,
                        const MatrixXd& class_kernel) {
  const StabilizedCholesky<double> chol(class_kernel);
  const VectorXd d = post.mean - prior_mean;
  const VectorXd kd = chol.solve(d);
  return -0.5 * (chol.log_det() + chol.solve(post.covariance).trace() + d.dot(kd));
}

QBreakdown q_function(const TrainingData& data, const ModelParams& params,
                      const std::array<ClassPosterior, 2>& posteriors,
                      const RoughnessPenalty& penalty, const MagicOptions& options) {
  QBreakdown q;
  const SampleTermSums sums = sum_sample_terms(data, params, posteriors, options.label_term);
  q.series = sums.series;
  q.label = sums.label;
  const Index n = data.grid().size();
  for (int g = 0; g < data.num_groups(); ++g) {
    const auto gi = static_cast<std::size_t>(g);
    const auto& post = posteriors[gi];
    const MatrixXd k =
        class_kernel_matrix(data.grid(), params.class_kernels[gi], options.class_kernel_nugget);
    q.prior[gi] = class_prior_term(post, prior_mean_or_throw(params, g, n), k);
    q.entropy += 0.5 * StabilizedCholesky<double>(post.covariance).log_det();
    q.roughness -= 0.5 * (post.mean.dot(penalty.r * post.mean) +
                          (penalty.r.cwiseProduct(post.covariance)).sum());
  }
  if (options.label_term)
    q.ridge = 0.5 * options.lambda * params.beta.weights().squaredNorm();
  return q;
}

// ----------------------------------------------------------------- M-step

ModelParams initial_params(const TrainingData& data, const MagicOptions& options) {
  const Index n = data.grid().size();
  double var = data.pooled_variance();
  if (!(var > 0.0) || !std::isfinite(var))
    var = 1.0;
  const KernelParams init{std::sqrt(var), std::max(0.3 * data.grid().span(), 1e-3)};
  ModelParams p;
  p.class_kernels = {init, init};
  p.individual_kernel = init;
  p.noise_variance = std::clamp(0.1 * var, options.noise_lower, options.noise_upper);
  p.beta = LogisticCoefficients(data.quadrature().num_basis());
  if (options.prior_means) {
    p.prior_means = *options.prior_means;
    for (const auto& m : p.prior_means)
      if (m.size() != n)
        throw InvalidArgument("configured prior mean does not match the grid");
  } else {
    p.prior_means = {VectorXd::Zero(n), VectorXd::Zero(n)};
  }
  return p;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

VectorXd log_kernel(const KernelParams& k) {
  return (VectorXd(2) << std::log(k.amplitude), std::log(k.length_scale)).finished();
}

KernelParams kernel_from_log(const VectorXd& x, Index offset = 0) {
  return {std::exp(x[offset]), std::exp(x[offset + 1])};
}

BoxBounds kernel_bounds(const MagicOptions& o) {
  return {VectorXd::Constant(2, std::log(o.kernel_lower)),
          VectorXd::Constant(2, std::log(o.kernel_upper))};
}

// Label-likelihood design per sample for fixed (theta, sigma^2, posterior):
// U = beta0 + beta1^T c, V = beta1^T G beta1.
struct LabelDesign {
  VectorXd c;
  MatrixXd gram;
  int z;
};

std::vector<LabelDesign> label_designs(const TrainingData& data, const ModelParams& params,
                                       const std::array<ClassPosterior, 2>& posteriors) {
  const MatrixXd& wb = data.quadrature().weighted_basis();
  const MatrixXd kfull = rbf_kernel(params.individual_kernel, data.grid().points());
  const Index n = data.grid().size();
  const Index kb = wb.cols();
  std::vector<LabelDesign> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& sample = data.samples()[i];
    const auto& obs = sample.obs_index;
    const auto& un = data.unobserved(i);
    const auto& post = posteriors[static_cast<std::size_t>(data.group(i))];
    LabelDesign d;
    d.z = data.label(i);
    VectorXd f(n);
    for (std::size_t k = 0; k < obs.size(); ++k)
      f[obs[k]] = sample.obs_values[static_cast<Index>(k)];
    if (un.empty()) {
      d.c = wb.transpose() * f;
      d.gram = MatrixXd::Zero(kb, kb);
      out.push_back(std::move(d));
      continue;
    }
    MatrixXd s = gather(kfull, obs, obs);
    s.diagonal().array() += params.noise_variance;
    const StabilizedCholesky<double> chol(s);
    const MatrixXd k_uo = gather(kfull, un, obs);
    const VectorXd r = sample.obs_values - gather(post.mean, obs);
    const VectorXd f_u = gather(post.mean, un) + k_uo * chol.solve(r);
    for (std::size_t k = 0; k < un.size(); ++k)
      f[un[k]] = f_u[static_cast<Index>(k)];
    d.c = wb.transpose() * f;

    MatrixXd wb_u(static_cast<Index>(un.size()), kb);
    for (std::size_t k = 0; k < un.size(); ++k)
      wb_u.row(static_cast<Index>(k)) = wb.row(un[k]);
    const MatrixXd m_o = -chol.solve(k_uo.transpose() * wb_u);
    MatrixXd m = MatrixXd::Zero(n, kb);
    for (std::size_t k = 0; k < un.size(); ++k)
      m.row(un[k]) = wb_u.row(static_cast<Index>(k));
    for (std::size_t k = 0; k < obs.size(); ++k)
      m.row(obs[k]) = m_o.row(static_cast<Index>(k));
    d.gram = m.transpose() * post.covariance * m;
    d.gram = 0.5 * (d.gram + d.gram.transpose());
    out.push_back(std::move(d));
  }
  return out;
}

double beta_objective(const std::vector<LabelDesign>& designs, const VectorXd& beta,
                      double lambda) {
  const Index kb = beta.size() - 1;
  const auto w = beta.tail(kb);
  double total = 0.0;
  for (const auto& d : designs) {
    const TaylorMoments m{beta[0] + w.dot(d.c), std::max(w.dot(d.gram * w), 0.0)};
    total += label_likelihood(m, d.z);
  }
  return total - 0.5 * lambda * w.squaredNorm();
}

double max_abs_log_change(double a, double b) { return std::abs(std::log(a) - std::log(b)); }

double params_change(const ModelParams& a, const ModelParams& b, const MagicOptions& o) {
  double c = 0.0;
  for (std::size_t g = 0; g < 2; ++g) {
    c = std::max(c, max_abs_log_change(a.class_kernels[g].amplitude, b.class_kernels[g].amplitude));
    c = std::max(c, max_abs_log_change(a.class_kernels[g].length_scale,
                                       b.class_kernels[g].length_scale));
  }
  c = std::max(c, max_abs_log_change(a.individual_kernel.amplitude, b.individual_kernel.amplitude));
  c = std::max(c, max_abs_log_change(a.individual_kernel.length_scale,
                                     b.individual_kernel.length_scale));
  c = std::max(c, max_abs_log_change(a.noise_variance, b.noise_variance));
  if (o.label_term) {
    const VectorXd& x = a.beta.vector();
    const VectorXd& y = b.beta.vector();
    c = std::max(c, (x - y).norm() / std::max(y.norm(), 1.0));
  }
  return c;
}

} // namespace

ModelParams m_step(const EMState& state, const TrainingData& data,
                   const RoughnessPenalty& penalty, const MagicOptions& options,
                   std::vector<std::string>* warnings) {
  const auto& post = state.posteriors;
  ModelParams cur = state.params;
  double q_cur = q_function(data, cur, post, penalty, options).penalized_q();

  auto warn = [&](const std::string& msg) {
    if (warnings)
      warnings->push_back(msg);
  };
  auto try_accept = [&](const ModelParams& cand, const char* block) {
    try {
      const double q = q_function(data, cand, post, penalty, options).penalized_q();
      if (std::isfinite(q) && q >= q_cur) {
        cur = cand;
        q_cur = q;
      }
    } catch (const Error& e) {
      warn(std::string(block) + ": candidate rejected (" + e.what() + ")");
    }
  };

  // Class-mean kernels: only their own Gaussian prior terms depend on them.
  for (int g = 0; g < data.num_groups(); ++g) {
    const auto gi = static_cast<std::size_t>(g);
    const VectorXd& m = cur.prior_means[gi];
    auto objective = [&](const VectorXd& x) {
      try {
        const MatrixXd k =
            class_kernel_matrix(data.grid(), kernel_from_log(x), options.class_kernel_nugget);
        return class_prior_term(post[gi], m, k);
      } catch (const Error&) {
        return kNaN;
      }
    };
    const char* name = g == 0 ? "theta0" : "theta1";
    try {
      const auto res = maximize_bounded(objective, log_kernel(cur.class_kernels[gi]),
                                        kernel_bounds(options), options.optimizer);
      ModelParams cand = cur;
      cand.class_kernels[gi] = kernel_from_log(res.x);
      try_accept(cand, name);
    } catch (const Error& e) {
      warn(std::string(name) + ": " + e.what());
    }
  }

  if (options.label_term) {
    try {
      const auto designs = label_designs(data, cur, post);
      auto objective = [&](const VectorXd& b) {
        return beta_objective(designs, b, options.lambda);
      };
      const auto res =
          maximize_bounded(objective, cur.beta.vector(),
                           BoxBounds::unbounded(cur.beta.vector().size()), options.optimizer);
      ModelParams cand = cur;
      cand.beta = LogisticCoefficients(res.x);
      try_accept(cand, "beta");
    } catch (const Error& e) {
      warn(std::string("beta: ") + e.what());
    }
  }

  {
    auto objective = [&](const VectorXd& x) {
      try {
        ModelParams p = cur;
        p.individual_kernel = kernel_from_log(x);
        p.noise_variance = std::exp(x[2]);
        const SampleTermSums s = sum_sample_terms(data, p, post, options.label_term);
        return s.series + s.label;
      } catch (const Error&) {
        return kNaN;
      }
    };
    VectorXd x0(3);
    x0 << std::log(cur.individual_kernel.amplitude), std::log(cur.individual_kernel.length_scale),
        std::log(cur.noise_variance);
    BoxBounds bounds;
    bounds.lower = (VectorXd(3) << std::log(options.kernel_lower), std::log(options.kernel_lower),
                    std::log(options.noise_lower))
                       .finished();
    bounds.upper = (VectorXd(3) << std::log(options.kernel_upper), std::log(options.kernel_upper),
                    std::log(options.noise_upper))
                       .finished();
    try {
      const auto res = maximize_bounded(objective, x0, bounds, options.optimizer);
      ModelParams cand = cur;
      cand.individual_kernel = kernel_from_log(res.x);
      cand.noise_variance = std::exp(res.x[2]);
      try_accept(cand, "theta");
    } catch (const Error& e) {
      warn(std::string("theta: ") + e.what());
    }
  }
  return cur;
}

// --------------------------------------------------------------------- EM

EMState fit(const TrainingData& data, const MagicOptions& options) {
  return fit(data, options, initial_params(data, options));
}

EMState fit(const TrainingData& data, const MagicOptions& options, ModelParams start) {
  if (data.num_groups() == 2) {
    if (data.group_count(0) == 0 || data.group_count(1) == 0)
      throw DegenerateLabelsError("fit needs samples from both classes (got " +
                                  std::to_string(data.group_count(0)) + " of class 0, " +
                                  std::to_string(data.group_count(1)) + " of class 1)");
  }
  if (options.label_term && data.num_groups() == 1) {
    int n1 = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
      n1 += data.samples()[i].label.value_or(0);
    if (n1 == 0 || n1 == static_cast<int>(data.size()))
      throw DegenerateLabelsError("label likelihood needs samples from both classes");
  }
  const RoughnessPenalty penalty = options.roughness_weight > 0.0
                                       ? build_roughness(data.grid(), options.roughness_weight)
                                       : no_roughness(data.grid().size());

  EMState state;
  state.params = std::move(start);
  double f_current = -std::numeric_limits<double>::infinity();

  for (int r = 0; r < options.max_iterations; ++r) {
    EStepReport report;
    auto candidate = e_step(data, state.params, penalty, options.class_kernel_nugget, &report);
    if (r == 0) {
      state.posteriors = std::move(candidate);
    } else {
      const double f_new =
          q_function(data, state.params, candidate, penalty, options).free_energy();
      if (f_new >= f_current) {
        state.posteriors = std::move(candidate);
      } else {
        state.warnings.push_back("iteration " + std::to_string(r + 1) +
                                 ": E-step update lowered the objective and was not applied");
      }
    }
    for (int g = 0; g < data.num_groups(); ++g)
      if (report.empty_group[static_cast<std::size_t>(g)])
        state.warnings.push_back("class " + std::to_string(g) + " has no samples");

    const ModelParams previous = state.params;
    state.params = m_step(state, data, penalty, options, &state.warnings);
    f_current = q_function(data, state.params, state.posteriors, penalty, options).free_energy();
    state.q_history.push_back(f_current);
    state.iterations = r + 1;
    if (options.keep_trace)
      state.trace.push_back({state.params, state.posteriors});
    if (params_change(state.params, previous, options) < options.tolerance) {
      state.converged = true;
      break;
    }
  }
  return state;
}

} // namespace magic
