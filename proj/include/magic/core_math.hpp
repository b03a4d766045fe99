#pragma once

// Dense Gaussian-process building blocks: RBF kernels, a Cholesky
// factorization with jitter escalation, and single-GP conditioning.
// Everything here is header-only and templated on the scalar type.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "magic/errors.hpp"

namespace magic {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Global time domain: strictly increasing, finite, non-empty.
template <typename Scalar>
class BasicTimeGrid {
public:
  BasicTimeGrid() = default;

  explicit BasicTimeGrid(Vector<Scalar> points) : points_(std::move(points)) {
    if (points_.size() == 0)
      throw InvalidArgument("time grid must be non-empty");
    for (Eigen::Index i = 0; i < points_.size(); ++i) {
      if (!std::isfinite(points_[i]))
        throw InvalidArgument("time grid contains a non-finite point");
      if (i > 0 && !(points_[i] > points_[i - 1]))
        throw InvalidArgument("time grid must be strictly increasing");
    }
  }

  /// Integer grid first, first+1, ..., last.
  static BasicTimeGrid integers(int first, int last) {
    if (last < first)
      throw InvalidArgument("integer grid needs last >= first");
    return BasicTimeGrid(
        Vector<Scalar>::LinSpaced(last - first + 1, Scalar(first), Scalar(last)));
  }

  const Vector<Scalar>& points() const noexcept { return points_; }
  Eigen::Index size() const noexcept { return points_.size(); }
  Scalar operator[](Eigen::Index i) const { return points_[i]; }
  Scalar front() const { return points_[0]; }
  Scalar back() const { return points_[points_.size() - 1]; }
  Scalar span() const { return back() - front(); }

  /// Index of the grid point within `tol` of `t`, or -1.
  Eigen::Index find(Scalar t, Scalar tol = Scalar(1e-9)) const {
    const Scalar* first = points_.data();
    const Scalar* last = first + points_.size();
    const Scalar* it = std::lower_bound(first, last, t - tol);
    if (it != last && std::abs(*it - t) <= tol)
      return static_cast<Eigen::Index>(it - first);
    return -1;
  }

  bool operator==(const BasicTimeGrid& other) const {
    return points_.size() == other.points_.size() && points_ == other.points_;
  }

private:
  Vector<Scalar> points_;
};

using TimeGrid = BasicTimeGrid<double>;

/// RBF hyperparameters: amplitude theta_v and length-scale theta_l.
template <typename Scalar>
struct BasicKernelParams {
  Scalar amplitude{1};
  Scalar length_scale{1};

  void validate() const {
    if (!(amplitude > 0) || !(length_scale > 0) || !std::isfinite(amplitude) ||
        !std::isfinite(length_scale)) {
      std::ostringstream os;
      os << "RBF hyperparameters must be positive and finite (amplitude="
         << amplitude << ", length_scale=" << length_scale << ")";
      throw InvalidArgument(os.str());
    }
  }

  Scalar variance() const { return amplitude * amplitude; }

  bool operator==(const BasicKernelParams&) const = default;
};

using KernelParams = BasicKernelParams<double>;

/// Mean and covariance of a Gaussian indexed by time points.
template <typename Scalar>
struct BasicGaussianOnGrid {
  Vector<Scalar> mean;
  Matrix<Scalar> covariance;

  Eigen::Index size() const noexcept { return mean.size(); }
};

using GaussianOnGrid = BasicGaussianOnGrid<double>;

/// k(a_i, b_j) = theta_v^2 exp(-(a_i - b_j)^2 / (2 theta_l^2)).
template <typename Scalar, typename DerivedA, typename DerivedB>
Matrix<Scalar> rbf_kernel(const BasicKernelParams<Scalar>& params,
                          const Eigen::MatrixBase<DerivedA>& times_a,
                          const Eigen::MatrixBase<DerivedB>& times_b) {
  params.validate();
  const Scalar var = params.variance();
  const Scalar inv_two_l2 = Scalar(1) / (Scalar(2) * params.length_scale * params.length_scale);
  Matrix<Scalar> k(times_a.size(), times_b.size());
  for (Eigen::Index j = 0; j < times_b.size(); ++j) {
    for (Eigen::Index i = 0; i < times_a.size(); ++i) {
      const Scalar d = times_a(i) - times_b(j);
      k(i, j) = var * std::exp(-d * d * inv_two_l2);
    }
  }
  return k;
}

template <typename Scalar, typename Derived>
Matrix<Scalar> rbf_kernel(const BasicKernelParams<Scalar>& params,
                          const Eigen::MatrixBase<Derived>& times) {
  return rbf_kernel(params, times, times);
}

/// Jitter schedule used when a symmetric factorization fails. Values are
/// relative to the mean absolute diagonal (absolute when that is zero).
struct JitterPolicy {
  double first = 1e-10;
  double last = 1e-4;
  double factor = 10.0;
};

/// Cholesky factorization of a symmetric matrix. On failure the diagonal
/// is inflated geometrically per JitterPolicy; the jitter actually used is
/// reported by jitter().
template <typename Scalar>
class StabilizedCholesky {
public:
  StabilizedCholesky() = default;

  template <typename Derived>
  explicit StabilizedCholesky(const Eigen::MatrixBase<Derived>& a,
                              JitterPolicy policy = {}) {
    compute(a, policy);
  }

  template <typename Derived>
  StabilizedCholesky& compute(const Eigen::MatrixBase<Derived>& a,
                              JitterPolicy policy = {}) {
    if (a.rows() != a.cols())
      throw InvalidArgument("factorization requires a square matrix");
    n_ = a.rows();
    jitter_ = Scalar(0);
    if (n_ == 0) {
      llt_ = Eigen::LLT<Matrix<Scalar>>();
      return *this;
    }
    Matrix<Scalar> work = a;
    llt_.compute(work);
    if (ok())
      return *this;

    const Scalar diag_scale = a.diagonal().cwiseAbs().mean();
    const Scalar scale = diag_scale > Scalar(0) && std::isfinite(diag_scale) ? diag_scale : Scalar(1);
    Scalar attempted = Scalar(0);
    for (double rel = policy.first; rel <= policy.last * (1 + 1e-12); rel *= policy.factor) {
      attempted = Scalar(rel) * scale;
      work = a;
      work.diagonal().array() += attempted;
      llt_.compute(work);
      if (ok()) {
        jitter_ = attempted;
        return *this;
      }
    }
    std::ostringstream os;
    os << "matrix of size " << n_ << " is not positive definite after jitter "
       << attempted;
    throw SingularMatrixError(os.str(), static_cast<double>(attempted));
  }

  Eigen::Index size() const noexcept { return n_; }
  Scalar jitter() const noexcept { return jitter_; }

  template <typename Derived>
  typename Derived::PlainObject solve(const Eigen::MatrixBase<Derived>& rhs) const {
    if (rhs.rows() != n_)
      throw InvalidArgument("right-hand side has wrong number of rows");
    if (n_ == 0)
      return typename Derived::PlainObject(0, rhs.cols());
    return llt_.solve(rhs);
  }

  /// L^{-1} rhs for the lower factor L (A = L L^T).
  template <typename Derived>
  typename Derived::PlainObject half_solve(const Eigen::MatrixBase<Derived>& rhs) const {
    if (rhs.rows() != n_)
      throw InvalidArgument("right-hand side has wrong number of rows");
    if (n_ == 0)
      return typename Derived::PlainObject(0, rhs.cols());
    return llt_.matrixL().solve(rhs);
  }

  Scalar log_det() const {
    if (n_ == 0)
      return Scalar(0);
    return Scalar(2) * llt_.matrixLLT().diagonal().array().log().sum();
  }

  Matrix<Scalar> inverse() const {
    return solve(Matrix<Scalar>::Identity(n_, n_));
  }

  Matrix<Scalar> matrix_l() const { return llt_.matrixL(); }

private:
  bool ok() const {
    return llt_.info() == Eigen::Success &&
           llt_.matrixLLT().diagonal().array().isFinite().all() &&
           (llt_.matrixLLT().diagonal().array() > Scalar(0)).all();
  }

  Eigen::LLT<Matrix<Scalar>> llt_;
  Eigen::Index n_ = 0;
  Scalar jitter_ = Scalar(0);
};

/// Solve A x = rhs for symmetric A through the jittered Cholesky.
template <typename DerivedA, typename DerivedB>
auto stabilized_solve(const Eigen::MatrixBase<DerivedA>& a,
                      const Eigen::MatrixBase<DerivedB>& rhs) {
  using Scalar = typename DerivedA::Scalar;
  return StabilizedCholesky<Scalar>(a).solve(rhs);
}

template <typename Derived>
typename Derived::Scalar log_det(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  return StabilizedCholesky<Scalar>(a).log_det();
}

/// Single-GP conditional of the latent function at `targets` given noisy
/// observations: mean m(t*) + K*o [Koo + s2 I]^{-1} (y - m(t)),
/// covariance K** - K*o [Koo + s2 I]^{-1} Ko*.
/// With no observations the prior at the targets is returned.
template <typename Scalar, typename D1, typename D2, typename D3, typename D4, typename D5>
BasicGaussianOnGrid<Scalar> sgp_posterior(const Eigen::MatrixBase<D1>& obs_times,
                                          const Eigen::MatrixBase<D2>& obs_values,
                                          const Eigen::MatrixBase<D3>& obs_prior_mean,
                                          const Eigen::MatrixBase<D4>& targets,
                                          const Eigen::MatrixBase<D5>& target_prior_mean,
                                          const BasicKernelParams<Scalar>& params,
                                          Scalar noise_variance) {
  params.validate();
  if (!(noise_variance >= Scalar(0)))
    throw InvalidArgument("noise variance must be non-negative");
  if (obs_values.size() != obs_times.size() || obs_prior_mean.size() != obs_times.size())
    throw InvalidArgument("observation vectors differ in length");
  if (target_prior_mean.size() != targets.size())
    throw InvalidArgument("target prior mean has wrong length");

  BasicGaussianOnGrid<Scalar> out;
  out.mean = target_prior_mean;
  out.covariance = rbf_kernel(params, targets);
  if (targets.size() == 0 || obs_times.size() == 0)
    return out;

  Matrix<Scalar> k_oo = rbf_kernel(params, obs_times);
  k_oo.diagonal().array() += noise_variance;
  const StabilizedCholesky<Scalar> chol(k_oo);
  const Matrix<Scalar> k_ot = rbf_kernel(params, obs_times, targets);
  const Vector<Scalar> resid = obs_values - obs_prior_mean;
  out.mean.noalias() += k_ot.transpose() * chol.solve(resid);
  const Matrix<Scalar> half = chol.half_solve(k_ot);
  out.covariance.noalias() -= half.transpose() * half;
  return out;
}

/// Zero-prior-mean convenience overload.
template <typename Scalar, typename D1, typename D2, typename D3>
BasicGaussianOnGrid<Scalar> sgp_posterior(const Eigen::MatrixBase<D1>& obs_times,
                                          const Eigen::MatrixBase<D2>& obs_values,
                                          const Eigen::MatrixBase<D3>& targets,
                                          const BasicKernelParams<Scalar>& params,
                                          Scalar noise_variance) {
  return sgp_posterior(obs_times, obs_values, Vector<Scalar>::Zero(obs_times.size()),
                       targets, Vector<Scalar>::Zero(targets.size()), params,
                       noise_variance);
}

/// Gather entries of `v` at `idx`.
template <typename Derived>
Vector<typename Derived::Scalar> gather(const Eigen::MatrixBase<Derived>& v,
                                        const std::vector<Eigen::Index>& idx) {
  Vector<typename Derived::Scalar> out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = v(idx[i]);
  return out;
}

/// Sub-matrix m(rows, cols).
template <typename Derived>
Matrix<typename Derived::Scalar> gather(const Eigen::MatrixBase<Derived>& m,
                                        const std::vector<Eigen::Index>& rows,
                                        const std::vector<Eigen::Index>& cols) {
  Matrix<typename Derived::Scalar> out(static_cast<Eigen::Index>(rows.size()),
                                       static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < rows.size(); ++i)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
  return out;
}

} // namespace magic
