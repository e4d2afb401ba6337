#pragma once

// Gaussian-process regression from scaled moments (p_3..p_N) to scaled
// Lagrange multipliers, one independent GP per multiplier.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maxent/datagen.hpp"
#include "maxent/error.hpp"
#include "maxent/io.hpp"
#include "maxent/med.hpp"
#include "maxent/parallel.hpp"

namespace maxent {

enum class KernelFamily { RBF, Matern12, Matern32, Matern52 };

inline std::string to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::RBF: return "rbf";
    case KernelFamily::Matern12: return "matern12";
    case KernelFamily::Matern32: return "matern32";
    case KernelFamily::Matern52: return "matern52";
  }
  return "unknown";
}

inline KernelFamily parse_kernel_family(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  std::erase(name, '_');
  std::erase(name, '-');
  if (name == "rbf") return KernelFamily::RBF;
  if (name == "matern12") return KernelFamily::Matern12;
  if (name == "matern32") return KernelFamily::Matern32;
  if (name == "matern52") return KernelFamily::Matern52;
  throw DomainError("unknown kernel family '" + name + "' (expected rbf, matern12, matern32 or matern52)");
}

inline constexpr double kJitterFactor = 1e-8;

struct KernelSpec {
  KernelFamily family = KernelFamily::RBF;
  double signal_variance = 1.0;
  Eigen::VectorXd inv_length_scales;  // diagonal of L^-1

  int n_features() const { return static_cast<int>(inv_length_scales.size()); }

  void validate() const {
    if (!(signal_variance > 0.0) || !std::isfinite(signal_variance)) {
      throw DomainError("signal variance must be positive and finite");
    }
    if (!(inv_length_scales.array() > 0.0).all() || !inv_length_scales.allFinite()) {
      throw DomainError("inverse length scales must be positive and finite");
    }
  }

  /// (ln sigma, ln inv_ls_1..F)
  Eigen::VectorXd log_params() const {
    Eigen::VectorXd t(1 + n_features());
    t[0] = std::log(signal_variance);
    t.tail(n_features()) = inv_length_scales.array().log().matrix();
    return t;
  }
  static KernelSpec from_log_params(KernelFamily family, const Eigen::VectorXd& t) {
    KernelSpec k;
    k.family = family;
    k.signal_variance = std::exp(t[0]);
    k.inv_length_scales = t.tail(t.size() - 1).array().exp().matrix();
    return k;
  }
};

namespace detail {

/// Kernel values for scaled squared distances s = r^2, elementwise.
inline Eigen::ArrayXXd kernel_from_r2(KernelFamily f, double sigma, const Eigen::ArrayXXd& s) {
  switch (f) {
    case KernelFamily::RBF: return sigma * (-0.5 * s).exp();
    case KernelFamily::Matern12: return sigma * (-s.sqrt()).exp();
    case KernelFamily::Matern32: {
      const Eigen::ArrayXXd a = std::sqrt(3.0) * s.sqrt();
      return sigma * (1.0 + a) * (-a).exp();
    }
    case KernelFamily::Matern52: {
      const Eigen::ArrayXXd a = std::sqrt(5.0) * s.sqrt();
      return sigma * (1.0 + a + a.square() / 3.0) * (-a).exp();
    }
  }
  return {};
}

/// dk/ds elementwise (s = r^2); zero where s = 0 for Matern12.
inline Eigen::ArrayXXd kernel_dr2(KernelFamily f, double sigma, const Eigen::ArrayXXd& s, const Eigen::ArrayXXd& k) {
  switch (f) {
    case KernelFamily::RBF: return -0.5 * k;
    case KernelFamily::Matern12: {
      const Eigen::ArrayXXd r = s.sqrt();
      return (r > 0.0).select(-k / (2.0 * r), 0.0);
    }
    case KernelFamily::Matern32: return -1.5 * sigma * (-std::sqrt(3.0) * s.sqrt()).exp();
    case KernelFamily::Matern52: {
      const Eigen::ArrayXXd a = std::sqrt(5.0) * s.sqrt();
      return -(5.0 / 6.0) * sigma * (1.0 + a) * (-a).exp();
    }
  }
  return {};
}

inline double kernel_scalar(KernelFamily f, double sigma, double s) {
  Eigen::ArrayXXd a(1, 1);
  a(0, 0) = s;
  return kernel_from_r2(f, sigma, a)(0, 0);
}

/// Per-feature squared differences D_f(a, b) = (X_af - X_bf)^2, reused by every
/// likelihood evaluation during a fit.
struct PairwiseSquares {
  std::vector<Eigen::ArrayXXd> per_feature;

  explicit PairwiseSquares(const Eigen::MatrixXd& x) {
    const Eigen::Index m = x.rows();
    per_feature.reserve(x.cols());
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      const Eigen::ArrayXd c = x.col(f).array();
      Eigen::ArrayXXd d(m, m);
      for (Eigen::Index b = 0; b < m; ++b) d.col(b) = (c - c[b]).square();
      per_feature.push_back(std::move(d));
    }
  }

  Eigen::ArrayXXd scaled(const Eigen::VectorXd& inv_ls) const {
    Eigen::ArrayXXd s = inv_ls[0] * per_feature[0];
    for (std::size_t f = 1; f < per_feature.size(); ++f) s += inv_ls[static_cast<Eigen::Index>(f)] * per_feature[f];
    return s;
  }
};

/// Lower Cholesky factor of k + jitter I, escalating the jitter x10 up to 5
/// times. Returns the jitter that worked.
inline double factorize(const Eigen::MatrixXd& k_no_jitter, double jitter, Eigen::MatrixXd& lower) {
  for (int attempt = 0; attempt <= 5; ++attempt) {
    Eigen::MatrixXd a = k_no_jitter;
    a.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
      lower = llt.matrixL();
      return jitter;
    }
    jitter *= 10.0;
  }
  throw ConditioningError("Gram matrix is not positive definite after the jitter ladder");
}

/// K^-1 y from the lower factor; the same path is used at training and load time.
inline Eigen::VectorXd cholesky_solve(const Eigen::MatrixXd& lower, const Eigen::VectorXd& y) {
  const Eigen::VectorXd z = lower.triangularView<Eigen::Lower>().solve(y);
  return lower.transpose().triangularView<Eigen::Upper>().solve(z);
}

}  // namespace detail

/// k(x, x2) for one pair of feature vectors.
inline double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& x2) {
  if (x.size() != x2.size() || x.size() != spec.n_features()) {
    throw DomainError("kernel input dimensions do not match the inverse length scales");
  }
  const double s = (spec.inv_length_scales.array() * (x - x2).array().square()).sum();
  return detail::kernel_scalar(spec.family, spec.signal_variance, s);
}

/// Cross-covariance k(A_a, B_b).
inline Eigen::MatrixXd cross_kernel(const KernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != spec.n_features() || b.cols() != spec.n_features()) {
    throw DomainError("kernel input dimensions do not match the inverse length scales");
  }
  Eigen::ArrayXXd s = Eigen::ArrayXXd::Zero(a.rows(), b.rows());
  for (Eigen::Index f = 0; f < a.cols(); ++f) {
    const Eigen::ArrayXd ca = a.col(f).array();
    for (Eigen::Index j = 0; j < b.rows(); ++j) s.col(j) += spec.inv_length_scales[f] * (ca - b(j, f)).square();
  }
  return detail::kernel_from_r2(spec.family, spec.signal_variance, s).matrix();
}

/// Gram matrix with jitter_factor * sigma added to the diagonal.
inline Eigen::MatrixXd gram_matrix(const KernelSpec& spec, const Eigen::MatrixXd& x, double jitter_factor = kJitterFactor) {
  if (x.rows() < 1) throw DomainError("Gram matrix needs at least one input");
  spec.validate();
  Eigen::MatrixXd g = cross_kernel(spec, x, x);
  g = 0.5 * (g + g.transpose()).eval();
  g.diagonal().array() += jitter_factor * spec.signal_variance;
  return g;
}

struct LikelihoodResult {
  double value = 0.0;
  Eigen::VectorXd gradient;  // d/d(ln sigma, ln inv_ls_f)
};

namespace detail {

inline LikelihoodResult log_likelihood_cached(const KernelSpec& spec, const PairwiseSquares& sq, const Eigen::VectorXd& y,
                                              bool with_gradient, double jitter_factor) {
  const Eigen::Index m = y.size();
  const double sigma = spec.signal_variance;
  const Eigen::ArrayXXd s = sq.scaled(spec.inv_length_scales);
  const Eigen::ArrayXXd k = kernel_from_r2(spec.family, sigma, s);
  Eigen::MatrixXd lower;
  const double jitter = factorize(k.matrix(), jitter_factor * sigma, lower);
  const Eigen::VectorXd alpha = cholesky_solve(lower, y);
  LikelihoodResult r;
  r.value = -lower.diagonal().array().log().sum() - 0.5 * y.dot(alpha) -
            0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
  if (!with_gradient) return r;

  // W = alpha alpha^T - K^-1
  Eigen::MatrixXd linv = Eigen::MatrixXd::Identity(m, m);
  lower.triangularView<Eigen::Lower>().solveInPlace(linv);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
  w.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose(), -1.0);
  w.selfadjointView<Eigen::Lower>().rankUpdate(alpha, 1.0);
  w.triangularView<Eigen::StrictlyUpper>() = w.transpose();

  const int nf = static_cast<int>(sq.per_feature.size());
  r.gradient.resize(1 + nf);
  // dK/d ln sigma = K (jitter scales with sigma too)
  Eigen::ArrayXXd kj = k;
  kj.matrix().diagonal().array() += jitter;
  r.gradient[0] = 0.5 * (w.array() * kj).sum();
  const Eigen::ArrayXXd b = w.array() * kernel_dr2(spec.family, sigma, s, k);
  for (int f = 0; f < nf; ++f) {
    r.gradient[1 + f] = 0.5 * spec.inv_length_scales[f] * (b * sq.per_feature[f]).sum();
  }
  return r;
}

}  // namespace detail

/// -1/2 ln det K - 1/2 y^T K^-1 y - M/2 ln 2 pi and its gradient in log-parameters.
inline LikelihoodResult log_marginal_likelihood(const KernelSpec& spec, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                                double jitter_factor = kJitterFactor) {
  spec.validate();
  if (x.rows() != y.size()) throw DomainError("input and target counts differ");
  if (x.cols() != spec.n_features()) throw DomainError("input dimension does not match the inverse length scales");
  const detail::PairwiseSquares sq(x);
  return detail::log_likelihood_cached(spec, sq, y, true, jitter_factor);
}

struct FitOptions {
  int starts = 4;
  int max_iters = 200;
  double grad_tol = 1e-6;
  double step_tol = 1e-9;
  double log_bound = 10.0;
  std::uint64_t seed = 0;
  double jitter_factor = kJitterFactor;
};

struct FitResult {
  KernelSpec spec;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  int evaluations = 0;
  std::vector<double> start_log_likelihoods;
};

namespace detail {

struct BfgsOutcome {
  Eigen::VectorXd theta;
  double value = std::numeric_limits<double>::infinity();  // negative log likelihood
  int iterations = 0;
  bool converged = false;
  bool moved = false;
};

/// Box-constrained BFGS on phi(theta) = -log likelihood. Bound-active
/// coordinates whose gradient pushes outward are frozen for the step.
template <typename Objective>
BfgsOutcome minimize_bfgs(Objective&& phi, Eigen::VectorXd theta, const FitOptions& opts) {
  const Eigen::Index n = theta.size();
  const double lo = -opts.log_bound, hi = opts.log_bound;
  theta = theta.cwiseMax(lo).cwiseMin(hi);
  auto [f, g] = phi(theta, true);
  BfgsOutcome out;
  out.theta = theta;
  out.value = f;
  if (!std::isfinite(f)) return out;
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);

  auto projected = [&](const Eigen::VectorXd& t, const Eigen::VectorXd& grad) {
    Eigen::VectorXd pg = grad;
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((t[i] <= lo && grad[i] > 0.0) || (t[i] >= hi && grad[i] < 0.0)) pg[i] = 0.0;
    }
    return pg;
  };

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    out.iterations = iter;
    const Eigen::VectorXd pg = projected(theta, g);
    if (pg.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      out.converged = true;
      break;
    }
    bool stepped = false;
    for (int attempt = 0; attempt < 2 && !stepped; ++attempt) {
      if (attempt == 1) hinv.setIdentity();
      Eigen::VectorXd d = -(hinv * pg);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (pg[i] == 0.0) d[i] = 0.0;
      }
      if (d.dot(pg) >= 0.0) d = -pg;
      const double dmax = d.lpNorm<Eigen::Infinity>();
      if (dmax > 2.0) d *= 2.0 / dmax;  // at most e^2 per step in any parameter
      double t = 1.0;
      for (int k = 0; k < 40; ++k, t *= 0.5) {
        const Eigen::VectorXd trial = (theta + t * d).cwiseMax(lo).cwiseMin(hi);
        const Eigen::VectorXd s = trial - theta;
        if (s.lpNorm<Eigen::Infinity>() <= opts.step_tol) break;
        const double ft = phi(trial, false).first;
        if (std::isfinite(ft) && ft <= f + 1e-4 * g.dot(s)) {
          auto [fn, gn] = phi(trial, true);
          if (!std::isfinite(fn)) continue;
          const Eigen::VectorXd yv = gn - g;
          const double sy = s.dot(yv);
          if (sy > 1e-12 * s.norm() * yv.norm()) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(n, n) - rho * s * yv.transpose();
            hinv = e * hinv * e.transpose() + rho * s * s.transpose();
          }
          const bool tiny = s.lpNorm<Eigen::Infinity>() <= opts.step_tol;
          theta = trial;
          f = fn;
          g = gn;
          stepped = true;
          out.moved = true;
          if (tiny) out.converged = true;
          break;
        }
      }
    }
    out.theta = theta;
    out.value = f;
    if (!stepped) break;  // no descent along the projected gradient either
    if (out.converged) break;
    out.iterations = iter + 1;
  }
  out.theta = theta;
  out.value = f;
  return out;
}

}  // namespace detail

/// Multi-start BFGS ascent of the log marginal likelihood in log-parameters.
/// Start 0 is sigma = var(y) (or 1), unit inverse length scales; the others are
/// seeded uniform draws.
inline FitResult fit_hyperparameters(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, KernelFamily family,
                                     const FitOptions& opts = {}) {
  if (x.rows() < 2) throw DomainError("hyperparameter fit needs at least 2 points");
  if (x.rows() != y.size()) throw DomainError("input and target counts differ");
  if (opts.starts < 1) throw DomainError("need at least one start");
  const int nf = static_cast<int>(x.cols());
  const detail::PairwiseSquares sq(x);
  int evaluations = 0;

  auto phi = [&](const Eigen::VectorXd& theta, bool with_gradient) -> std::pair<double, Eigen::VectorXd> {
    ++evaluations;
    try {
      const auto spec = KernelSpec::from_log_params(family, theta);
      auto r = detail::log_likelihood_cached(spec, sq, y, with_gradient, opts.jitter_factor);
      if (!std::isfinite(r.value)) return {std::numeric_limits<double>::infinity(), {}};
      return {-r.value, with_gradient ? Eigen::VectorXd(-r.gradient) : Eigen::VectorXd()};
    } catch (const ConditioningError&) {
      return {std::numeric_limits<double>::infinity(), {}};
    }
  };

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u_sigma(-2.0, 2.0), u_ls(-3.0, 3.0);
  const double var_y = (y.array() - y.mean()).square().mean();
  FitResult best;
  bool any_moved = false;
  Eigen::VectorXd fallback;
  for (int start = 0; start < opts.starts; ++start) {
    Eigen::VectorXd theta0(1 + nf);
    if (start == 0) {
      theta0[0] = var_y > 0.0 ? std::log(var_y) : 0.0;
      theta0.tail(nf).setZero();
    } else {
      theta0[0] = u_sigma(rng);
      for (int f = 0; f < nf; ++f) theta0[1 + f] = u_ls(rng);
    }
    const double f0 = phi(theta0, false).first;
    best.start_log_likelihoods.push_back(-f0);
    const auto out = detail::minimize_bfgs(phi, theta0, opts);
    if (!std::isfinite(out.value)) continue;
    if (fallback.size() == 0) fallback = out.theta;
    any_moved = any_moved || out.moved || out.converged;
    if (-out.value > best.log_likelihood) {
      best.log_likelihood = -out.value;
      best.spec = KernelSpec::from_log_params(family, out.theta);
      best.iterations = out.iterations;
      best.converged = out.converged;
    }
  }
  if (!std::isfinite(best.log_likelihood)) {
    throw OptimizationError("every hyperparameter start failed: the Gram matrix could not be factorized");
  }
  if (!any_moved) {
    throw OptimizationError("line search failed from every start; best log likelihood " +
                            std::to_string(best.log_likelihood) + " at sigma = " +
                            std::to_string(best.spec.signal_variance));
  }
  best.evaluations = evaluations;
  return best;
}

/// One fitted GP with its factorization.
struct GPOutputModel {
  KernelSpec kernel;
  Eigen::VectorXd targets;  // scaled
  Eigen::MatrixXd chol;     // lower factor of K + jitter I
  Eigen::VectorXd alpha;
  double jitter = 0.0;
  double log_likelihood = 0.0;
};

struct Prediction {
  Eigen::VectorXd mean;      // unscaled multipliers
  Eigen::VectorXd variance;  // scaled-target units
};

inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string dataset_hash(const Dataset& ds) { return fnv1a_hex(dataset_csv(ds)); }

/// N independent GPs on shared inputs, plus the scaling that maps to/from them.
class GPModel {
 public:
  GPModel() = default;
  GPModel(KernelFamily family, Eigen::MatrixXd train_inputs, std::vector<GPOutputModel> outputs, ScalingStats scaling)
      : family_(family),
        x_(std::make_shared<const Eigen::MatrixXd>(std::move(train_inputs))),
        outputs_(std::move(outputs)),
        scaling_(std::move(scaling)) {
    if (static_cast<int>(outputs_.size()) != scaling_.n_moments()) {
      throw DomainError("model needs one output per multiplier");
    }
    build_fast_path();
  }

  KernelFamily family() const { return family_; }
  int n_moments() const { return scaling_.n_moments(); }
  int n_features() const { return scaling_.n_features(); }
  int train_size() const { return x_ ? static_cast<int>(x_->rows()) : 0; }
  const Eigen::MatrixXd& train_inputs() const { return *x_; }
  const std::vector<GPOutputModel>& outputs() const { return outputs_; }
  const ScalingStats& scaling() const { return scaling_; }

  // Provenance.
  std::string dataset_hash;
  VelocityDomain domain;
  int quad_order = kDefaultQuadOrder;
  std::vector<Interval> omega_p;

  void check_input(const MomentVector& p) const {
    if (p.size() != n_moments()) {
      throw DomainError("moment vector has " + std::to_string(p.size()) + " entries, model expects N = " +
                        std::to_string(n_moments()));
    }
    if (!p.values.allFinite()) throw DomainError("moment vector contains non-finite entries");
  }

  /// Posterior mean (unscaled) and variance (scaled units) for each multiplier.
  Prediction predict(const MomentVector& p) const {
    check_input(p);
    const Eigen::VectorXd xs = scaling_.scale_input(p.values);
    const Eigen::MatrixXd xrow = xs.transpose();
    Prediction out;
    Eigen::VectorXd mean_scaled(n_moments());
    out.variance.resize(n_moments());
    for (int i = 0; i < n_moments(); ++i) {
      const auto& o = outputs_[i];
      const Eigen::VectorXd ks = cross_kernel(o.kernel, *x_, xrow).col(0);
      mean_scaled[i] = ks.dot(o.alpha);
      const Eigen::VectorXd v = o.chol.triangularView<Eigen::Lower>().solve(ks);
      out.variance[i] = std::max(0.0, o.kernel.signal_variance - v.squaredNorm());
    }
    out.mean = unscale(mean_scaled);
    return out;
  }

  /// Posterior mean only, all outputs at once: O(M N F).
  Eigen::VectorXd predict_mean(const MomentVector& p) const {
    check_input(p);
    const Eigen::VectorXd xs = scaling_.scale_input(p.values);
    const Eigen::MatrixXd d = (x_->rowwise() - xs.transpose()).array().square().matrix();
    const Eigen::ArrayXXd s = (d * inv_ls_).array();  // M x N
    Eigen::VectorXd mean_scaled(n_moments());
    for (int i = 0; i < n_moments(); ++i) {
      mean_scaled[i] = detail::kernel_from_r2(family_, sigma_[i], s.col(i)).matrix().col(0).dot(alpha_.col(i));
    }
    return unscale(mean_scaled);
  }

 private:
  Eigen::VectorXd unscale(const Eigen::VectorXd& scaled) const {
    return scaling_.unscale_targets(scaled.transpose()).transpose();
  }

  void build_fast_path() {
    const int n = n_moments();
    inv_ls_.resize(n_features(), n);
    alpha_.resize(train_size(), n);
    sigma_.resize(n);
    for (int i = 0; i < n; ++i) {
      inv_ls_.col(i) = outputs_[i].kernel.inv_length_scales;
      alpha_.col(i) = outputs_[i].alpha;
      sigma_[i] = outputs_[i].kernel.signal_variance;
      if (outputs_[i].kernel.family != family_) throw DomainError("all outputs must share one kernel family");
    }
  }

  KernelFamily family_ = KernelFamily::RBF;
  std::shared_ptr<const Eigen::MatrixXd> x_;
  std::vector<GPOutputModel> outputs_;
  ScalingStats scaling_;
  Eigen::MatrixXd inv_ls_;
  Eigen::MatrixXd alpha_;
  Eigen::VectorXd sigma_;
};

/// Factorizes the Gram matrix of a fitted kernel and precomputes alpha.
inline GPOutputModel make_output_model(const KernelSpec& kernel, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                       double jitter_factor = kJitterFactor) {
  GPOutputModel o;
  o.kernel = kernel;
  o.targets = y;
  Eigen::MatrixXd k = cross_kernel(kernel, x, x);
  k = 0.5 * (k + k.transpose()).eval();
  o.jitter = detail::factorize(k, jitter_factor * kernel.signal_variance, o.chol);
  o.alpha = detail::cholesky_solve(o.chol, y);
  return o;
}

/// Scales the dataset, fits one GP per multiplier (in parallel) and
/// precomputes the factors used by prediction.
inline GPModel train_model(const Dataset& ds, KernelFamily family, const FitOptions& opts = {}, int threads = 0) {
  const ScalingStats scaling = compute_scaling(ds);
  const Eigen::MatrixXd x = scaling.scale_inputs(ds.moments);
  const Eigen::MatrixXd y = scaling.scale_targets(ds.lambdas);
  const int n = ds.n_moments();
  std::vector<GPOutputModel> outputs(n);
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
    FitOptions o = opts;
    std::seed_seq sseq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                       static_cast<std::uint32_t>(i)};
    std::mt19937_64 derive(sseq);
    o.seed = derive();
    try {
      const auto fit = fit_hyperparameters(x, y.col(static_cast<Eigen::Index>(i)), family, o);
      outputs[i] = make_output_model(fit.spec, x, y.col(static_cast<Eigen::Index>(i)), opts.jitter_factor);
      outputs[i].log_likelihood = fit.log_likelihood;
    } catch (const Error& e) {
      throw OptimizationError("output lambda_" + std::to_string(i + 1) + ": " + e.what());
    }
  });
  GPModel model(family, x, std::move(outputs), scaling);
  model.dataset_hash = dataset_hash(ds);
  model.domain = ds.meta.domain;
  model.quad_order = ds.meta.quad_order;
  model.omega_p = ds.meta.spec.omega_p;
  return model;
}

// ---------------------------------------------------------------- persistence

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json model_to_json(const GPModel& model) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json outputs = json::array();
  for (const auto& o : model.outputs()) {
    const Eigen::Index m = o.chol.rows();
    std::vector<double> packed;
    packed.reserve(static_cast<std::size_t>(m * (m + 1) / 2));
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c <= r; ++c) packed.push_back(o.chol(r, c));
    }
    outputs.push_back({{"signal_variance", o.kernel.signal_variance},
                       {"inv_length_scales", vec(o.kernel.inv_length_scales)},
                       {"jitter", o.jitter},
                       {"log_likelihood", o.log_likelihood},
                       {"targets", vec(o.targets)},
                       {"chol_lower_packed", std::move(packed)}});
  }
  json inputs = json::array();
  const auto& x = model.train_inputs();
  for (Eigen::Index r = 0; r < x.rows(); ++r) inputs.push_back(vec(x.row(r).transpose()));
  const auto& s = model.scaling();
  return {{"schema_version", kModelSchemaVersion},
          {"n_moments", model.n_moments()},
          {"family", to_string(model.family())},
          {"outputs", std::move(outputs)},
          {"train_inputs", std::move(inputs)},
          {"scaling",
           {{"input_means", vec(s.input_mean)},
            {"input_stds", vec(s.input_std)},
            {"target_means", vec(s.target_mean)},
            {"target_stds", vec(s.target_std)}}},
          {"dataset_hash", model.dataset_hash},
          {"v_min", model.domain.v_min},
          {"v_max", model.domain.v_max},
          {"quad_order", model.quad_order},
          {"omega_p", intervals_to_json(model.omega_p)}};
}

inline void save_model(const GPModel& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, model_to_json(model).dump() + "\n");
}

inline GPModel model_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kModelSchemaVersion) {
      throw ParseError("unsupported model schema_version " + std::to_string(version) + " (this build reads version " +
                       std::to_string(kModelSchemaVersion) + ")");
    }
    auto vec = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    const int n = j.at("n_moments").get<int>();
    const KernelFamily family = parse_kernel_family(j.at("family").get<std::string>());
    ScalingStats s;
    const auto& js = j.at("scaling");
    s.input_mean = vec(js.at("input_means"));
    s.input_std = vec(js.at("input_stds"));
    s.target_mean = vec(js.at("target_means"));
    s.target_std = vec(js.at("target_stds"));
    if (s.n_moments() != n || s.n_features() != n - 2 || s.input_std.size() != n - 2 || s.target_std.size() != n) {
      throw ParseError("scaling vectors do not match n_moments = " + std::to_string(n));
    }
    const auto& jx = j.at("train_inputs");
    const Eigen::Index m = static_cast<Eigen::Index>(jx.size());
    Eigen::MatrixXd x(m, n - 2);
    for (Eigen::Index r = 0; r < m; ++r) {
      const auto row = jx[static_cast<std::size_t>(r)].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != n - 2) throw ParseError("train_inputs row has the wrong width");
      for (int c = 0; c < n - 2; ++c) x(r, c) = row[static_cast<std::size_t>(c)];
    }
    const auto& jo = j.at("outputs");
    if (static_cast<int>(jo.size()) != n) throw ParseError("model has " + std::to_string(jo.size()) + " outputs, expected " + std::to_string(n));
    std::vector<GPOutputModel> outputs;
    for (const auto& e : jo) {
      GPOutputModel o;
      o.kernel.family = family;
      o.kernel.signal_variance = e.at("signal_variance").get<double>();
      o.kernel.inv_length_scales = vec(e.at("inv_length_scales"));
      o.kernel.validate();
      if (o.kernel.n_features() != n - 2) throw ParseError("inverse length scales have the wrong size");
      o.jitter = e.at("jitter").get<double>();
      o.log_likelihood = e.value("log_likelihood", 0.0);
      o.targets = vec(e.at("targets"));
      if (o.targets.size() != m) throw ParseError("targets do not match the number of training inputs");
      const auto packed = e.at("chol_lower_packed").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(packed.size()) != m * (m + 1) / 2) throw ParseError("packed Cholesky factor has the wrong size");
      o.chol = Eigen::MatrixXd::Zero(m, m);
      std::size_t idx = 0;
      for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index c = 0; c <= r; ++c) o.chol(r, c) = packed[idx++];
      }
      o.alpha = detail::cholesky_solve(o.chol, o.targets);
      outputs.push_back(std::move(o));
    }
    GPModel model(family, std::move(x), std::move(outputs), std::move(s));
    model.dataset_hash = j.value("dataset_hash", std::string());
    model.domain = {j.value("v_min", -10.0), j.value("v_max", 10.0)};
    model.quad_order = j.value("quad_order", kDefaultQuadOrder);
    model.omega_p = j.contains("omega_p") ? intervals_from_json(j.at("omega_p")) : default_moment_box(std::min(n, 8));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid model file: ") + e.what());
  }
}

inline GPModel load_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("model file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

/// A warning when the model was not trained on `ds`.
inline std::optional<std::string> dataset_mismatch_warning(const GPModel& model, const Dataset& ds) {
  const std::string h = dataset_hash(ds);
  if (model.dataset_hash == h) return std::nullopt;
  return "model was trained on dataset " + model.dataset_hash + " but the given dataset hashes to " + h;
}

}  // namespace maxent
