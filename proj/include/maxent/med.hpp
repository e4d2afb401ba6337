#pragma once

// Maximum-entropy densities f(v) = exp(-sum_j lambda_j v^j) / Z on a bounded
// velocity domain, the convex dual of the entropy problem, and a damped
// Newton solver for the multipliers given a moment vector.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "maxent/error.hpp"
#include "maxent/quadrature.hpp"

namespace maxent {

inline constexpr double kStandardizedTol = 1e-8;

/// Raw power moments p_1..p_N (p_0 = 1 is implicit).
struct MomentVector {
  Eigen::VectorXd values;
  bool standardized = false;

  MomentVector() = default;
  explicit MomentVector(Eigen::VectorXd v) : values(std::move(v)), standardized(check_standardized(values)) {}
  MomentVector(std::initializer_list<double> v)
      : MomentVector(Eigen::Map<const Eigen::VectorXd>(v.begin(), static_cast<Eigen::Index>(v.size()))) {}

  int size() const { return static_cast<int>(values.size()); }
  double operator[](int j) const { return values[j - 1]; }  // 1-based: p_j

  static bool check_standardized(const Eigen::VectorXd& v) {
    return v.size() >= 2 && std::abs(v[0]) <= kStandardizedTol && std::abs(v[1] - 1.0) <= kStandardizedTol;
  }
};

/// Multipliers lambda_1..lambda_N.
struct LagrangeVector {
  Eigen::VectorXd values;

  LagrangeVector() = default;
  explicit LagrangeVector(Eigen::VectorXd v) : values(std::move(v)) {}
  LagrangeVector(std::initializer_list<double> v)
      : values(Eigen::Map<const Eigen::VectorXd>(v.begin(), static_cast<Eigen::Index>(v.size()))) {}

  int size() const { return static_cast<int>(values.size()); }
  bool finite() const { return values.allFinite(); }
};

namespace detail {

// Exponent -sum_j lambda_j v^j by Horner.
inline double exponent_at(const Eigen::VectorXd& lambda, double v) {
  double acc = 0.0;
  for (Eigen::Index j = lambda.size() - 1; j >= 0; --j) acc = acc * v + lambda[j];
  return -acc * v;
}

inline Eigen::ArrayXd exponents(const Eigen::VectorXd& lambda, const Eigen::ArrayXd& nodes) {
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(nodes.size());
  for (Eigen::Index j = lambda.size() - 1; j >= 0; --j) acc = acc * nodes + lambda[j];
  return -acc * nodes;
}

/// Density at the quadrature nodes in normalized form: prob_k = w_k f(v_k).
struct Tilted {
  Eigen::ArrayXd exponent;  // -sum lambda_j v_k^j
  Eigen::ArrayXd prob;      // sums to 1
  double log_z = 0.0;
};

inline Tilted tilt(const Eigen::VectorXd& lambda, const QuadratureRule& rule) {
  if (!lambda.allFinite()) throw SaturationError("non-finite Lagrange multipliers");
  Tilted t;
  t.exponent = exponents(lambda, rule.nodes());
  if (!t.exponent.allFinite()) {
    throw SaturationError("exponent overflow while computing Z; shift the exponent or shrink the multipliers");
  }
  const double shift = t.exponent.maxCoeff();
  t.prob = rule.weights() * (t.exponent - shift).exp();
  const double s = t.prob.sum();
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw SaturationError("partition function Z is not representable; shift the exponent");
  }
  t.prob /= s;
  t.log_z = shift + std::log(s);
  return t;
}

/// E[v^k] for k = 0..max_power.
inline Eigen::VectorXd power_expectations(const Tilted& t, const Eigen::ArrayXd& nodes, int max_power) {
  Eigen::VectorXd e(max_power + 1);
  Eigen::ArrayXd term = t.prob;
  for (int k = 0; k <= max_power; ++k) {
    e[k] = term.sum();
    term *= nodes;
  }
  return e;
}

inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return std::round(r);
}

}  // namespace detail

/// Normalized maximum-entropy density. Immutable.
class MaxEntDensity {
 public:
  MaxEntDensity(LagrangeVector lambda, const QuadratureRule& rule)
      : lambda_(std::move(lambda)), rule_(rule), log_z_(detail::tilt(lambda_.values, rule).log_z) {}

  const LagrangeVector& lambda() const { return lambda_; }
  const VelocityDomain& domain() const { return rule_.domain(); }
  const QuadratureRule& rule() const { return rule_; }
  double log_z() const { return log_z_; }
  double z() const { return std::exp(log_z_); }
  int size() const { return lambda_.size(); }

  double log_value(double v) const { return detail::exponent_at(lambda_.values, v) - log_z_; }

 private:
  LagrangeVector lambda_;
  QuadratureRule rule_;
  double log_z_;
};

inline double density_value(const MaxEntDensity& d, double v) {
  if (!d.domain().contains(v)) {
    throw DomainError("v = " + std::to_string(v) + " outside the velocity domain");
  }
  const double arg = d.log_value(v);
  if (arg > 700.0) {
    throw SaturationError("density exponent " + std::to_string(arg) + " exceeds 700 at v = " + std::to_string(v));
  }
  return std::exp(arg);
}

inline MomentVector moments_of(const MaxEntDensity& d, int n_moments) {
  const auto t = detail::tilt(d.lambda().values, d.rule());
  const auto e = detail::power_expectations(t, d.rule().nodes(), n_moments);
  return MomentVector(e.tail(n_moments));
}

/// Everything Newton needs at one point: D(lambda), its gradient and Hessian.
struct DualState {
  double value = 0.0;
  Eigen::VectorXd target;  // p
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
  Eigen::MatrixXd root;  // rows sqrt(prob_k) (v_k^i - E[v^i]); hessian = root^T root
  detail::Tilted tilted;
};

/// D(lambda) = ln Z + lambda.p, gradient p - E[v^i], Hessian Cov(v^i, v^j).
inline DualState evaluate_dual(const LagrangeVector& lambda, const MomentVector& p, const QuadratureRule& rule,
                               bool with_hessian = true) {
  const int n = lambda.size();
  if (p.size() != n) {
    throw DomainError("moment vector has " + std::to_string(p.size()) + " entries, expected " + std::to_string(n));
  }
  if (!p.values.allFinite()) throw DomainError("moment vector contains non-finite entries");
  DualState s;
  s.tilted = detail::tilt(lambda.values, rule);
  const auto e = detail::power_expectations(s.tilted, rule.nodes(), n);
  s.value = s.tilted.log_z + lambda.values.dot(p.values);
  s.target = p.values;
  s.gradient = p.values - e.segment(1, n);
  if (with_hessian) {
    // Centered per node: E[v^{i+j}] - E[v^i] E[v^j] cancels catastrophically
    // once the powers reach 10^16.
    const Eigen::Index q = rule.size();
    Eigen::MatrixXd centered(q, n);
    Eigen::ArrayXd power = Eigen::ArrayXd::Ones(q);
    for (int i = 0; i < n; ++i) {
      power *= rule.nodes();
      centered.col(i) = (power - e[i + 1]).matrix();
    }
    s.root = s.tilted.prob.sqrt().matrix().asDiagonal() * centered;
    s.hessian = s.root.transpose() * s.root;
  }
  return s;
}

inline double dual_objective(const LagrangeVector& lambda, const MomentVector& p, const QuadratureRule& rule) {
  return evaluate_dual(lambda, p, rule, false).value;
}

inline Eigen::VectorXd dual_gradient(const LagrangeVector& lambda, const MomentVector& p, const QuadratureRule& rule) {
  return evaluate_dual(lambda, p, rule, false).gradient;
}

inline Eigen::MatrixXd dual_hessian(const LagrangeVector& lambda, const QuadratureRule& rule) {
  return evaluate_dual(lambda, MomentVector(Eigen::VectorXd::Zero(lambda.size())), rule, true).hessian;
}

/// D(lambda + step * direction) - D(lambda), evaluated relative to the density
/// at lambda so the difference keeps its accuracy when it is tiny.
inline double dual_objective_change(const DualState& at, const Eigen::VectorXd& direction, double step,
                                    const QuadratureRule& rule) {
  // x_k = -step * sum_j direction_j v_k^j; Z_new / Z_old = E[exp(x)].
  const Eigen::ArrayXd x = step * detail::exponents(direction, rule.nodes());
  if (!x.allFinite()) return std::numeric_limits<double>::infinity();
  const Eigen::ArrayXd log_prob = rule.log_weights() + at.tilted.exponent - at.tilted.log_z;
  const double linear = step * direction.dot(at.target);

  double y = 0.0;       // E[expm1(x)]
  double excess = 0.0;  // E[expm1(x) - x]
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double prob = std::exp(log_prob[k]);
    if (x[k] <= 1.0) {
      const double em1 = std::expm1(x[k]);
      y += prob * em1;
      excess += prob * (em1 - x[k]);
    } else {
      // prob may have underflowed while prob * e^x has not.
      const double t = std::exp(log_prob[k] + x[k] + std::log(-std::expm1(-x[k])));
      y += t;
      excess += t - prob * x[k];
    }
  }
  if (!std::isfinite(y) || std::abs(y) > 0.5) {
    const Eigen::ArrayXd a = log_prob + x;
    const double peak = a.maxCoeff();
    return peak + std::log((a - peak).exp().sum()) + linear;
  }
  // ln(1 + y) + step d.p = (log1p(y) - y) + E[expm1(x) - x] + step d.g
  return (std::log1p(y) - y) + excess + step * direction.dot(at.gradient);
}

struct SolverOptions {
  double tol = 1e-10;
  double armijo_c = 1e-4;
  double armijo_s = 0.5;
  int max_backtracks = 30;
  int max_iters = 200;
  double init_box = 0.1;

  void validate() const {
    if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw DomainError("armijo_c must lie in (0, 1)");
    if (!(armijo_s > 0.0 && armijo_s < 1.0)) throw DomainError("armijo_s must lie in (0, 1)");
    if (!(tol > 0.0)) throw DomainError("tolerance must be positive");
    if (max_backtracks < 0 || max_iters < 1) throw DomainError("iteration limits must be positive");
  }
};

struct NewtonResult {
  LagrangeVector lambda;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> objective_trace;  // D(lambda^(n)), n = 0..iterations
};

namespace detail {

/// Newton direction -H^{-1} g with H = A^T A, from a QR factorization of A
/// (columns equilibrated) so the conditioning is that of A rather than H.
/// damping > 0 solves (D H D + damping I) instead. A numerically rank
/// deficient A falls back to a jitter ladder (1e-12, x10 per retry, 5 retries).
inline Eigen::VectorXd newton_direction(const Eigen::MatrixXd& root, const Eigen::VectorXd& gradient,
                                        double damping = 0.0) {
  const Eigen::Index q = root.rows();
  const Eigen::Index n = root.cols();
  const Eigen::VectorXd norms = root.colwise().norm().transpose();
  if (!(norms.array() > 0.0).all() || !norms.allFinite()) {
    throw ConditioningError("Hessian has a non-positive diagonal entry; the moment problem is ill-conditioned");
  }
  const Eigen::VectorXd d = norms.cwiseInverse();
  const Eigen::VectorXd rhs = -d.cwiseProduct(gradient);
  double jitter = damping > 0.0 ? damping : 1e-12;
  for (int attempt = 0; attempt <= 5; ++attempt) {
    const double shift = (damping > 0.0 || attempt > 0) ? jitter : 0.0;
    Eigen::MatrixXd a(q + (shift > 0.0 ? n : 0), n);
    a.topRows(q) = root * d.asDiagonal();
    if (shift > 0.0) a.bottomRows(n) = std::sqrt(shift) * Eigen::MatrixXd::Identity(n, n);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(n, n).triangularView<Eigen::Upper>();
    const double r_max = std::abs(r(0, 0));
    if (qr.rank() == n && std::abs(r(n - 1, n - 1)) > 1e-15 * r_max) {
      // (A P)^T (A P) = R^T R
      const Eigen::VectorXd b = qr.colsPermutation().transpose() * rhs;
      const Eigen::VectorXd z = r.transpose().triangularView<Eigen::Lower>().solve(b);
      const Eigen::VectorXd y = r.triangularView<Eigen::Upper>().solve(z);
      const Eigen::VectorXd x = d.cwiseProduct(qr.colsPermutation() * y);
      if (x.allFinite()) return x;
    }
    if (attempt > 0 || damping > 0.0) jitter *= 10.0;
  }
  throw ConditioningError("Hessian lost positive definiteness (factorization failed after jitter retries)");
}

}  // namespace detail

/// Damped Newton on the dual with Armijo backtracking. Starts from a seeded
/// uniform draw in [-init_box, init_box]^N and stops when |g|_inf <= tol.
inline NewtonResult newton_solve(const MomentVector& p, const QuadratureRule& rule, const SolverOptions& opts,
                                 std::uint64_t seed) {
  opts.validate();
  const int n = p.size();
  if (n < 1) throw DomainError("empty moment vector");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> init(-opts.init_box, opts.init_box);
  NewtonResult result;
  result.lambda.values.resize(n);
  // A draw whose exponent grows toward the domain edge piles its mass onto the
  // boundary nodes, where the Hessian is numerically singular; such starts are
  // redrawn until the density vanishes (below 1e-12) at both ends.
  const double edge_cut = std::log(1e-12);
  DualState state;
  for (int attempt = 0;; ++attempt) {
    for (int i = 0; i < n; ++i) result.lambda.values[i] = init(rng);
    const double lo = detail::exponent_at(result.lambda.values, rule.domain().v_min);
    const double hi = detail::exponent_at(result.lambda.values, rule.domain().v_max);
    const double log_z = detail::tilt(result.lambda.values, rule).log_z;
    if (lo - log_z < edge_cut && hi - log_z < edge_cut) {
      state = evaluate_dual(result.lambda, p, rule);
      break;
    }
    if (attempt >= 10000) throw ConditioningError("no interior initial guess found in the initialization box");
  }
  result.objective_trace.push_back(state.value);
  for (int iter = 0;; ++iter) {
    const double gnorm = state.gradient.lpNorm<Eigen::Infinity>();
    result.gradient_norm = gnorm;
    result.iterations = iter;
    if (gnorm <= opts.tol) return result;
    if (iter >= opts.max_iters) {
      throw ConvergenceError("Newton solver did not converge in " + std::to_string(opts.max_iters) +
                                 " iterations (|g|_inf = " + std::to_string(gnorm) + ")",
                             gnorm);
    }
    // Pure Newton first. If backtracking runs out (the step is long in a
    // direction only the far tail feels), retry with a Levenberg-damped
    // direction on the equilibrated Hessian; damping 1e8 is nearly a scaled
    // gradient step.
    Eigen::VectorXd step;
    double beta = 1.0;
    bool accepted = false;
    for (double damping = 0.0; !accepted && damping <= 1e8; damping = damping == 0.0 ? 1e-4 : damping * 100.0) {
      step = detail::newton_direction(state.root, state.gradient, damping);
      const double slope = step.dot(state.gradient);
      beta = 1.0;
      for (int k = 0; k <= opts.max_backtracks; ++k) {
        const double change = dual_objective_change(state, step, beta, rule);
        if (change <= opts.armijo_c * beta * slope) {
          accepted = true;
          break;
        }
        beta *= opts.armijo_s;
      }
    }
    if (!accepted) {
      throw LineSearchError("Armijo line search exhausted " + std::to_string(opts.max_backtracks) +
                                " backtracks (|g|_inf = " + std::to_string(gnorm) + ")",
                            gnorm);
    }
    result.lambda.values += beta * step;
    state = evaluate_dual(result.lambda, p, rule);
    result.objective_trace.push_back(state.value);
  }
}

/// Multipliers of sigma * f(sigma v + mu) written in powers of v (exact on the real line).
inline LagrangeVector rescale_multipliers(const LagrangeVector& lambda_tilde, double mu, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  const int n = lambda_tilde.size();
  Eigen::VectorXd out(n);
  for (int i = 1; i <= n; ++i) {
    const double si = std::pow(sigma, i);
    double acc = 0.0;
    for (int j = i; j <= n; ++j) {
      acc += lambda_tilde.values[j - 1] * detail::binomial(j, i) * si * std::pow(mu, j - i);
    }
    out[i - 1] = acc;
  }
  return LagrangeVector(std::move(out));
}

/// KL(f_ref || d) with 0 ln 0 = 0; f_ref is sampled at the rule's nodes.
inline double kl_divergence_at_nodes(const Eigen::ArrayXd& f_ref, const MaxEntDensity& d, const QuadratureRule& rule) {
  if (f_ref.size() != rule.size()) throw DomainError("reference density sample count does not match the rule");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < f_ref.size(); ++k) {
    const double f = f_ref[k];
    if (f < 0.0 || !std::isfinite(f)) throw DomainError("reference density must be finite and non-negative");
    if (f == 0.0) continue;
    const double log_g = d.log_value(rule.nodes()[k]);
    if (!std::isfinite(log_g)) throw DomainError("KL divergence is infinite: model density vanishes where reference does not");
    sum += rule.weights()[k] * f * (std::log(f) - log_g);
  }
  return sum;
}

inline double kl_divergence(const std::function<double(double)>& f_ref, const MaxEntDensity& d,
                            const QuadratureRule& rule) {
  Eigen::ArrayXd samples(rule.size());
  for (Eigen::Index k = 0; k < rule.size(); ++k) samples[k] = f_ref(rule.nodes()[k]);
  return kl_divergence_at_nodes(samples, d, rule);
}

struct Standardization {
  double mu = 0.0;
  double sigma = 1.0;
  MomentVector standardized;
};

/// Moments of (v - mu) / sigma from raw moments, with mu = p_1, sigma^2 = p_2 - p_1^2.
inline Standardization standardize_raw_moments(const MomentVector& raw) {
  const int n = raw.size();
  if (n < 2) throw DegenerateError("standardization needs at least two moments");
  const double mu = raw.values[0];
  const double var = raw.values[1] - mu * mu;
  if (!(var > 0.0) || !std::isfinite(var)) {
    throw DegenerateError("non-positive central variance " + std::to_string(var) + "; cannot standardize");
  }
  const double sigma = std::sqrt(var);
  auto raw_at = [&](int k) { return k == 0 ? 1.0 : raw.values[k - 1]; };
  Eigen::VectorXd out(n);
  for (int k = 1; k <= n; ++k) {
    double acc = 0.0;
    for (int i = 0; i <= k; ++i) acc += detail::binomial(k, i) * raw_at(i) * std::pow(-mu, k - i);
    out[k - 1] = acc / std::pow(sigma, k);
  }
  out[0] = 0.0;
  out[1] = 1.0;
  Standardization s{mu, sigma, MomentVector(std::move(out))};
  s.standardized.standardized = true;
  return s;
}

}  // namespace maxent
