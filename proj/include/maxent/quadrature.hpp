#pragma once

// Gauss-Legendre rules on a bounded velocity interval.

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>
#include <utility>

#include "maxent/error.hpp"

namespace maxent {

struct VelocityDomain {
  double v_min = -10.0;
  double v_max = 10.0;

  double width() const { return v_max - v_min; }
  bool contains(double v) const { return v >= v_min && v <= v_max; }

  void validate() const {
    if (!(v_min < v_max) || !std::isfinite(v_min) || !std::isfinite(v_max)) {
      throw DomainError("invalid velocity domain [" + std::to_string(v_min) + ", " +
                        std::to_string(v_max) + "]: need finite v_min < v_max");
    }
  }

  friend bool operator==(const VelocityDomain&, const VelocityDomain&) = default;
};

namespace detail {

struct ReferenceRule {
  Eigen::ArrayXd nodes;    // ascending, in [-1, 1]
  Eigen::ArrayXd weights;
};

// (P_n(x), P_n'(x)) from the three-term recurrence.
inline std::pair<double, double> legendre_with_derivative(int n, double x) {
  double p0 = 1.0;
  double p1 = x;
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  return {p1, n * (x * p1 - p0) / (x * x - 1.0)};
}

// Legendre roots by Newton iteration, symmetric pairs filled together.
inline ReferenceRule compute_reference_rule(int order) {
  ReferenceRule r;
  r.nodes.resize(order);
  r.weights.resize(order);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = legendre_with_derivative(order, x);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) <= 1e-15) break;
    }
    const double dp = legendre_with_derivative(order, x).second;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    r.nodes[order - 1 - i] = x;
    r.weights[order - 1 - i] = w;
    r.nodes[i] = -x;
    r.weights[i] = w;
  }
  if (order % 2 == 1) r.nodes[order / 2] = 0.0;
  return r;
}

inline std::shared_ptr<const ReferenceRule> reference_rule(int order) {
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const ReferenceRule>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;
  auto rule = std::make_shared<const ReferenceRule>(compute_reference_rule(order));
  cache.emplace(order, rule);
  return rule;
}

}  // namespace detail

/// Immutable Gauss-Legendre rule mapped onto a velocity domain.
class QuadratureRule {
 public:
  QuadratureRule(VelocityDomain domain, int order) : domain_(domain), order_(order) {
    domain.validate();
    if (order < 1) throw DomainError("quadrature order must be >= 1, got " + std::to_string(order));
    const auto ref = detail::reference_rule(order);
    const double half = 0.5 * domain.width();
    const double mid = 0.5 * (domain.v_max + domain.v_min);
    nodes_ = mid + half * ref->nodes;
    weights_ = half * ref->weights;
    log_weights_ = weights_.log();
  }

  const VelocityDomain& domain() const { return domain_; }
  int order() const { return order_; }
  const Eigen::ArrayXd& nodes() const { return nodes_; }
  const Eigen::ArrayXd& weights() const { return weights_; }
  const Eigen::ArrayXd& log_weights() const { return log_weights_; }
  Eigen::Index size() const { return nodes_.size(); }

 private:
  VelocityDomain domain_;
  int order_;
  Eigen::ArrayXd nodes_;
  Eigen::ArrayXd weights_;
  Eigen::ArrayXd log_weights_;
};

inline constexpr int kDefaultQuadOrder = 64;

inline QuadratureRule build_rule(const VelocityDomain& domain, int order = kDefaultQuadOrder) {
  return QuadratureRule(domain, order);
}

/// Sum of w_k f(v_k); throws EvaluationError at the first non-finite value.
template <typename F>
double integrate(F&& integrand, const QuadratureRule& rule) {
  double sum = 0.0;
  const auto& v = rule.nodes();
  const auto& w = rule.weights();
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    const double f = integrand(v[k]);
    if (!std::isfinite(f)) throw EvaluationError("non-finite integrand value", v[k]);
    sum += w[k] * f;
  }
  return sum;
}

}  // namespace maxent
