#pragma once

// GP-accelerated maximum-entropy closure: raw moments -> standardized moments
// -> predicted multipliers -> normalized density.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>

#include "maxent/gp.hpp"
#include "maxent/med.hpp"

namespace maxent {

struct ClosureResult {
  MaxEntDensity density;  // standardized coordinates
  LagrangeVector lambda_hat;
  Eigen::VectorXd posterior_variance;
  MomentVector standardized_input;
  MomentVector reconstructed_moments;
  double mu = 0.0;
  double sigma = 1.0;
  bool out_of_box = false;
  std::string warning;

  /// log of the closed density in the original coordinate v: f(v) = f~((v - mu) / sigma) / sigma.
  double log_value_original(double v) const { return density.log_value((v - mu) / sigma) - std::log(sigma); }
};

/// Closes `raw` with the model. Inputs outside the training box are still
/// predicted; the result carries a warning and the posterior variance.
inline ClosureResult close_moments(const GPModel& model, const MomentVector& raw, const QuadratureRule& rule) {
  const Standardization st = standardize_raw_moments(raw);
  const auto pred = model.predict(st.standardized);
  if (!pred.mean.allFinite()) throw SaturationError("predicted multipliers are not finite");
  MaxEntDensity density(LagrangeVector(pred.mean), rule);
  if (!std::isfinite(density.log_z())) {
    throw SaturationError("closed density cannot be normalized (log Z = " + std::to_string(density.log_z()) + ")");
  }
  ClosureResult r{density, LagrangeVector(pred.mean), pred.variance, st.standardized,
                  moments_of(density, raw.size()), st.mu, st.sigma, false, {}};
  if (!r.reconstructed_moments.values.allFinite()) {
    throw SaturationError("closed density moments overflow");
  }
  const auto& box = model.omega_p;
  for (int j = 0; j < raw.size() && j < static_cast<int>(box.size()); ++j) {
    if (j >= 2 && !box[j].contains(st.standardized.values[j])) {
      r.out_of_box = true;
      r.warning = "standardized p_" + std::to_string(j + 1) + " = " + io::format_double(st.standardized.values[j]) +
                  " lies outside the training box; check the posterior variance";
      break;
    }
  }
  return r;
}

inline ClosureResult close_moments(const GPModel& model, const MomentVector& raw) {
  return close_moments(model, raw, build_rule(model.domain, model.quad_order));
}

/// ||lambda_hat - lambda_ex||_2 / ||lambda_ex||_2
inline double lambda_relative_error(const LagrangeVector& lambda_hat, const LagrangeVector& lambda_ex) {
  if (lambda_hat.size() != lambda_ex.size()) throw DomainError("multiplier vectors differ in length");
  const double norm = lambda_ex.values.norm();
  if (!(norm > 0.0)) throw DomainError("reference multipliers have zero norm");
  return (lambda_hat.values - lambda_ex.values).norm() / norm;
}

/// Mean over k = 3..N of |p_hat_k - p_k| / max(|p_k|, 1).
inline double moment_relative_error(const MomentVector& p_hat, const MomentVector& p_ref) {
  if (p_hat.size() != p_ref.size()) throw DomainError("moment vectors differ in length");
  const int n = p_ref.size();
  if (n < 3) return 0.0;
  double sum = 0.0;
  for (int k = 3; k <= n; ++k) sum += std::abs(p_hat[k] - p_ref[k]) / std::max(std::abs(p_ref[k]), 1.0);
  return sum / (n - 2);
}

}  // namespace maxent
