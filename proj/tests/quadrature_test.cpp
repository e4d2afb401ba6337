#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "maxent/quadrature.hpp"

using maxent::build_rule;
using maxent::integrate;
using maxent::VelocityDomain;

namespace {

double gaussian(double v) { return std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi); }

// Closed-form integral of v^d over [a, b].
double monomial_integral(int d, double a, double b) {
  return (std::pow(b, d + 1) - std::pow(a, d + 1)) / (d + 1);
}

}  // namespace

TEST(Quadrature, SinglePointRuleIsMidpoint) {
  const auto rule = build_rule({-1.0, 1.0}, 1);
  ASSERT_EQ(rule.size(), 1);
  EXPECT_EQ(rule.nodes()[0], 0.0);
  EXPECT_DOUBLE_EQ(rule.weights()[0], 2.0);
}

TEST(Quadrature, WeightsSumToWidth) {
  for (int order : {1, 2, 5, 20, 64, 128, 256}) {
    const auto rule = build_rule({-10.0, 10.0}, order);
    EXPECT_NEAR(rule.weights().sum(), 20.0, 20.0 * 1e-12) << "order " << order;
    EXPECT_NEAR(integrate([](double) { return 1.0; }, rule), 20.0, 20.0 * 1e-12);
    EXPECT_TRUE((rule.weights() > 0.0).all());
    EXPECT_TRUE((rule.nodes() >= -10.0).all() && (rule.nodes() <= 10.0).all());
  }
}

TEST(Quadrature, GaussianSecondMoment) {
  auto second = [](double v) { return v * v * gaussian(v); };
  // 32 nodes on [-10, 10] leave a 3e-7 resolution error; 48 reach 1e-10.
  EXPECT_NEAR(integrate(second, build_rule({-10.0, 10.0}, 32)), 1.0, 1e-6);
  EXPECT_NEAR(integrate(second, build_rule({-10.0, 10.0}, 48)), 1.0, 1e-10);
}

TEST(Quadrature, OddIntegrandVanishes) {
  for (int order : {1, 2, 7, 64}) {
    const auto rule = build_rule({-10.0, 10.0}, order);
    EXPECT_NEAR(integrate([](double v) { return v; }, rule), 0.0, 1e-12);
  }
}

TEST(Quadrature, TwoPointRuleIsCubicExact) {
  const auto rule = build_rule({0.0, 1.0}, 2);
  EXPECT_NEAR(integrate([](double v) { return v * v * v; }, rule), 0.25, 1e-14);
}

TEST(Quadrature, GaussianNormalization) {
  const auto rule = build_rule({-10.0, 10.0}, 40);
  EXPECT_NEAR(integrate(gaussian, rule), 1.0, 1e-12);
}

TEST(Quadrature, InvalidDomainThrows) {
  EXPECT_THROW(build_rule({1.0, 1.0}, 4), maxent::DomainError);
  EXPECT_THROW(build_rule({2.0, -1.0}, 4), maxent::DomainError);
  EXPECT_THROW(build_rule({-1.0, 1.0}, 0), maxent::DomainError);
}

TEST(Quadrature, NonFiniteIntegrandReportsNode) {
  const auto rule = build_rule({-1.0, 1.0}, 3);
  try {
    integrate([](double v) { return v > 0.5 ? std::numeric_limits<double>::infinity() : 1.0; }, rule);
    FAIL() << "expected EvaluationError";
  } catch (const maxent::EvaluationError& e) {
    EXPECT_GT(e.node(), 0.5);
  }
}

TEST(Quadrature, ExactForMonomialsUpToDegree2qMinus1) {
  const VelocityDomain domains[] = {{-10.0, 10.0}, {0.0, 1.0}, {-3.0, 7.5}};
  for (const auto& dom : domains) {
    for (int order : {1, 2, 3, 5, 8, 12}) {
      const auto rule = build_rule(dom, order);
      for (int d = 0; d <= 2 * order - 1; ++d) {
        const double exact = monomial_integral(d, dom.v_min, dom.v_max);
        const double got = integrate([d](double v) { return std::pow(v, d); }, rule);
        const double scale = std::max(std::abs(exact), integrate([d](double v) { return std::abs(std::pow(v, d)); }, rule));
        EXPECT_NEAR(got, exact, 1e-10 * scale) << "order " << order << " degree " << d;
      }
    }
  }
}

TEST(Quadrature, AffineCovariance) {
  // int_c^d f(a v + b) dv = (1/a) int_{ac+b}^{ad+b} f(u) du
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  auto f = [](double x) { return std::exp(-x * x) * std::cos(3.0 * x); };
  for (int trial = 0; trial < 20; ++trial) {
    const double a = 0.5 + std::abs(u(rng));
    const double b = u(rng);
    const double c = -1.0 + 0.1 * u(rng);
    const double d = 1.5 + u(rng) * 0.2;
    const auto lhs_rule = build_rule({c, d}, 48);
    const auto rhs_rule = build_rule({a * c + b, a * d + b}, 48);
    const double lhs = integrate([&](double v) { return f(a * v + b); }, lhs_rule);
    const double rhs = integrate(f, rhs_rule) / a;
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(Quadrature, DoublingOrderConverges) {
  auto f = [](double v) { return std::exp(-0.5 * v * v) * (1.0 + 0.3 * v + std::cos(v)); };
  const VelocityDomain dom{-10.0, 10.0};
  for (int order : {64, 128}) {
    const double a = integrate(f, build_rule(dom, order));
    const double b = integrate(f, build_rule(dom, 2 * order));
    EXPECT_LT(std::abs(a - b), 1e-8 * std::abs(b));
  }
}
