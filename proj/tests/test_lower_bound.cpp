#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <random>

#include "sobotest/lower_bound.hpp"

using namespace sobotest;
using Quad = boost::multiprecision::cpp_bin_float_quad;

namespace {

const TestConfig kLb{293085.0, 2.0, 1.0, 1.0, 0.5};

double quad_chi2(double n, double v, int J) {
  const Quad x = Quad(n) * Quad(v) * Quad(v);
  return static_cast<double>(boost::multiprecision::pow(boost::multiprecision::cosh(x), static_cast<int>(1 << J)));
}

}  // namespace

TEST(Constants, FrozenValues) {
  const auto c = compute_constants(kLb);
  EXPECT_NEAR(c.square_root.a_eta, 0.026017331598678054886, 1e-15);
  EXPECT_NEAR(c.square_root.C_eta, 0.013008665799339027443, 1e-15);
  EXPECT_EQ(c.square_root.N_eta, 293085.0);
  EXPECT_NEAR(c.fourth_root.a_eta, 0.028513884555750891501, 1e-15);
  EXPECT_EQ(c.fourth_root.N_eta, 233083.0);
  // The smaller a_eta is the conservative choice.
  EXPECT_EQ(c.chosen.a_eta, c.square_root.a_eta);
}

TEST(Constants, AmplitudeCapsAtOne) {
  const TestConfig tiny_R{1e4, 2.0, 1.0, 1e-4, 0.5};
  EXPECT_EQ(compute_constants(tiny_R).chosen.a_eta, 1.0);
  EXPECT_THROW(prior_amplitude(kLb, 0.0), ConfigError);
  EXPECT_THROW(prior_amplitude(kLb, 1.5), ConfigError);
}

TEST(Constants, BudgetIsLog) {
  EXPECT_NEAR(divergence_budget(0.5), std::log(2.0), 1e-15);
  EXPECT_NEAR(divergence_budget(0.0), std::log(5.0), 1e-15);
}

TEST(LogCosh, AgreesWithQuad) {
  for (double x : {0.0, 1e-10, 1e-4, 0.3, 0.999, 1.0, 1.001, 5.0, 40.0, 800.0}) {
    const double ref = static_cast<double>(boost::multiprecision::log(boost::multiprecision::cosh(Quad(x))));
    EXPECT_NEAR(log_cosh(x), ref, 1e-15 * std::max(1.0, std::abs(ref)) + 1e-300) << x;
    EXPECT_EQ(log_cosh(-x), log_cosh(x));
  }
}

TEST(Chi2, ClosedFormExamples) {
  const auto zero = chi2_divergence_closed_form(1e4, 0.0, 5);
  EXPECT_EQ(zero.value, 1.0);
  EXPECT_EQ(zero.log_value, 0.0);
  const double expected[] = {1.0201674242893447743, 1.194064555036680701, 1.6168147787930758217};
  const double xs[] = {0.1, 0.3, 0.5};
  for (int i = 0; i < 3; ++i) {
    const double v = std::sqrt(xs[i] / 100.0);
    EXPECT_NEAR(chi2_divergence_closed_form(100.0, v, 2).value, expected[i], 1e-14);
  }
}

TEST(Chi2, BoundOnRandomGrid) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> ln(0.0, 12.0), lv(-8.0, -1.0);
  std::uniform_int_distribution<int> lj(2, 20);
  for (int i = 0; i < 100; ++i) {
    const double n = std::pow(10.0, ln(gen));
    const double v = std::pow(10.0, lv(gen));
    const int J = lj(gen);
    const auto c = chi2_divergence_closed_form(n, v, J);
    EXPECT_LE(c.log_value, c.log_bound);
    if (!c.overflow && c.log_value < 700.0) {
      EXPECT_NEAR(c.value / quad_chi2(n, v, J), 1.0, 1e-12);
    }
  }
}

TEST(Chi2, OverflowIsFlagged) {
  const auto c = chi2_divergence_closed_form(1e6, 0.1, 20);
  EXPECT_TRUE(c.overflow);
  EXPECT_TRUE(std::isinf(c.value));
  EXPECT_TRUE(std::isfinite(c.log_value));
  EXPECT_EQ(total_error_lower_bound(c.value), 0.0);
}

TEST(Chi2, MonteCarloOracleAgrees) {
  for (double x : {0.1, 0.3}) {
    const double n = 100.0, v = std::sqrt(x / n);
    const auto mc = chi2_divergence_mc(n, v, 2, 100000, 13);
    const double exact = chi2_divergence_closed_form(n, v, 2).value;
    EXPECT_NEAR(mc.estimate, exact, 3.0 * mc.std_error + 1e-12) << x;
  }
  EXPECT_THROW(chi2_divergence_mc(100, 0.1, 5, 10000, 1), ConfigError);
  EXPECT_THROW(chi2_divergence_mc(100, 0.1, 2, 100, 1), ConfigError);
}

TEST(Chi2, MonteCarloIsThreadIndependent) {
  const auto a = chi2_divergence_mc(50.0, 0.05, 2, 20000, 3, 1);
  const auto b = chi2_divergence_mc(50.0, 0.05, 2, 20000, 3, 8);
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(TotalError, Bound) {
  EXPECT_EQ(total_error_lower_bound(1.0), 1.0);
  EXPECT_NEAR(total_error_lower_bound(1.04), 0.9, 1e-12);
  EXPECT_EQ(total_error_lower_bound(10.0), 0.0);
  EXPECT_THROW(total_error_lower_bound(0.5), ConfigError);
}

TEST(Prior, DrawsShareLevelNorms) {
  const double v = 0.01;
  const auto a = sample_from_prior(kLb, v, 1, 0);
  const auto b = sample_from_prior(kLb, v, 1, 1);
  EXPECT_NE(a, b);
  EXPECT_EQ(a, sample_from_prior(kLb, v, 1, 0));
  EXPECT_EQ(level_norms_sq(a), level_norms_sq(b));
  for (double x : a.level(a.j_max())) EXPECT_EQ(std::abs(x), v);
  EXPECT_EQ(level_norm_sq(a, 2), 0.0);
}

TEST(Prior, SignsAreBalanced) {
  std::size_t plus = 0, total = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto d = sample_from_prior(kLb, 1.0, 7, s);
    for (double x : d.level(d.j_max())) {
      plus += x > 0;
      ++total;
    }
  }
  EXPECT_NEAR(static_cast<double>(plus) / total, 0.5, 5.0 * 0.5 / std::sqrt(static_cast<double>(total)));
}

TEST(Report, EndToEndAtMinimalFeasibleN) {
  const auto r = verify_lower_bound(kLb);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.J, 7);
  EXPECT_NEAR(r.v, 0.000017965851173637003952, 1e-18);
  EXPECT_TRUE(r.prior_in_alternative_ball);
  EXPECT_TRUE(r.separation_ok);
  EXPECT_NEAR(r.separation, 0.0001422252468646723038, 1e-16);
  EXPECT_NEAR(r.separation_projected, r.separation, 1e-12);
  EXPECT_TRUE(r.chi2_ok);
  EXPECT_NEAR(r.chi2.value, 1.000000572741262539179247, 1e-14);
  EXPECT_NEAR(r.total_error_lb, 0.99962160164424935088, 1e-9);
  EXPECT_GT(r.total_error_lb, kLb.eta);
  EXPECT_TRUE(r.passed());
}

TEST(Report, InfeasibleNIsFlaggedNotFatal) {
  TestConfig small = kLb;
  small.n = 1e4;
  const auto r = verify_lower_bound(small);
  EXPECT_FALSE(r.feasible);
  EXPECT_FALSE(r.passed());
}

TEST(Report, FeasibilityIsMonotoneInN) {
  bool seen = false;
  for (double n = 1e5; n < 1e7; n *= 1.5) {
    TestConfig c = kLb;
    c.n = n;
    const auto r = verify_lower_bound(c);
    if (seen) {
      EXPECT_TRUE(r.passed()) << n;
    }
    seen = seen || r.passed();
  }
  EXPECT_TRUE(seen);
}
