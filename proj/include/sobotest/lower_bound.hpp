#pragma once

// Lower-bound construction: the null prior is the point mass at f = 0, the
// alternative prior is uniform over sign patterns +-v on the 2^J level-J
// coefficients. Their chi^2 divergence has the closed form cosh(n v^2)^{2^J};
// any test then has total error at least 1 - sqrt(chi2 - 1) / 2.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "sobotest/errors.hpp"
#include "sobotest/parallel.hpp"
#include "sobotest/regularity_test.hpp"
#include "sobotest/sequence_model.hpp"
#include "sobotest/sobolev_geometry.hpp"

namespace sobotest {

using LowerBoundConfig = TestConfig;

/// (a_eta, C_eta, N_eta) under one convention for the divergence-budget root.
struct ConstantTriple {
  double a_eta = 0.0;
  double C_eta = 0.0;
  double N_eta = 0.0;  // may exceed 2^53; kept as a real
};

struct LowerBoundConstants {
  ConstantTriple square_root;  // sqrt(ln(1 + 4(1-eta)^2))
  ConstantTriple fourth_root;  // ln(1 + 4(1-eta)^2)^{1/4}
  ConstantTriple chosen;       // the smaller a_eta of the two
};

namespace detail {

inline ConstantTriple constant_triple(const TestConfig& cfg, double root) {
  ConstantTriple out;
  out.a_eta = std::min(1.0, root / (std::exp2(cfg.t) * 16.0 * cfg.R));
  out.C_eta = cfg.R / 2.0 * out.a_eta;
  const double base = cfg.R * std::exp2(cfg.s - cfg.t) / out.C_eta;
  out.N_eta = std::ceil(std::pow(base, (2.0 * cfg.t + 0.5) / (cfg.s - cfg.t)));
  return out;
}

}  // namespace detail

/// ln(1 + 4 (1 - eta)^2): the chi^2 budget that keeps the total error above eta.
inline double divergence_budget(double eta) { return std::log1p(4.0 * (1.0 - eta) * (1.0 - eta)); }

inline LowerBoundConstants compute_constants(const TestConfig& cfg) {
  cfg.validate();
  const double budget = divergence_budget(cfg.eta);
  LowerBoundConstants out;
  out.square_root = detail::constant_triple(cfg, std::sqrt(budget));
  out.fourth_root = detail::constant_triple(cfg, std::sqrt(std::sqrt(budget)));
  out.chosen = out.square_root.a_eta <= out.fourth_root.a_eta ? out.square_root : out.fourth_root;
  return out;
}

/// v = a_eta R 2^{-J(t + 1/2)}.
inline double prior_amplitude(const TestConfig& cfg, double a_eta) {
  if (!(a_eta > 0.0 && a_eta <= 1.0)) throw ConfigError("a_eta must lie in (0, 1]");
  const int J = compute_J(cfg.n, cfg.t);
  return a_eta * cfg.R * std::exp2(-J * (cfg.t + 0.5));
}

/// log(cosh(x)) without overflow for large |x| or cancellation for small |x|.
inline double log_cosh(double x) {
  const double ax = std::abs(x);
  if (ax > 1.0) return ax + std::log1p(std::exp(-2.0 * ax)) - std::log(2.0);
  const double sh = std::sinh(0.5 * ax);
  return std::log1p(2.0 * sh * sh);
}

struct Chi2Divergence {
  double value = 1.0;      // cosh(n v^2)^{2^J}, +inf on overflow
  double log_value = 0.0;  // 2^J log cosh(n v^2)
  bool overflow = false;
  double bound = 1.0;      // exp(2^J n^2 v^4 / 2)
  double log_bound = 0.0;
};

inline Chi2Divergence chi2_divergence_closed_form(double n, double v, int J) {
  if (!(n >= 1.0)) throw ConfigError("n must be >= 1");
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("v must be finite and >= 0");
  if (J < kMinLevel || J > 62) throw ConfigError("J must lie in 2..62");
  const double width = std::exp2(J);
  const double x = n * v * v;
  Chi2Divergence out;
  out.log_value = width * log_cosh(x);
  out.log_bound = width * x * x / 2.0;
  out.value = std::exp(out.log_value);
  out.bound = std::exp(out.log_bound);
  out.overflow = std::isinf(out.value);
  // cosh(x) <= exp(x^2 / 2) termwise.
  if (out.log_value > out.log_bound * (1.0 + 1e-12) + 1e-300) {
    throw std::logic_error("chi2 closed form exceeds its exponential bound");
  }
  return out;
}

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo oracle for the chi^2 quantity: x ~ N(0, 1/n)^{2^J} and the
/// likelihood ratio is the explicit average over all 2^{2^J} sign patterns,
/// enumerated in Gray-code order. Restricted to 2^J <= 16.
inline MonteCarloEstimate chi2_divergence_mc(double n, double v, int J, std::size_t reps,
                                             std::uint64_t seed, unsigned threads = 1) {
  if (J < kMinLevel || J > 4) throw ConfigError("MC divergence oracle needs 2 <= J <= 4");
  if (reps < 10000) throw ConfigError("MC divergence oracle needs reps >= 10^4");
  if (!(n >= 1.0)) throw ConfigError("n must be >= 1");
  if (!(v >= 0.0)) throw ConfigError("v must be >= 0");

  const std::size_t width = level_size(J);
  const std::uint64_t patterns = std::uint64_t{1} << width;
  const double sd = 1.0 / std::sqrt(n);
  std::vector<double> ratio_sq(reps);

  parallel_for(reps, threads, [&](std::size_t rep) {
    std::vector<double> x(width);
    for (std::size_t k = 0; k < width; ++k) {
      x[k] = sd * rng::keyed_normal(rng::derive_key(seed, rng::Domain::oracle, rep, k));
    }
    // Start from the all-minus pattern and flip one sign per Gray step.
    std::vector<int> sign(width, -1);
    double log_term = 0.0;
    for (std::size_t k = 0; k < width; ++k) log_term += -n * v * x[k] - 0.5 * n * v * v;
    double acc = std::exp(log_term);
    for (std::uint64_t g = 1; g < patterns; ++g) {
      const auto k = static_cast<std::size_t>(std::countr_zero(g));
      log_term += 2.0 * n * v * x[k] * (sign[k] < 0 ? 1.0 : -1.0);
      sign[k] = -sign[k];
      acc += std::exp(log_term);
    }
    const double ratio = acc / static_cast<double>(patterns);
    ratio_sq[rep] = ratio * ratio;
  });

  double mean = 0.0;
  for (double r : ratio_sq) mean += r;
  mean /= static_cast<double>(reps);
  double var = 0.0;
  for (double r : ratio_sq) var += (r - mean) * (r - mean);
  var /= static_cast<double>(reps - 1);
  return {mean, std::sqrt(var / static_cast<double>(reps))};
}

/// 1 - sqrt(chi2 - 1) / 2, clamped at 0.
inline double total_error_lower_bound(double chi2_div) {
  if (std::isnan(chi2_div) || chi2_div < 1.0) throw ConfigError("chi2 divergence must be >= 1");
  if (std::isinf(chi2_div)) return 0.0;
  return std::max(0.0, 1.0 - 0.5 * std::sqrt(chi2_div - 1.0));
}

/// One draw of the alternative prior: level-J signs uniform, other levels 0.
inline CoefficientArray sample_from_prior(const TestConfig& cfg, double v, std::uint64_t seed,
                                          std::uint64_t stream) {
  if (!(v > 0.0)) throw ConfigError("prior amplitude v must be > 0");
  const int J = compute_J(cfg.n, cfg.t);
  auto zero = CoefficientArray::zeros(J);
  std::vector<double> values(zero.values().begin(), zero.values().end());
  const std::uint64_t key = rng::derive_key(seed, rng::Domain::prior, stream);
  rng::CounterEngine eng(key);
  std::uint64_t bits = 0;
  for (std::size_t k = 0; k < level_size(J); ++k) {
    if (k % 64 == 0) bits = eng();
    values[level_offset(J) + k] = ((bits >> (k % 64)) & 1U) ? v : -v;
  }
  return CoefficientArray::from_values(J, std::move(values));
}

struct LowerBoundReport {
  TestConfig config;
  int J = 0;
  double v = 0.0;
  LowerBoundConstants constants;
  double a_eta = 0.0;
  double C_eta = 0.0;
  double N_eta = 0.0;
  bool feasible = false;  // n >= N_eta

  double prior_norm_t = 0.0;          // ||f||_{B_t} of every prior draw
  bool prior_in_alternative_ball = false;
  double separation = 0.0;            // dist(draw, B_s(R)), closed form
  double separation_projected = 0.0;  // same, via the ellipsoid projector
  double separation_target = 0.0;     // a_eta (R/2) 2^{-Jt}
  bool separation_ok = false;

  Chi2Divergence chi2;
  double chi2_budget = 0.0;  // 1 + 4(1 - eta)^2
  bool chi2_ok = false;
  double total_error_lb = 0.0;

  bool checks_passed() const { return prior_in_alternative_ball && separation_ok && chi2_ok; }
  bool passed() const { return feasible && checks_passed(); }
};

inline LowerBoundReport verify_lower_bound(const TestConfig& cfg) {
  cfg.validate();
  LowerBoundReport rep;
  rep.config = cfg;
  rep.J = compute_J(cfg.n, cfg.t);
  rep.constants = compute_constants(cfg);
  rep.a_eta = rep.constants.chosen.a_eta;
  rep.C_eta = rep.constants.chosen.C_eta;
  rep.N_eta = rep.constants.chosen.N_eta;
  rep.feasible = cfg.n >= rep.N_eta;
  rep.v = prior_amplitude(cfg, rep.a_eta);

  // All draws share their level norms, so one draw certifies the whole support.
  const auto draw = sample_from_prior(cfg, rep.v, 0, 0);
  rep.prior_norm_t = std::sqrt(sobolev_norm_sq(draw, cfg.t));
  rep.prior_in_alternative_ball = rep.prior_norm_t <= cfg.R * (1.0 + 1e-12);

  const double l2 = std::exp2(rep.J / 2.0) * rep.v;
  rep.separation = std::max(0.0, l2 - cfg.R * std::exp2(-rep.J * cfg.s));
  rep.separation_projected = distance_to_ball(draw, BallSpec{cfg.s, cfg.R});
  rep.separation_target = rep.a_eta * cfg.R / 2.0 * std::exp2(-rep.J * cfg.t);
  rep.separation_ok = rep.separation >= rep.separation_target * (1.0 - 1e-12);

  rep.chi2 = chi2_divergence_closed_form(cfg.n, rep.v, rep.J);
  rep.chi2_budget = 1.0 + 4.0 * (1.0 - cfg.eta) * (1.0 - cfg.eta);
  rep.chi2_ok = rep.chi2.value < rep.chi2_budget;
  rep.total_error_lb = total_error_lower_bound(rep.chi2.value);
  return rep;
}

}  // namespace sobotest
