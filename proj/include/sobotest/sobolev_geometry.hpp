#pragma once

// Membership, Euclidean projection and L2 distance for Sobolev ellipsoids
//   B_r(R) = { b : sum_j 4^{jr} sum_k b_{j,k}^2 <= R^2 },
// plus the extremal signal profiles used to compare ell2 and sup balls.
//
// Everything in this module depends on a signal only through its squared
// level norms, so most routines come in a coefficient-array flavour and a
// cheaper level-norm flavour (level_sq[i] belongs to level i + 2).

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sobotest/errors.hpp"
#include "sobotest/sequence_model.hpp"

namespace sobotest {

enum class BallKind { ell2, sup };

struct BallSpec {
  double r = 1.0;
  double R = 1.0;
  BallKind kind = BallKind::ell2;

  void validate() const {
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("ball regularity r must be > 0");
    if (!(R > 0.0) || !std::isfinite(R)) throw ConfigError("ball radius R must be > 0");
  }
};

inline constexpr double kDefaultProjectionTol = 1e-10;
// Enough halvings to walk from DBL_MAX down to the smallest subnormal.
inline constexpr int kMaxBisectionIterations = 2200;
// Relative slack for membership so that points built on the boundary count as inside.
inline constexpr double kMembershipRelTol = 8.0 * std::numeric_limits<double>::epsilon();

struct ProjectionResult {
  double distance = 0.0;
  double multiplier = 0.0;
  CoefficientArray projected = CoefficientArray::zeros(kMinLevel);
  double kkt_residual = 0.0;
};

/// Lagrange multiplier of the projection, computed from level norms only.
struct MultiplierSolution {
  double lambda = 0.0;
  double residual = 0.0;  // |constraint(lambda)| / R^2
  double distance_sq = 0.0;
};

inline bool ball_contains(std::span<const double> level_sq, const BallSpec& ball) {
  ball.validate();
  const double norm_sq = ball.kind == BallKind::ell2 ? sobolev_norm_sq(level_sq, ball.r)
                                                     : sup_sobolev_norm_sq(level_sq, ball.r);
  return norm_sq <= ball.R * ball.R * (1.0 + kMembershipRelTol);
}

inline bool ball_contains(const CoefficientArray& c, const BallSpec& ball) {
  return ball_contains(level_norms_sq(c), ball);
}

namespace detail {

// lambda -> sum_j w_j m_j / (1 + lambda w_j)^2 - R^2, strictly decreasing.
inline double constraint_map(std::span<const double> level_sq, std::span<const double> weights,
                             double lambda, double R2) {
  double acc = 0.0;
  for (std::size_t i = 0; i < level_sq.size(); ++i) {
    // w m / (1 + lambda w)^2 = (m / w) / (1/w + lambda)^2, safe for huge w.
    const double inv = 1.0 / weights[i];
    const double e = inv + lambda;
    acc += level_sq[i] * inv / e / e;
  }
  return acc - R2;
}

inline double projection_distance_sq(std::span<const double> level_sq,
                                     std::span<const double> weights, double lambda) {
  double acc = 0.0;
  for (std::size_t i = 0; i < level_sq.size(); ++i) {
    // lw / (1 + lw), written to stay finite when lw overflows.
    const double shrink = 1.0 / (1.0 + 1.0 / (lambda * weights[i]));
    acc += level_sq[i] * shrink * shrink;
  }
  return acc;
}

}  // namespace detail

/// Solves for the projection multiplier by bracketed bisection on [0, S/R^2],
/// S = ||c||_{B_r}^2. The right end is feasible because (1 + x)^2 >= 4x and
/// the weights are >= 1.
inline MultiplierSolution solve_multiplier(std::span<const double> level_sq, const BallSpec& ball,
                                           double tol = kDefaultProjectionTol) {
  ball.validate();
  if (ball.kind != BallKind::ell2) throw ConfigError("projection is only defined for ell2 balls");
  if (!(tol > 0.0)) throw ConfigError("projection tolerance must be > 0");

  const double R2 = ball.R * ball.R;
  std::vector<double> weights(level_sq.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = sobolev_weight(static_cast<int>(i) + kMinLevel, ball.r);
  }
  const double S = sobolev_norm_sq(level_sq, ball.r);
  if (S <= R2) return {};

  double lo = 0.0;
  double hi = S / R2;
  for (int it = 0; it < kMaxBisectionIterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double g = detail::constraint_map(level_sq, weights, mid, R2);
    if (g > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      if (g == 0.0) break;
    }
  }
  // hi is always feasible, so the projection never leaves the ball.
  const double residual = std::abs(detail::constraint_map(level_sq, weights, hi, R2)) / R2;
  if (!(residual <= tol)) {
    throw ConvergenceError("projection bisection did not reach tolerance (residual " +
                               std::to_string(residual) + ")",
                           residual);
  }
  return {hi, residual, detail::projection_distance_sq(level_sq, weights, hi)};
}

/// Euclidean projection of c onto an ell2 Sobolev ball:
/// b_{j,k} = a_{j,k} / (1 + lambda 4^{jr}).
inline ProjectionResult project_onto_ball(const CoefficientArray& c, const BallSpec& ball,
                                          double tol = kDefaultProjectionTol) {
  const auto level_sq = level_norms_sq(c);
  const MultiplierSolution sol = solve_multiplier(level_sq, ball, tol);
  if (sol.lambda == 0.0) return {0.0, 0.0, c, 0.0};

  std::vector<double> projected(c.values().begin(), c.values().end());
  double lambda = sol.lambda;
  double dist_sq = 0.0;
  // Rounding in the per-coefficient shrink can leave the point an ulp
  // outside; nudge lambda until it is inside.
  for (int attempt = 0; attempt < 64; ++attempt) {
    dist_sq = 0.0;
    for (int j = kMinLevel; j <= c.j_max(); ++j) {
      const double shrink = 1.0 / (1.0 + lambda * sobolev_weight(j, ball.r));
      for (std::size_t k = 0; k < level_size(j); ++k) {
        const std::size_t idx = level_offset(j) + k;
        projected[idx] = c.values()[idx] * shrink;
        const double diff = c.values()[idx] - projected[idx];
        dist_sq += diff * diff;
      }
    }
    if (sobolev_norm_sq(CoefficientArray::from_values(c.j_max(), projected), ball.r) <= ball.R * ball.R) break;
    lambda *= 1.0 + 4.0 * std::numeric_limits<double>::epsilon();
  }
  return {std::sqrt(dist_sq), lambda, CoefficientArray::from_values(c.j_max(), std::move(projected)),
          sol.residual};
}

inline double distance_to_ball(std::span<const double> level_sq, const BallSpec& ball,
                               double tol = kDefaultProjectionTol) {
  return std::sqrt(solve_multiplier(level_sq, ball, tol).distance_sq);
}

inline double distance_to_ball(const CoefficientArray& c, const BallSpec& ball,
                               double tol = kDefaultProjectionTol) {
  return distance_to_ball(level_norms_sq(c), ball, tol);
}

/// Where a profile puts the mass of each level.
enum class MassPlacement { first_coefficient, uniform };

/// Array on levels 2..j_max with ||P_j f||_{L2} = norms[j - 2].
inline CoefficientArray make_level_profile(std::span<const double> norms,
                                           MassPlacement placement = MassPlacement::first_coefficient) {
  if (norms.empty()) throw ConfigError("profile needs at least one level");
  const int j_max = kMinLevel + static_cast<int>(norms.size()) - 1;
  auto zero = CoefficientArray::zeros(j_max);
  std::vector<double> v(zero.values().begin(), zero.values().end());
  for (int j = kMinLevel; j <= j_max; ++j) {
    const double norm = norms[static_cast<std::size_t>(j - kMinLevel)];
    if (placement == MassPlacement::first_coefficient) {
      v[level_offset(j)] = norm;
    } else {
      const double each = norm / std::sqrt(static_cast<double>(level_size(j)));
      for (std::size_t k = 0; k < level_size(j); ++k) v[level_offset(j) + k] = each;
    }
  }
  return CoefficientArray::from_values(j_max, std::move(v));
}

/// ||P_j f|| = R / 2^{js} on every level 2..j_max.
inline CoefficientArray make_geometric_profile(double R, double s, int j_max,
                                               MassPlacement placement = MassPlacement::first_coefficient) {
  if (j_max < 3) throw ConfigError("geometric profile needs j_max >= 3");
  std::vector<double> norms;
  for (int j = kMinLevel; j <= j_max; ++j) norms.push_back(R * std::exp2(-j * s));
  return make_level_profile(norms, placement);
}

/// ||P_2 f||^2 = a^2 R^2 / 4^{2s}, ||P_J f||^2 = R^2 / 4^{Js}, zero elsewhere.
inline CoefficientArray make_two_level_profile(double a, double R, double s, int J,
                                               MassPlacement placement = MassPlacement::first_coefficient) {
  if (!(a > 1.0)) throw ConfigError("two-level profile needs a > 1");
  if (J < 3) throw ConfigError("two-level profile needs J >= 3");
  std::vector<double> norms(static_cast<std::size_t>(J - 1), 0.0);
  norms.front() = a * R * std::exp2(-2.0 * s);
  norms.back() = R * std::exp2(-J * s);
  return make_level_profile(norms, placement);
}

/// Distances dist(P_2^j f, B) for j = 2..level_sq.size()+1 (prefix projections).
inline std::vector<double> prefix_distances(std::span<const double> level_sq, const BallSpec& ball,
                                            double tol = kDefaultProjectionTol) {
  std::vector<double> out;
  out.reserve(level_sq.size());
  for (std::size_t len = 1; len <= level_sq.size(); ++len) {
    out.push_back(distance_to_ball(level_sq.first(len), ball, tol));
  }
  return out;
}

/// Smallest j* in 2..J with dist(P_2^{j*-1} f) <= rho_{j*-1} and
/// dist(P_2^{j*} f) > rho_{j*}, where rho[i] = rho_{i+2}, J = rho.size() + 1
/// and rho_1 = 0 (the empty truncation has distance 0).
/// Throws PreconditionError when no such index exists, i.e. when
/// dist(P_2^J f) <= rho_J.
inline int transition_index(std::span<const double> level_sq, const BallSpec& ball,
                            std::span<const double> rho, double tol = kDefaultProjectionTol) {
  if (rho.empty()) throw ConfigError("rho schedule must cover at least level 2");
  if (level_sq.size() < rho.size()) {
    throw ConfigError("signal stores fewer levels than the rho schedule covers");
  }
  double prev_dist = 0.0;
  double prev_rho = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double dist = distance_to_ball(level_sq.first(i + 1), ball, tol);
    if (prev_dist <= prev_rho && dist > rho[i]) return static_cast<int>(i) + kMinLevel;
    prev_dist = dist;
    prev_rho = rho[i];
  }
  throw PreconditionError("no transition index: truncated signal is not separated by rho_J");
}

inline int transition_index(const CoefficientArray& c, const BallSpec& ball,
                            std::span<const double> rho, double tol = kDefaultProjectionTol) {
  return transition_index(level_norms_sq(c), ball, rho, tol);
}

}  // namespace sobotest
