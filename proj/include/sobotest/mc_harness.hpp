#pragma once

// Replicated Monte-Carlo experiments on top of the test: rejection rates with
// Wilson intervals, randomized property suites for the structural lemmas, the
// concentration inequality, and empirical separation-rate curves.
//
// Every stochastic quantity is keyed by (seed, replicate, ...), work items
// write to their own slot and aggregation runs in index order, so outputs do
// not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "sobotest/errors.hpp"
#include "sobotest/lower_bound.hpp"
#include "sobotest/parallel.hpp"
#include "sobotest/regularity_test.hpp"
#include "sobotest/sequence_model.hpp"
#include "sobotest/sobolev_geometry.hpp"

namespace sobotest {

inline constexpr double kZ95 = 1.959963984540054;

// ---------------------------------------------------------------------------
// Binomial intervals

struct Interval {
  double low = 0.0;
  double high = 1.0;
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = kZ95) {
  if (trials == 0) throw ConfigError("Wilson interval needs trials >= 1");
  if (successes > trials) throw ConfigError("successes exceed trials");
  if (!(z > 0.0)) throw ConfigError("z must be > 0");
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  Interval out{std::max(0.0, centre - half), std::min(1.0, centre + half)};
  if (successes == 0) out.low = 0.0;
  if (successes == trials) out.high = 1.0;
  return out;
}

/// One-sigma Wilson half width; the "Wilson sd" used for slack allowances.
inline double wilson_sd(std::size_t successes, std::size_t trials) {
  const Interval iv = wilson_interval(successes, trials, 1.0);
  return 0.5 * (iv.high - iv.low);
}

struct ErrorEstimate {
  double rate = 0.0;
  double wilson_low = 0.0;
  double wilson_high = 1.0;
  std::size_t replicates = 0;
  std::size_t rejections = 0;
};

inline ErrorEstimate make_error_estimate(std::size_t rejections, std::size_t replicates) {
  const Interval iv = wilson_interval(rejections, replicates);
  const double rate = static_cast<double>(rejections) / static_cast<double>(replicates);
  return {rate, std::min(iv.low, rate), std::max(iv.high, rate), replicates, rejections};
}

// ---------------------------------------------------------------------------
// Scenarios

enum class Hypothesis { H0, H1, neither };

inline const char* to_string(Hypothesis h) {
  switch (h) {
    case Hypothesis::H0: return "H0";
    case Hypothesis::H1: return "H1";
    default: return "neither";
  }
}

namespace truth {

struct Zero {};

/// Single coefficient at (level, 0) with ||f||_{B_r} = R.
struct BoundaryNull {
  int level = kMinLevel;
  double r = 2.0;
  double R = 1.0;
};

/// ||P_j f|| = R 2^{-js} on every stored level.
struct GeometricProfile {
  double R = 1.0;
  double s = 2.0;
};

/// Mass a R / 4^s at level 2 and R / 2^{Js} at level J.
struct TwoLevel {
  double a = 2.0;
  double R = 1.0;
  double s = 2.0;
  int J = 3;
};

/// One Rademacher draw per replicate: +-v on the level-J coefficients.
struct PriorDraw {
  double v = 0.0;
  int J = kMinLevel;
};

struct Custom {
  CoefficientArray coefficients = CoefficientArray::zeros(kMinLevel);
};

}  // namespace truth

using TruthGenerator = std::variant<truth::Zero, truth::BoundaryNull, truth::GeometricProfile,
                                    truth::TwoLevel, truth::PriorDraw, truth::Custom>;

struct Scenario {
  std::string name = "zero";
  TruthGenerator generator = truth::Zero{};
  Hypothesis tag = Hypothesis::neither;

  /// Whether the truth changes from replicate to replicate.
  bool randomized() const { return std::holds_alternative<truth::PriorDraw>(generator); }

  /// Highest level that carries signal (levels above are zero).
  int signal_levels() const {
    return std::visit(
        [](const auto& g) -> int {
          using G = std::decay_t<decltype(g)>;
          if constexpr (std::is_same_v<G, truth::BoundaryNull>) return g.level;
          else if constexpr (std::is_same_v<G, truth::TwoLevel>) return g.J;
          else if constexpr (std::is_same_v<G, truth::PriorDraw>) return g.J;
          else if constexpr (std::is_same_v<G, truth::Custom>) return g.coefficients.j_max();
          else return kMinLevel;
        },
        generator);
  }

  /// Truth on levels 2..j_max for a given replicate.
  CoefficientArray truth_at(int j_max, std::uint64_t seed, std::uint64_t replicate) const {
    return std::visit(
        [&](const auto& g) -> CoefficientArray {
          using G = std::decay_t<decltype(g)>;
          if constexpr (std::is_same_v<G, truth::Zero>) {
            return CoefficientArray::zeros(j_max);
          } else if constexpr (std::is_same_v<G, truth::BoundaryNull>) {
            std::vector<double> norms(static_cast<std::size_t>(j_max - 1), 0.0);
            norms[static_cast<std::size_t>(g.level - kMinLevel)] = g.R * std::exp2(-g.level * g.r);
            return make_level_profile(norms);
          } else if constexpr (std::is_same_v<G, truth::GeometricProfile>) {
            return make_geometric_profile(g.R, g.s, j_max);
          } else if constexpr (std::is_same_v<G, truth::TwoLevel>) {
            return make_two_level_profile(g.a, g.R, g.s, g.J).resized(j_max);
          } else if constexpr (std::is_same_v<G, truth::PriorDraw>) {
            auto values = std::vector<double>(level_offset(j_max + 1), 0.0);
            rng::CounterEngine eng(rng::derive_key(seed, rng::Domain::prior, replicate));
            std::uint64_t bits = 0;
            for (std::size_t k = 0; k < level_size(g.J); ++k) {
              if (k % 64 == 0) bits = eng();
              values[level_offset(g.J) + k] = ((bits >> (k % 64)) & 1U) ? g.v : -g.v;
            }
            return CoefficientArray::from_values(j_max, std::move(values));
          } else {
            return g.coefficients.resized(j_max);
          }
        },
        generator);
  }

  /// Checks generator parameters and that the tag is honest for `cfg`:
  /// H0 truths lie in B_s(R), H1 truths lie outside it.
  void validate(const TestConfig& cfg, int j_max) const {
    cfg.validate();
    std::visit(
        [&](const auto& g) {
          using G = std::decay_t<decltype(g)>;
          if constexpr (std::is_same_v<G, truth::BoundaryNull>) {
            if (g.level < kMinLevel || g.level > j_max) {
              throw ConfigError("boundary_null level outside 2.." + std::to_string(j_max));
            }
            BallSpec{g.r, g.R}.validate();
          } else if constexpr (std::is_same_v<G, truth::GeometricProfile>) {
            BallSpec{g.s, g.R}.validate();
          } else if constexpr (std::is_same_v<G, truth::TwoLevel>) {
            BallSpec{g.s, g.R}.validate();
            if (!(g.a > 1.0)) throw ConfigError("two_level needs a > 1");
            if (g.J < 3 || g.J > j_max) throw ConfigError("two_level needs 3 <= J <= j_max");
          } else if constexpr (std::is_same_v<G, truth::PriorDraw>) {
            if (!(g.v > 0.0) || !std::isfinite(g.v)) throw ConfigError("prior_draw needs v > 0");
            if (g.J < kMinLevel || g.J > j_max) throw ConfigError("prior_draw level outside range");
          }
        },
        generator);

    if (tag == Hypothesis::neither) return;
    // Prior draws share level norms, so replicate 0 speaks for all of them.
    const auto f = truth_at(j_max, 0, 0);
    const BallSpec null_ball{cfg.s, cfg.R};
    const double norm_sq = sobolev_norm_sq(f, cfg.s);
    if (tag == Hypothesis::H0 && norm_sq > cfg.R * cfg.R * (1.0 + 1e-12)) {
      throw ConfigError("scenario '" + name + "' is tagged H0 but ||f||_{B_s} exceeds R");
    }
    if (tag == Hypothesis::H1 && !(distance_to_ball(f, null_ball) > 0.0)) {
      throw ConfigError("scenario '" + name + "' is tagged H1 but lies in B_s(R)");
    }
  }
};

namespace scenarios {

inline Scenario zero() { return {"zero", truth::Zero{}, Hypothesis::H0}; }

/// Single coefficient on the boundary of B_s(R).
inline Scenario boundary_null(const TestConfig& cfg, int level = kMinLevel) {
  return {"boundary_null", truth::BoundaryNull{level, cfg.s, cfg.R}, Hypothesis::H0};
}

inline Scenario two_level(double a, const TestConfig& cfg, int J) {
  return {"two_level", truth::TwoLevel{a, cfg.R, cfg.s, J}, Hypothesis::H1};
}

inline Scenario geometric(const TestConfig& cfg) {
  return {"geometric_profile", truth::GeometricProfile{cfg.R, cfg.s}, Hypothesis::H1};
}

inline Scenario prior_draw(double v, int J) {
  return {"prior_draw", truth::PriorDraw{v, J}, Hypothesis::neither};
}

}  // namespace scenarios

// ---------------------------------------------------------------------------
// Rejection-rate experiments

struct ExperimentSpec {
  Scenario scenario;
  TestConfig config;
  std::size_t replicates = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int extra_levels = 3;  // truth is built on 2..J + extra_levels

  void validate() const {
    config.validate();
    if (replicates < 1) throw ConfigError("replicates must be >= 1");
    if (extra_levels < 0) throw ConfigError("extra_levels must be >= 0");
  }
};

struct LevelTally {
  int j_star = 0;
  std::size_t exceedances = 0;
  double mean_T = 0.0;
  double tau = 0.0;
};

struct ExperimentResult {
  ErrorEstimate estimate;
  int J = 0;
  int truth_levels = 0;
  double tail_bound = 0.0;     // bound on the ignored levels above truth_levels
  double truth_tail_norm = 0.0;  // L2 mass of the truth above J actually present
  std::vector<LevelTally> levels;
};

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const LevelSchedule schedule = build_schedule(spec.config);
  const int J = schedule.J;
  const int truth_levels = std::clamp(std::max(J + spec.extra_levels, spec.scenario.signal_levels()),
                                      kMinLevel, kMaxLevel);
  spec.scenario.validate(spec.config, truth_levels);

  const auto fixed_truth = spec.scenario.truth_at(truth_levels, spec.seed, 0);
  const std::size_t width = static_cast<std::size_t>(J - 1);
  std::vector<double> T(spec.replicates * width);

  parallel_for(spec.replicates, spec.threads, [&](std::size_t rep) {
    const auto truth = spec.scenario.randomized()
                           ? spec.scenario.truth_at(truth_levels, spec.seed, rep)
                           : fixed_truth;
    const auto obs = sample_observation(truth, {spec.config.n, spec.seed, rep}, J);
    const auto level_sq = level_norms_sq(obs);
    for (int j = kMinLevel; j <= J; ++j) {
      T[rep * width + static_cast<std::size_t>(j - kMinLevel)] =
          detail::level_statistics(level_sq, j, schedule).T;
    }
  });

  ExperimentResult out;
  out.J = J;
  out.truth_levels = truth_levels;
  out.tail_bound = tail_bound(truth_levels, spec.config.t, spec.config.R);
  double tail_sq = 0.0;
  for (int j = J + 1; j <= fixed_truth.j_max(); ++j) tail_sq += level_norm_sq(fixed_truth, j);
  out.truth_tail_norm = std::sqrt(tail_sq);

  std::size_t rejections = 0;
  out.levels.resize(width);
  for (std::size_t i = 0; i < width; ++i) {
    out.levels[i].j_star = static_cast<int>(i) + kMinLevel;
    out.levels[i].tau = schedule.levels[i].tau;
  }
  for (std::size_t rep = 0; rep < spec.replicates; ++rep) {
    bool reject = false;
    for (std::size_t i = 0; i < width; ++i) {
      const double t = T[rep * width + i];
      out.levels[i].mean_T += t;
      if (t > out.levels[i].tau) {
        ++out.levels[i].exceedances;
        reject = true;
      }
    }
    if (reject) ++rejections;
  }
  for (auto& lv : out.levels) lv.mean_T /= static_cast<double>(spec.replicates);
  out.estimate = make_error_estimate(rejections, spec.replicates);
  return out;
}

inline ErrorEstimate estimate_rejection_rate(const ExperimentSpec& spec) {
  return run_experiment(spec).estimate;
}

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean and standard deviation of T_{j*} from the chi-square moments of the
/// level norms, with M_hat replaced by the true M_{j*}.
inline Moments analytic_T_moments(const CoefficientArray& truth, int j_star, const LevelSchedule& schedule) {
  const auto& cfg = schedule.config;
  const auto& c = schedule.at(j_star);
  const auto terms = concentration_terms(truth, cfg, j_star);
  auto level_sq = level_norms_sq(truth);
  level_sq.resize(static_cast<std::size_t>(j_star - 1));
  const double penalty = 2.0 / std::sqrt(c.alpha) * std::sqrt(j_star - 1.0) / std::sqrt(cfg.n);
  return {sobolev_norm_sq(level_sq, cfg.s) - penalty * max_level_weight(level_sq, j_star, cfg.s),
          std::sqrt(terms.B + terms.V)};
}

// ---------------------------------------------------------------------------
// Randomized profiles for the structural lemmas

/// A random level-norm profile together with a configuration whose cutoff and
/// separation schedule put rho_J on the same scale as the profile.
struct LemmaCase {
  std::uint64_t index = 0;
  TestConfig config;
  int J = 0;
  std::vector<double> level_sq;  // levels 2..J
  std::vector<double> rho;       // rho_2..rho_J
};

namespace detail {

inline double log_uniform(rng::CounterEngine& eng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(eng));
}

inline double uniform(rng::CounterEngine& eng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return u(eng);
}

}  // namespace detail

/// Draws (s, eta, R, J, rho_J / R) first and solves for n and t so that the
/// cutoff is exactly J; then draws level norms log-uniform in [1e-4 R, 10 R]
/// and, with probability 1/2, rescales them so ||f||_{B_s} straddles R.
inline LemmaCase sample_lemma_case(std::uint64_t seed, std::uint64_t index) {
  rng::CounterEngine eng(rng::derive_key(seed, rng::Domain::profile, index));
  LemmaCase c;
  c.index = index;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 1000) throw std::logic_error("lemma sampler could not place t below s");
    TestConfig cfg;
    cfg.s = detail::uniform(eng, 0.5, 3.0);
    cfg.eta = detail::uniform(eng, 0.05, 0.95);
    cfg.R = detail::log_uniform(eng, 0.1, 10.0);
    std::uniform_int_distribution<int> level(kMinLevel, 12);
    const int J = level(eng);
    const double x = detail::log_uniform(eng, 1e-3, 1.0);
    const double root_n = kRhoScale / std::sqrt(cfg.eta) * std::exp2(J / 4.0) / (x * cfg.R);
    cfg.n = std::round(root_n * root_n);
    const double lg = std::log2(cfg.n);
    const double t_lo = std::max(0.0, (lg / (J + 1) - 0.5) / 2.0);
    const double t_hi = std::min(cfg.s, (lg / J - 0.5) / 2.0);
    if (!(t_hi > t_lo)) continue;
    // Stay off both endpoints: the cutoff flips at t_lo, t < s is strict.
    cfg.t = t_lo + (t_hi - t_lo) * detail::uniform(eng, 0.01, 0.99);
    if (compute_J(cfg.n, cfg.t) != J) continue;
    c.config = cfg;
    c.J = J;
    break;
  }
  const auto schedule = build_schedule(c.config);
  c.rho = schedule.rho_values();

  const double R = c.config.R;
  c.level_sq.resize(static_cast<std::size_t>(c.J - 1));
  for (auto& m : c.level_sq) {
    const double norm = detail::log_uniform(eng, 1e-4 * R, 10.0 * R);
    m = norm * norm;
  }
  if (detail::uniform(eng, 0.0, 1.0) < 0.5) {
    const double target = R * detail::log_uniform(eng, 0.5, 2.0);
    const double scale = target * target / sobolev_norm_sq(c.level_sq, c.config.s);
    for (auto& m : c.level_sq) m *= scale;
  }
  return c;
}

/// Indices j* in 2..J with dist(P_2^{j*-1} f) <= rho_{j*-1} < ... and
/// dist(P_2^{j*} f) > rho_{j*}, from precomputed prefix distances.
inline std::vector<int> admissible_indices(const std::vector<double>& prefix_dist,
                                           const std::vector<double>& rho) {
  std::vector<int> out;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double prev_dist = i == 0 ? 0.0 : prefix_dist[i - 1];
    const double prev_rho = i == 0 ? 0.0 : rho[i - 1];
    if (prev_dist <= prev_rho && prefix_dist[i] > rho[i]) out.push_back(static_cast<int>(i) + kMinLevel);
  }
  return out;
}

/// Right-hand side of the accumulated-norm lower bound:
/// R^2 + rho M / (2 A^2) + 4^{js} rho^2 / (2 A^2).
inline double accumulated_norm_bound(double R, double rho, double M, double s, int j) {
  constexpr double A2 = kLemmaConstantA * kLemmaConstantA;
  return R * R + rho * M / (2.0 * A2) + sobolev_weight(j, s) * rho * rho / (2.0 * A2);
}

namespace detail {

/// Evaluates candidates in index order, in parallel batches, until `wanted`
/// of them are accepted. Returns the accepted results and the attempt count.
template <class Result, class Eval>
std::pair<std::vector<Result>, std::size_t> collect_cases(std::size_t wanted, unsigned threads,
                                                          std::size_t max_attempts, Eval&& eval) {
  std::vector<Result> accepted;
  std::size_t next = 0;
  while (accepted.size() < wanted && next < max_attempts) {
    const std::size_t batch =
        std::min(max_attempts - next, std::max<std::size_t>(256, 2 * (wanted - accepted.size())));
    std::vector<std::optional<Result>> slots(batch);
    parallel_for(batch, threads, [&](std::size_t i) { slots[i] = eval(next + i); });
    for (std::size_t i = 0; i < batch; ++i) {
      if (!slots[i]) continue;
      if (accepted.size() == wanted) {
        return {std::move(accepted), next + i};
      }
      accepted.push_back(std::move(*slots[i]));
    }
    next += batch;
  }
  return {std::move(accepted), next};
}

}  // namespace detail

struct LemmaViolation {
  LemmaCase profile;
  int j_star = 0;
  double lhs = 0.0;  // ||P_2^{j*} f||_{B_s}^2
  double rhs = 0.0;
  std::string reason;
};

struct LemmaReport {
  std::size_t requested = 0;
  std::size_t admissible = 0;      // profiles with at least one admissible j*
  std::size_t attempts = 0;        // profiles drawn
  std::size_t checked_indices = 0;
  double min_log_margin = std::numeric_limits<double>::infinity();  // min ln(lhs / rhs)
  std::vector<LemmaViolation> violations;

  bool passed() const { return violations.empty() && admissible == requested; }
};

/// Draws profiles until `trials` of them admit a transition-type index, and
/// checks the accumulated-norm lower bound at every such index.
inline LemmaReport verify_lemma_jpart2(std::size_t trials, std::uint64_t seed, unsigned threads = 1) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  struct Outcome {
    LemmaCase profile;
    std::size_t indices = 0;
    double min_log_margin = std::numeric_limits<double>::infinity();
    std::vector<LemmaViolation> violations;
  };
  auto eval = [&](std::size_t idx) -> std::optional<Outcome> {
    auto c = sample_lemma_case(seed, idx);
    const BallSpec ball{c.config.s, c.config.R};
    const auto dist = prefix_distances(c.level_sq, ball);
    const auto idxs = admissible_indices(dist, c.rho);
    if (idxs.empty()) return std::nullopt;
    Outcome o;
    o.indices = idxs.size();
    for (int j : idxs) {
      const std::span<const double> prefix(c.level_sq.data(), static_cast<std::size_t>(j - 1));
      const double lhs = sobolev_norm_sq(prefix, c.config.s);
      const double rho = c.rho[static_cast<std::size_t>(j - kMinLevel)];
      const double M = max_level_weight(c.level_sq, j, c.config.s);
      const double rhs = accumulated_norm_bound(c.config.R, rho, M, c.config.s, j);
      o.min_log_margin = std::min(o.min_log_margin, std::log(lhs / rhs));
      if (lhs < rhs * (1.0 - 1e-9)) o.violations.push_back({c, j, lhs, rhs, "lower bound violated"});
    }
    o.profile = std::move(c);
    return o;
  };
  auto [cases, attempts] = detail::collect_cases<Outcome>(trials, threads, 1000 * trials, eval);

  LemmaReport rep;
  rep.requested = trials;
  rep.admissible = cases.size();
  rep.attempts = attempts;
  for (auto& o : cases) {
    rep.checked_indices += o.indices;
    rep.min_log_margin = std::min(rep.min_log_margin, o.min_log_margin);
    for (auto& v : o.violations) rep.violations.push_back(std::move(v));
  }
  return rep;
}

struct TransitionReport {
  std::size_t requested = 0;
  std::size_t separated = 0;  // profiles with dist(P_2^J f) > rho_J
  std::size_t attempts = 0;
  std::vector<std::size_t> index_histogram;  // count of returned j*, slot j - 2
  std::vector<LemmaViolation> failures;

  bool passed() const { return failures.empty() && separated == requested; }
};

/// Draws profiles until `trials` are separated at the cutoff and checks that
/// transition_index succeeds and returns the smallest admissible index.
inline TransitionReport verify_transition(std::size_t trials, std::uint64_t seed, unsigned threads = 1) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  struct Outcome {
    int j_star = 0;
    std::optional<LemmaViolation> failure;
  };
  auto eval = [&](std::size_t idx) -> std::optional<Outcome> {
    auto c = sample_lemma_case(seed ^ 0x7472616e73ULL, idx);
    const BallSpec ball{c.config.s, c.config.R};
    const auto dist = prefix_distances(c.level_sq, ball);
    if (!(dist.back() > c.rho.back())) return std::nullopt;
    const auto idxs = admissible_indices(dist, c.rho);
    Outcome o;
    try {
      o.j_star = transition_index(c.level_sq, ball, c.rho);
      if (idxs.empty() || o.j_star != idxs.front()) {
        o.failure = LemmaViolation{c, o.j_star, 0.0, 0.0, "returned index is not the smallest admissible one"};
      }
    } catch (const Error& e) {
      o.failure = LemmaViolation{c, 0, 0.0, 0.0, std::string("transition_index threw: ") + e.what()};
    }
    return o;
  };
  auto [cases, attempts] = detail::collect_cases<Outcome>(trials, threads, 1000 * trials, eval);

  TransitionReport rep;
  rep.requested = trials;
  rep.separated = cases.size();
  rep.attempts = attempts;
  rep.index_histogram.assign(static_cast<std::size_t>(12 - 1), 0);
  for (auto& o : cases) {
    if (o.failure) {
      rep.failures.push_back(std::move(*o.failure));
    } else {
      ++rep.index_histogram[static_cast<std::size_t>(o.j_star - kMinLevel)];
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Concentration of the accumulated norm

struct ConcentrationRow {
  std::string scenario;
  int j_star = 0;
  double delta = 0.0;
  double radius = 0.0;  // sqrt((B + V) / delta)
  ConcentrationTerms terms;
  std::size_t violations = 0;
  std::size_t replicates = 0;
  double frequency = 0.0;
  double wilson_low = 0.0;
  double wilson_high = 0.0;
  double wilson_sd = 0.0;

  bool within_slack() const { return frequency <= delta + 3.0 * wilson_sd; }
  bool upper_below_delta() const { return wilson_high <= delta; }
};

/// Empirical frequency of |X - A - ||P_2^{j*} f||_{B_s}^2| >= sqrt((B + V) / delta),
/// X = ||P_2^{j*} f_hat||_{B_s}^2, for every j* in 2..J and every delta.
inline std::vector<ConcentrationRow> verify_concentration(const Scenario& scenario,
                                                          const std::vector<double>& deltas,
                                                          std::size_t reps, std::uint64_t seed,
                                                          const TestConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  if (reps < 1) throw ConfigError("replicates must be >= 1");
  if (deltas.empty()) throw ConfigError("delta list is empty");
  for (double d : deltas) {
    if (!(d > 0.0 && d < 1.0)) throw ConfigError("each delta must lie in (0, 1)");
  }
  if (scenario.randomized()) throw ConfigError("concentration suite needs a fixed truth");
  const int J = compute_J(cfg.n, cfg.t);
  const int levels = std::max(J, scenario.signal_levels());
  scenario.validate(cfg, levels);
  const auto truth = scenario.truth_at(levels, seed, 0);
  const auto truth_sq = level_norms_sq(truth);

  const std::size_t width = static_cast<std::size_t>(J - 1);
  std::vector<ConcentrationTerms> terms(width);
  std::vector<double> true_norm(width);
  for (int j = kMinLevel; j <= J; ++j) {
    const auto i = static_cast<std::size_t>(j - kMinLevel);
    terms[i] = concentration_terms(truth, cfg, j);
    true_norm[i] = sobolev_norm_sq(std::span<const double>(truth_sq).first(i + 1), cfg.s);
  }

  std::vector<double> deviation(reps * width);
  parallel_for(reps, threads, [&](std::size_t rep) {
    const auto obs = sample_observation(truth, {cfg.n, seed, rep}, J);
    double acc = 0.0;
    for (int j = kMinLevel; j <= J; ++j) {
      const auto i = static_cast<std::size_t>(j - kMinLevel);
      acc += sobolev_weight(j, cfg.s) * level_norm_sq(obs, j);
      deviation[rep * width + i] = std::abs(acc - terms[i].A - true_norm[i]);
    }
  });

  std::vector<ConcentrationRow> rows;
  for (std::size_t i = 0; i < width; ++i) {
    for (double delta : deltas) {
      ConcentrationRow row;
      row.scenario = scenario.name;
      row.j_star = static_cast<int>(i) + kMinLevel;
      row.delta = delta;
      row.terms = terms[i];
      row.radius = std::sqrt((terms[i].B + terms[i].V) / delta);
      for (std::size_t rep = 0; rep < reps; ++rep) {
        if (deviation[rep * width + i] >= row.radius) ++row.violations;
      }
      row.replicates = reps;
      row.frequency = static_cast<double>(row.violations) / static_cast<double>(reps);
      const Interval iv = wilson_interval(row.violations, reps);
      row.wilson_low = iv.low;
      row.wilson_high = iv.high;
      row.wilson_sd = wilson_sd(row.violations, reps);
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Events of the M estimate

struct MEventRow {
  int j_star = 0;
  double M = 0.0;        // true M_{j*}
  double D = 0.0;        // allowance D_{j*} at delta = beta_{j*}
  std::size_t xi0 = 0;   // count of M <= M_hat + D
  std::size_t xi1 = 0;   // count of M >= M_hat - D
  std::size_t replicates = 0;
  double xi0_bound = 0.0;  // 1 - beta_{j*}
  double xi1_bound = 0.0;  // 1 - sum_{j <= j*} beta_j

  /// Frequencies reach their lower bounds up to 3 Wilson sd.
  bool holds() const {
    const auto r = replicates;
    const double f0 = static_cast<double>(xi0) / static_cast<double>(r);
    const double f1 = static_cast<double>(xi1) / static_cast<double>(r);
    return f0 + 3.0 * wilson_sd(xi0, r) >= xi0_bound && f1 + 3.0 * wilson_sd(xi1, r) >= xi1_bound;
  }
};

/// Empirical frequencies of the two events that bracket M_{j*} by M_hat +- D.
inline std::vector<MEventRow> verify_m_events(const Scenario& scenario, std::size_t reps, std::uint64_t seed,
                                              const TestConfig& cfg, unsigned threads = 1) {
  if (reps < 1) throw ConfigError("replicates must be >= 1");
  if (scenario.randomized()) throw ConfigError("M-event suite needs a fixed truth");
  const auto schedule = build_schedule(cfg);
  const int J = schedule.J;
  const int levels = std::max(J, scenario.signal_levels());
  scenario.validate(cfg, levels);
  const auto truth = scenario.truth_at(levels, seed, 0);
  const auto truth_sq = level_norms_sq(truth);
  const std::size_t width = static_cast<std::size_t>(J - 1);

  std::vector<double> m_hat(reps * width);
  parallel_for(reps, threads, [&](std::size_t rep) {
    const auto obs = sample_observation(truth, {cfg.n, seed, rep}, J);
    const auto m = detail::estimate_M(level_norms_sq(obs), J, cfg);
    // Running maximum of sqrt|Y_j| gives M_hat for every j* at once.
    double best = 0.0;
    for (std::size_t i = 0; i < width; ++i) {
      best = std::max(best, std::sqrt(std::abs(m.Y[i])));
      m_hat[rep * width + i] = best;
    }
  });

  std::vector<MEventRow> rows;
  double beta_sum = 0.0;
  for (std::size_t i = 0; i < width; ++i) {
    const int j = static_cast<int>(i) + kMinLevel;
    const auto& c = schedule.at(j);
    beta_sum += c.beta;
    MEventRow row;
    row.j_star = j;
    row.M = max_level_weight(truth_sq, j, cfg.s);
    row.D = c.D;
    row.replicates = reps;
    row.xi0_bound = 1.0 - c.beta;
    row.xi1_bound = 1.0 - beta_sum;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const double mh = m_hat[rep * width + i];
      if (row.M <= mh + row.D) ++row.xi0;
      if (row.M >= mh - row.D) ++row.xi1;
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Empirical separation rate

/// H1 family used by the rate curve: a single coefficient at level J(n) with
/// amplitude R 2^{-Js} + d, i.e. at L2 distance d from B_s(R).
struct RatePoint {
  double n = 0.0;
  int J = 0;
  double boundary = 0.0;           // R 2^{-Js}
  double distance = 0.0;           // minimal detectable distance d*
  double distance_low = 0.0;       // largest probed d with Wilson high < target
  double distance_high = 0.0;      // smallest probed d with Wilson low > target
  double rate_at_distance = 0.0;   // empirical rejection at the final upper bracket
  bool in_alternative_class = false;  // ||f||_{B_t} <= R at d*
  bool bracketed = false;
  std::vector<std::pair<double, ErrorEstimate>> probes;  // (d, rejection) in bisection order
};

struct RateCurve {
  TestConfig config_template;
  double error_budget = 0.1;
  std::size_t replicates = 0;
  std::uint64_t seed = 0;
  std::vector<RatePoint> points;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_std_error = std::numeric_limits<double>::quiet_NaN();
  double target_slope = 0.0;
  std::size_t fitted_points = 0;
};

/// Least-squares slope of y on x, with its standard error (NaN with < 3 points).
inline std::pair<double, double> fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t m = x.size();
  if (m < 2) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  if (m < 3) return {slope, std::numeric_limits<double>::quiet_NaN()};
  double rss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = y[i] - my - slope * (x[i] - mx);
    rss += r * r;
  }
  return {slope, std::sqrt(rss / static_cast<double>(m - 2) / sxx)};
}

inline RatePoint rate_point(const TestConfig& cfg, double error_budget, std::size_t reps,
                            std::uint64_t seed, unsigned threads, int steps) {
  const LevelSchedule schedule = build_schedule(cfg);
  const int J = schedule.J;
  const double target = 1.0 - error_budget;

  // Common random numbers: one noise draw per replicate, shared by all d.
  const auto zero = CoefficientArray::zeros(J);
  const std::size_t width = static_cast<std::size_t>(J - 1);
  std::vector<double> noise_sq(reps * width);
  std::vector<double> first(reps);
  parallel_for(reps, threads, [&](std::size_t rep) {
    const auto obs = sample_observation(zero, {cfg.n, seed, rep}, J);
    for (int j = kMinLevel; j <= J; ++j) {
      noise_sq[rep * width + static_cast<std::size_t>(j - kMinLevel)] = level_norm_sq(obs, j);
    }
    first[rep] = obs.at(J, 0);
  });

  RatePoint pt;
  pt.n = cfg.n;
  pt.J = J;
  pt.boundary = cfg.R * std::exp2(-J * cfg.s);

  auto evaluate = [&](double d) {
    const double amp = pt.boundary + d;
    std::vector<unsigned char> hit(reps);
    parallel_for(reps, threads, [&](std::size_t rep) {
      std::vector<double> level_sq(noise_sq.begin() + static_cast<std::ptrdiff_t>(rep * width),
                                   noise_sq.begin() + static_cast<std::ptrdiff_t>((rep + 1) * width));
      const double e = first[rep];
      level_sq.back() += (e + amp) * (e + amp) - e * e;
      hit[rep] = rejects(level_sq, schedule) ? 1 : 0;
    });
    std::size_t count = 0;
    for (auto h : hit) count += h;
    const auto est = make_error_estimate(count, reps);
    pt.probes.emplace_back(d, est);
    return est;
  };

  const double scale = std::pow(cfg.n, -cfg.t / (2.0 * cfg.t + 0.5));
  double lo = 1e-3 * scale;
  double hi = 1e3 * scale;
  const auto at_lo = evaluate(lo);
  const auto at_hi = evaluate(hi);
  pt.bracketed = at_lo.rate < target && at_hi.rate >= target;
  ErrorEstimate hi_est = at_hi;
  if (pt.bracketed) {
    for (int it = 0; it < steps; ++it) {
      const double mid = std::sqrt(lo * hi);
      const auto est = evaluate(mid);
      if (est.rate >= target) {
        hi = mid;
        hi_est = est;
      } else {
        lo = mid;
      }
    }
  }
  pt.distance = hi;
  pt.rate_at_distance = hi_est.rate;

  pt.distance_low = 0.0;
  pt.distance_high = std::numeric_limits<double>::infinity();
  for (const auto& [d, est] : pt.probes) {
    if (est.wilson_high < target) pt.distance_low = std::max(pt.distance_low, d);
    if (est.wilson_low > target) pt.distance_high = std::min(pt.distance_high, d);
  }
  const double amp = pt.boundary + pt.distance;
  pt.in_alternative_class = amp * std::exp2(J * cfg.t) <= cfg.R;
  return pt;
}

/// Minimal detectable distance per n for the single-level family, and the
/// least-squares slope of log(d*) against log(n) over the bracketed points.
inline RateCurve rate_curve(const std::vector<double>& n_grid, const TestConfig& cfg_template,
                            double error_budget, std::size_t reps, std::uint64_t seed,
                            unsigned threads = 1, int steps = 20) {
  if (n_grid.size() < 4) throw ConfigError("rate curve needs at least 4 grid points");
  for (std::size_t i = 1; i < n_grid.size(); ++i) {
    if (!(n_grid[i] > n_grid[i - 1])) throw ConfigError("n grid must be strictly increasing");
  }
  if (!(error_budget > 0.0 && error_budget < 1.0)) throw ConfigError("error budget must lie in (0, 1)");
  if (reps < 1) throw ConfigError("replicates must be >= 1");
  if (steps < 1) throw ConfigError("bisection steps must be >= 1");

  RateCurve curve;
  curve.config_template = cfg_template;
  curve.error_budget = error_budget;
  curve.replicates = reps;
  curve.seed = seed;
  curve.target_slope = -cfg_template.t / (2.0 * cfg_template.t + 0.5);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    TestConfig cfg = cfg_template;
    cfg.n = n_grid[i];
    cfg.validate();
    auto pt = rate_point(cfg, error_budget, reps, rng::derive_key(seed, rng::Domain::oracle, i), threads,
                         steps);
    if (pt.bracketed) {
      x.push_back(std::log(pt.n));
      y.push_back(std::log(pt.distance));
    }
    curve.points.push_back(std::move(pt));
  }
  curve.fitted_points = x.size();
  std::tie(curve.slope, curve.slope_std_error) = fit_slope(x, y);
  return curve;
}

}  // namespace sobotest
