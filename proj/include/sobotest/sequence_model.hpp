#pragma once

// Wavelet sequence model: coefficient arrays indexed by resolution level
// j >= 2 (2^j coefficients per level), their level-wise and Sobolev-type
// norms, and reproducible Gaussian observations a_hat ~ N(a, 1/n).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sobotest/errors.hpp"

namespace sobotest {

inline constexpr int kMinLevel = 2;
// 2^27 doubles per array is already 1 GiB; anything above is a caller bug.
inline constexpr int kMaxLevel = 26;

/// Number of coefficients stored at level j.
inline constexpr std::size_t level_size(int j) { return std::size_t{1} << j; }

/// Offset of level j inside the flat storage: sum_{i=2}^{j-1} 2^i = 2^j - 4.
inline constexpr std::size_t level_offset(int j) { return level_size(j) - 4; }

/// 4^{j r}, evaluated as an exact power of two whenever 2 j r is an integer.
inline double sobolev_weight(int j, double r) { return std::exp2(2.0 * j * r); }

/// Immutable array of wavelet coefficients a_{j,k} for levels 2..j_max.
class CoefficientArray {
 public:
  /// All-zero array on levels 2..j_max.
  static CoefficientArray zeros(int j_max) {
    check_j_max(j_max);
    return CoefficientArray(j_max, std::vector<double>(level_offset(j_max + 1), 0.0));
  }

  /// Wraps flat storage (level 2 first). Size must be 2^{j_max+1} - 4.
  static CoefficientArray from_values(int j_max, std::vector<double> values) {
    check_j_max(j_max);
    if (values.size() != level_offset(j_max + 1)) {
      throw ConfigError("coefficient storage has " + std::to_string(values.size()) +
                        " entries, expected " + std::to_string(level_offset(j_max + 1)));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw ConfigError("coefficient array contains a non-finite entry");
    }
    return CoefficientArray(j_max, std::move(values));
  }

  /// Builds from per-level vectors; levels[0] holds level 2.
  static CoefficientArray from_levels(const std::vector<std::vector<double>>& levels) {
    if (levels.empty()) throw ConfigError("coefficient array needs at least level 2");
    const int j_max = kMinLevel + static_cast<int>(levels.size()) - 1;
    check_j_max(j_max);
    std::vector<double> flat;
    flat.reserve(level_offset(j_max + 1));
    for (int j = kMinLevel; j <= j_max; ++j) {
      const auto& lv = levels[static_cast<std::size_t>(j - kMinLevel)];
      if (lv.size() != level_size(j)) {
        throw ConfigError("level " + std::to_string(j) + " has " + std::to_string(lv.size()) +
                          " coefficients, expected " + std::to_string(level_size(j)));
      }
      flat.insert(flat.end(), lv.begin(), lv.end());
    }
    return from_values(j_max, std::move(flat));
  }

  int j_max() const noexcept { return j_max_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }

  std::span<const double> level(int j) const {
    check_level(j);
    return std::span<const double>(values_).subspan(level_offset(j), level_size(j));
  }

  /// Coefficient a_{j,k} with 0-based k.
  double at(int j, std::size_t k) const {
    check_level(j);
    if (k >= level_size(j)) throw ConfigError("coefficient index out of range");
    return values_[level_offset(j) + k];
  }

  /// Restriction to levels 2..j (P_2^j in operator notation).
  CoefficientArray truncated(int j) const {
    check_level(j);
    return CoefficientArray(
        j, std::vector<double>(values_.begin(),
                               values_.begin() + static_cast<std::ptrdiff_t>(level_offset(j + 1))));
  }

  /// Zero-padded (or truncated) copy on levels 2..j.
  CoefficientArray resized(int j) const {
    if (j <= j_max_) return truncated(j);
    check_j_max(j);
    std::vector<double> v(level_offset(j + 1), 0.0);
    std::copy(values_.begin(), values_.end(), v.begin());
    return CoefficientArray(j, std::move(v));
  }

  void check_level(int j) const {
    if (j < kMinLevel || j > j_max_) {
      throw ConfigError("level " + std::to_string(j) + " outside stored range 2.." +
                        std::to_string(j_max_));
    }
  }

  friend bool operator==(const CoefficientArray&, const CoefficientArray&) = default;

 private:
  CoefficientArray(int j_max, std::vector<double> values)
      : j_max_(j_max), values_(std::move(values)) {}

  static void check_j_max(int j_max) {
    if (j_max < kMinLevel || j_max > kMaxLevel) {
      throw ConfigError("j_max must lie in 2.." + std::to_string(kMaxLevel) + ", got " +
                        std::to_string(j_max));
    }
  }

  int j_max_;
  std::vector<double> values_;
};

/// Sum_k a_{j,k}^2.
inline double level_norm_sq(const CoefficientArray& c, int j) {
  double acc = 0.0;
  for (double a : c.level(j)) acc += a * a;
  return acc;
}

/// Squared L2 norms of all stored levels; entry i belongs to level i + 2.
inline std::vector<double> level_norms_sq(const CoefficientArray& c) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(c.j_max() - 1));
  for (int j = kMinLevel; j <= c.j_max(); ++j) out.push_back(level_norm_sq(c, j));
  return out;
}

/// sum_j 4^{jr} * level_sq[j], with level_sq indexed from level 2.
inline double sobolev_norm_sq(std::span<const double> level_sq, double r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < level_sq.size(); ++i) {
    acc += sobolev_weight(static_cast<int>(i) + kMinLevel, r) * level_sq[i];
  }
  return acc;
}

inline double sobolev_norm_sq(const CoefficientArray& c, double r) {
  if (!(r >= 0.0)) throw ConfigError("regularity must be nonnegative");
  return sobolev_norm_sq(level_norms_sq(c), r);
}

inline double sup_sobolev_norm_sq(std::span<const double> level_sq, double r) {
  double best = 0.0;
  for (std::size_t i = 0; i < level_sq.size(); ++i) {
    best = std::max(best, sobolev_weight(static_cast<int>(i) + kMinLevel, r) * level_sq[i]);
  }
  return best;
}

inline double sup_sobolev_norm_sq(const CoefficientArray& c, double r) {
  if (!(r >= 0.0)) throw ConfigError("regularity must be nonnegative");
  return sup_sobolev_norm_sq(level_norms_sq(c), r);
}

/// Noise scale and replicate identity of one observation.
struct ObservationConfig {
  double n = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  void validate() const {
    if (!(n >= 1.0) || !std::isfinite(n)) throw ConfigError("n must be a finite number >= 1");
  }
};

namespace rng {

/// SplitMix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Domain tags keep independent uses of the same (seed, stream) apart.
enum class Domain : std::uint64_t {
  observation = 0x6f6273,
  prior = 0x707269,
  profile = 0x70726f,
  oracle = 0x6f7263,
};

inline constexpr std::uint64_t derive_key(std::uint64_t seed, Domain domain, std::uint64_t stream,
                                          std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ static_cast<std::uint64_t>(domain));
  h = mix64(h ^ stream);
  h = mix64(h ^ a);
  return mix64(h ^ b);
}

/// Counter-based UniformRandomBitGenerator: output i is mix64(key + i * golden).
/// Engines with distinct keys are independent streams; state is just a counter.
class CounterEngine {
 public:
  using result_type = std::uint64_t;

  explicit constexpr CounterEngine(std::uint64_t key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    return mix64(key_ ^ (++counter_ * 0xd1b54a32d192ed03ULL));
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Standard normal draw determined entirely by `key`.
inline double keyed_normal(std::uint64_t key) {
  CounterEngine eng(key);
  std::normal_distribution<double> gauss(0.0, 1.0);
  return gauss(eng);
}

}  // namespace rng

/// Draws a_hat_{j,k} = a_{j,k} + N(0, 1/n) for levels 2..max_level (default:
/// truth.j_max()). The noise on (j, k) depends only on (seed, stream_id, j, k),
/// so sampling fewer levels reproduces a prefix of the full draw.
inline CoefficientArray sample_observation(const CoefficientArray& truth, const ObservationConfig& obs,
                                           int max_level = 0) {
  obs.validate();
  const int top = max_level == 0 ? truth.j_max() : max_level;
  if (top < kMinLevel || top > kMaxLevel) throw ConfigError("invalid observation level range");
  const double sd = 1.0 / std::sqrt(obs.n);
  std::vector<double> values(level_offset(top + 1), 0.0);
  for (int j = kMinLevel; j <= top; ++j) {
    const std::size_t off = level_offset(j);
    for (std::size_t k = 0; k < level_size(j); ++k) {
      const double mean = j <= truth.j_max() ? truth.values()[off + k] : 0.0;
      const auto key = rng::derive_key(obs.seed, rng::Domain::observation, obs.stream_id,
                                       static_cast<std::uint64_t>(j), k);
      values[off + k] = mean + sd * rng::keyed_normal(key);
    }
  }
  return CoefficientArray::from_values(top, std::move(values));
}

/// Analytic bound on sum_{j>J_max} ||P_j f||_{L2} for f in the t-ball of radius R.
inline double tail_bound(int j_max, double t, double R) {
  const double q = std::exp2(-t);
  return std::exp2(-t * j_max) * q * R / (1.0 - q);
}

}  // namespace sobotest
