#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sobotest/mc_harness.hpp"
#include "sobotest/regularity_test.hpp"

using namespace sobotest;

namespace {

const TestConfig kBase{4096.0, 2.0, 1.0, 1.0, 0.2};

}  // namespace

TEST(Cutoff, Examples) {
  EXPECT_EQ(compute_J(1024, 0.75), 5);
  EXPECT_EQ(compute_J(4096, 1.0), 4);
  EXPECT_EQ(compute_J(1048576, 1.0), 8);
  EXPECT_THROW(compute_J(0.5, 1.0), ConfigError);
  EXPECT_THROW(compute_J(100, 0.0), ConfigError);
}

TEST(Cutoff, SmallestAdmissibleSampleSize) {
  // J >= 2 needs log2 n >= 2 (2t + 1/2); scan for the first admissible n.
  for (double t : {0.75, 1.0, 1.25}) {
    const double exact = std::exp2(2.0 * (2.0 * t + 0.5));
    double first = 0.0;
    for (double n = 1.0; n < 1e4; n += 1.0) {
      try {
        if (compute_J(n, t) == 2) {
          first = n;
          break;
        }
      } catch (const ConfigError&) {
      }
    }
    EXPECT_EQ(first, std::ceil(exact)) << "t = " << t;
  }
}

TEST(Cutoff, PowerOfTwoSandwich) {
  for (double t : {0.3, 0.5, 1.0, 2.0}) {
    for (double n : {1e3, 4096.0, 1e5, 3.3e6, 1e9}) {
      int J = 0;
      try {
        J = compute_J(n, t);
      } catch (const ConfigError&) {
        continue;
      }
      const double upper = std::pow(n, 1.0 / (2.0 * t + 0.5));
      EXPECT_LE(std::exp2(J), upper * (1 + 1e-12));
      EXPECT_GE(std::exp2(J), 0.5 * upper * (1 - 1e-12));
    }
  }
}

TEST(Schedule, FrozenValuesAtBaseConfig) {
  // 40-digit reference evaluation of the defining formulas.
  struct Row { double alpha, beta, rho, A, C, D, tau; };
  const Row expected[] = {
      {0.0049052163934375956, 0.014644660940672624, 76.396081795186323, 0.25, 11.686254425388992,
       85.445487071189488, 42.694547818851992},
      {0.0056346140020462549, 0.010355339059327376, 84.766760145536793, 8.25, 13.897376910404625,
       1659.1005211001307, 1053.1603118009575},
      {0.006472471835193793, 0.0073223304703363119, 94.054609303584904, 264.25, 16.526859501727713,
       32259.23268490666, 23295.508331668302},
  };
  const auto sched = build_schedule(kBase);
  ASSERT_EQ(sched.J, 4);
  ASSERT_EQ(sched.levels.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const auto& c = sched.levels[static_cast<std::size_t>(i)];
    const auto& e = expected[i];
    EXPECT_EQ(c.j, i + 2);
    EXPECT_NEAR(c.alpha / e.alpha, 1.0, 1e-14);
    EXPECT_NEAR(c.beta / e.beta, 1.0, 1e-14);
    EXPECT_NEAR(c.rho / e.rho, 1.0, 1e-14);
    EXPECT_NEAR(c.A / e.A, 1.0, 1e-14);
    EXPECT_NEAR(c.C_beta / e.C, 1.0, 1e-14);
    EXPECT_NEAR(c.D / e.D, 1.0, 1e-14);
    EXPECT_NEAR(c.tau / e.tau, 1.0, 1e-14);
  }
}

TEST(Schedule, BudgetSumsAndMonotonicity) {
  for (double eta : {0.05, 0.2, 0.5}) {
    for (int J = 2; J <= 12; ++J) {
      // n chosen so the cutoff is exactly J at t = 1.
      const TestConfig cfg{std::exp2(2.5 * J + 1.0), 2.0, 1.0, 1.0, eta};
      const auto sched = build_schedule(cfg);
      ASSERT_EQ(sched.J, J);
      double sa = 0.0, sb = 0.0;
      for (const auto& c : sched.levels) {
        sa += c.alpha;
        sb += c.beta;
      }
      EXPECT_LE(sa, eta / 4.0);
      EXPECT_LE(sb, eta / 4.0);
      for (std::size_t i = 1; i < sched.levels.size(); ++i) {
        EXPECT_LT(sched.levels[i].beta, sched.levels[i - 1].beta);
      }
      EXPECT_NEAR(sched.at(J).alpha, eta * (1 - std::exp2(-0.2)) / 4.0, 1e-15);
      EXPECT_NEAR(sched.at(J).rho, 1346.0 / std::sqrt(eta) * std::exp2(J / 4.0) / std::sqrt(cfg.n), 1e-12);
    }
  }
}

TEST(Schedule, BiasSingleTerm) {
  // s = 0 itself is outside the config domain (s > t > 0); as s -> 0 the
  // single-term bias n A_2 tends to (2 4^0)^2 = 4.
  const auto truth = CoefficientArray::zeros(2);
  const TestConfig tiny{1e6, 1e-12, 1e-13, 1.0, 0.5};
  EXPECT_NEAR(concentration_terms(truth, tiny, 2).A * tiny.n, 4.0, 1e-9);
}

TEST(Schedule, OverflowGuard) {
  EXPECT_THROW(build_schedule({1e30, 40.0, 0.2, 1.0, 0.2}), ConfigError);
}

TEST(Schedule, ConfigValidation) {
  EXPECT_THROW(build_schedule({4096, 1.0, 1.0, 1.0, 0.2}), ConfigError);  // s == t
  EXPECT_THROW(build_schedule({4096, 2.0, 1.0, 0.0, 0.2}), ConfigError);
  EXPECT_THROW(build_schedule({4096, 2.0, 1.0, 1.0, 1.0}), ConfigError);
  EXPECT_THROW(build_schedule({10, 2.0, 1.0, 1.0, 0.2}), ConfigError);
}

TEST(Diagnostics, ShapeAndScaleInvariance) {
  const auto diag = check_guarantee_conditions(kBase);
  ASSERT_EQ(diag.size(), 3u * 3u);
  for (std::size_t i = 0; i < diag.size(); ++i) {
    EXPECT_EQ(diag[i].j_star, static_cast<int>(i / 3) + 2);
    EXPECT_EQ(diag[i].condition, static_cast<int>(i % 3) + 1);
    EXPECT_EQ(diag[i].holds, diag[i].log_margin >= 0.0);
  }
  // Condition (iii) does not depend on s.
  TestConfig other = kBase;
  other.s = 3.5;
  const auto diag2 = check_guarantee_conditions(other);
  for (std::size_t i = 2; i < diag.size(); i += 3) {
    EXPECT_NEAR(diag[i].log_margin, diag2[i].log_margin, 1e-12);
  }
}

TEST(Diagnostics, MarginsMatchDirectEvaluation) {
  const auto sched = build_schedule(kBase);
  const double A2 = 121.0;
  for (const auto& g : sched.diagnostics) {
    const auto& c = sched.at(g.j_star);
    const double pen = 4.0 / std::sqrt(c.alpha) * std::sqrt(g.j_star - 1.0) / std::sqrt(kBase.n);
    const double w = std::pow(4.0, g.j_star * kBase.s);
    double lhs = 0.0, rhs = 0.0;
    if (g.condition == 1) {
      lhs = c.rho / (2 * A2);
      rhs = pen;
    } else if (g.condition == 2) {
      lhs = w * c.rho * c.rho / (4 * A2);
      rhs = pen * c.D;
    } else {
      lhs = w * c.rho * c.rho / (4 * A2);
      rhs = 4.0 / std::sqrt(c.alpha) * w * std::exp2(g.j_star / 2.0) / kBase.n;
    }
    EXPECT_NEAR(g.log_margin, std::log(lhs / rhs), 1e-10);
  }
}

TEST(Concentration, TermsByHand) {
  const auto zero = CoefficientArray::zeros(4);
  const auto z = concentration_terms(zero, kBase, 3);
  EXPECT_EQ(z.V, 0.0);
  EXPECT_NEAR(z.A, (std::pow(32.0, 2) + std::pow(32.0, 3)) / 4096.0, 1e-12);
  EXPECT_NEAR(z.B, 2.0 / (4096.0 * 4096.0) * (std::pow(512.0, 2) + std::pow(512.0, 3)), 1e-12);
  EXPECT_LE(z.B, 4.0 / (4096.0 * 4096.0) * std::pow(512.0, 3));
  const auto f = CoefficientArray::from_levels({{0.1, 0, 0, 0}});
  EXPECT_NEAR(concentration_terms(f, kBase, 2).V, 4.0 / 4096.0 * std::pow(4.0, 8) * 0.01, 1e-12);
}

TEST(Concentration, MonteCarloMoments) {
  const TestConfig cfg{400.0, 1.0, 0.5, 1.0, 0.2};
  const auto truth = CoefficientArray::from_levels({{0.2, 0.1, 0, 0}, std::vector<double>(8, 0.05)});
  const auto terms = concentration_terms(truth, cfg, 3);
  const double norm = sobolev_norm_sq(truth, cfg.s);
  const int reps = 100000;
  double mean = 0.0, m2 = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    const auto obs = sample_observation(truth, {cfg.n, 99, static_cast<std::uint64_t>(rep)});
    const double x = sobolev_norm_sq(obs, cfg.s);
    mean += x;
    m2 += x * x;
  }
  mean /= reps;
  const double var = m2 / reps - mean * mean;
  const double sd = std::sqrt(terms.B + terms.V);
  EXPECT_NEAR(mean, terms.A + norm, 5.0 * sd / std::sqrt(reps));
  EXPECT_NEAR(var / (terms.B + terms.V), 1.0, 0.03);
}

TEST(EstimateM, ZeroObservation) {
  const auto sched = build_schedule(kBase);
  const auto m = estimate_M(CoefficientArray::zeros(4), 3, sched);
  ASSERT_EQ(m.Y.size(), 2u);
  EXPECT_DOUBLE_EQ(m.Y[0], -64.0);
  EXPECT_DOUBLE_EQ(m.Y[1], -32768.0);
  EXPECT_DOUBLE_EQ(m.M_hat, std::sqrt(32768.0));
}

TEST(EstimateM, NoiselessLimit) {
  const auto truth = CoefficientArray::from_levels({{0.1, 0, 0, 0}, {0.003, 0, 0, 0, 0, 0, 0, 0}});
  TestConfig cfg = kBase;
  cfg.n = 1e30;
  const auto sched = build_schedule(cfg);
  const auto m = estimate_M(truth, 3, sched);
  EXPECT_NEAR(m.M_hat, max_level_weight(level_norms_sq(truth), 3, cfg.s), 1e-9);
  EXPECT_NEAR(m.M_hat, std::max(256.0 * 0.1, 4096.0 * 0.003), 1e-9);
}

TEST(EstimateM, EventFrequencies) {
  const auto rows = verify_m_events(scenarios::two_level(2.0, kBase, 4), 10000, 5, kBase);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_TRUE(r.holds()) << "j* = " << r.j_star;
}

TEST(Statistic, ZeroObservationNeverExceeds) {
  const auto sched = build_schedule(kBase);
  const auto zero = CoefficientArray::zeros(4);
  for (int j = 2; j <= 4; ++j) {
    const auto st = test_statistic(zero, j, sched);
    EXPECT_LT(st.T, kBase.R * kBase.R);
    EXPECT_FALSE(st.exceeded);
    EXPECT_EQ(st.exceeded, st.T > st.tau);
  }
  // Scaling any observation by 0 reproduces the zero case exactly.
  const auto obs = sample_observation(zero, {kBase.n, 1, 0});
  std::vector<double> scaled(obs.values().begin(), obs.values().end());
  for (auto& x : scaled) x *= 0.0;
  EXPECT_EQ(test_statistic(CoefficientArray::from_values(4, scaled), 3, sched).T,
            test_statistic(zero, 3, sched).T);
}

TEST(Statistic, FormulaByHand) {
  const auto sched = build_schedule(kBase);
  const auto obs = CoefficientArray::from_levels({{0.5, 0, 0, 0}, std::vector<double>(8, 0.01)});
  const auto st = test_statistic(obs, 3, sched);
  const double sob = 256.0 * 0.25 + 4096.0 * 8 * 1e-4;
  const double y2 = std::pow(16.0, 4) * (0.25 - 4 / 4096.0);
  const double y3 = std::pow(16.0, 6) * (8e-4 - 8 / 4096.0);
  const double M = std::sqrt(std::max(std::abs(y2), std::abs(y3)));
  const auto& c = sched.at(3);
  EXPECT_NEAR(st.sobolev_sq, sob, 1e-12);
  EXPECT_NEAR(st.M_hat, M, 1e-9);
  EXPECT_NEAR(st.T, sob - c.A - 2.0 / std::sqrt(c.alpha) * std::sqrt(2.0) / 64.0 * M, 1e-8);
}

TEST(RunTest, VerdictAndTruncation) {
  const auto sched = build_schedule(kBase);
  EXPECT_THROW(run_test(CoefficientArray::zeros(3), sched), ConfigError);
  const auto r = run_test(CoefficientArray::zeros(6), kBase);
  EXPECT_EQ(r.levels.size(), 3u);
  EXPECT_FALSE(r.reject);
  EXPECT_FALSE(r.first_exceeding_level().has_value());
  EXPECT_EQ(r.diagnostics.size(), 9u);

  std::vector<double> norms{20.0, 0.0, 0.0};
  const auto loud = run_test(make_level_profile(norms), kBase);
  EXPECT_TRUE(loud.reject);
  EXPECT_EQ(loud.first_exceeding_level(), 2);
  bool any = false;
  for (const auto& lv : loud.levels) any = any || lv.exceeded;
  EXPECT_EQ(any, loud.reject);
  // Deterministic in its inputs.
  EXPECT_EQ(run_test(make_level_profile(norms), kBase).levels.back().T, loud.levels.back().T);
}

TEST(RunTest, FastVerdictAgrees) {
  const auto sched = build_schedule(kBase);
  for (std::uint64_t rep = 0; rep < 200; ++rep) {
    std::vector<double> norms{rep * 0.1, 0.0, 0.01};
    const auto obs = sample_observation(make_level_profile(norms), {kBase.n, 3, rep});
    EXPECT_EQ(rejects(level_norms_sq(obs), sched), run_test(obs, sched).reject);
  }
}

TEST(RunTest, TypeOneRateAtZeroAndBoundary) {
  for (const auto& sc : {scenarios::zero(), scenarios::boundary_null(kBase, 2)}) {
    const auto est = estimate_rejection_rate({sc, kBase, 2000, 21, 1});
    EXPECT_LE(est.rate, 0.10 + 3.0 * wilson_sd(est.rejections, est.replicates)) << sc.name;
  }
}

TEST(RunTest, PowerIncreasesWithAmplitude) {
  double prev = -1.0;
  std::size_t prev_count = 0;
  for (double a : {4.0, 8.0, 10.0, 12.0, 14.0, 20.0}) {
    const auto est = estimate_rejection_rate({scenarios::two_level(a, kBase, 4), kBase, 1000, 4, 1});
    if (prev >= 0.0) {
      const double slack = 2.0 * std::max(wilson_sd(est.rejections, 1000), wilson_sd(prev_count, 1000));
      EXPECT_GE(est.rate, prev - slack) << "a = " << a;
    }
    prev = est.rate;
    prev_count = est.rejections;
  }
  EXPECT_GT(prev, 0.99);
}
