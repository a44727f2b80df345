#pragma once

// Command-line front end. dispatch() never exits the process: it returns
// 0 on success, 1 on validation errors and 2 when a verification suite fails,
// and reports errors as a single "error=<kind> message=<text>" line.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sobotest/sobotest.hpp"

namespace sobotest::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitSuiteFailure = 2;

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

inline CoefficientArray read_coefficients(const std::string& path) {
  return coefficients_from_json(parse_json(read_file(path)));
}

inline std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

/// Flags shared by every command that needs a TestConfig.
struct ConfigFlags {
  std::optional<double> n, s, t, R, eta;
  std::string config_file;

  void attach(CLI::App* app, bool n_optional = false) {
    app->add_option("--n", n, n_optional ? "sample size (default: derived)" : "sample size");
    app->add_option("--s", s, "null regularity");
    app->add_option("--t", t, "alternative regularity");
    app->add_option("--R", R, "ball radius");
    app->add_option("--eta", eta, "total error budget");
    app->add_option("--config", config_file, "flat JSON config {n, s, t, R, eta}");
  }

  /// Builds the config; flags override values from --config.
  TestConfig resolve(std::optional<double> n_fallback = std::nullopt) const {
    TestConfig c;
    bool have_n = false, have_s = false, have_t = false, have_R = false, have_eta = false;
    if (!config_file.empty()) {
      const auto doc = parse_json(read_file(config_file));
      Json full = doc;
      if (!full.contains("n") && n_fallback) full["n"] = *n_fallback;
      c = config_from_json(full);
      have_n = have_s = have_t = have_R = have_eta = true;
    }
    auto take = [](const std::optional<double>& v, double& slot, bool& have) {
      if (v) {
        slot = *v;
        have = true;
      }
    };
    take(n, c.n, have_n);
    take(s, c.s, have_s);
    take(t, c.t, have_t);
    take(R, c.R, have_R);
    take(eta, c.eta, have_eta);
    if (!have_n && n_fallback) {
      c.n = *n_fallback;
      have_n = true;
    }
    std::string missing;
    if (!have_n) missing += " --n";
    if (!have_s) missing += " --s";
    if (!have_t) missing += " --t";
    if (!have_R) missing += " --R";
    if (!have_eta) missing += " --eta";
    if (!missing.empty()) throw ConfigError("missing configuration flags:" + missing);
    c.validate();
    return c;
  }
};

inline unsigned resolve_threads(unsigned flag) { return flag > 0 ? flag : threads_from_env(1); }

inline void emit(std::ostream& out, const std::string& output_path, const std::string& text) {
  if (output_path.empty()) {
    out << text;
  } else {
    write_file(output_path, text);
  }
}

}  // namespace detail

/// Parses argv (argv[0] is the program name) and runs one subcommand.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Minimax L2-separation test of Sobolev regularity in the Gaussian sequence model",
               "sobotest"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string output;
  bool no_meta = false;
  detail::ConfigFlags cfg_flags;

  auto add_common = [&](CLI::App* sub, bool stochastic) {
    auto* opt = sub->add_option("--seed", seed, stochastic ? "RNG seed (required)" : "RNG seed (unused)");
    if (stochastic) opt->required();
    sub->add_option("--output,-o", output, "write the primary output here instead of stdout");
  };

  // norms
  auto* norms = app.add_subcommand("norms", "level and Sobolev norms of a coefficient file");
  std::string input;
  std::vector<double> regularities{1.0, 2.0};
  norms->add_option("--input,-i", input, "coefficient JSON file")->required();
  norms->add_option("--r", regularities, "regularities for the Sobolev norms");
  add_common(norms, false);

  // project
  auto* project = app.add_subcommand("project", "Euclidean projection onto B_s(R)");
  double proj_s = 0.0, proj_R = 0.0, proj_tol = kDefaultProjectionTol;
  std::string projected_out;
  project->add_option("--input,-i", input, "coefficient JSON file")->required();
  project->add_option("--s", proj_s, "ball regularity")->required();
  project->add_option("--R", proj_R, "ball radius")->required();
  project->add_option("--tol", proj_tol, "relative KKT tolerance");
  project->add_option("--projected", projected_out, "write the projected coefficients here");
  add_common(project, false);

  // schedule
  auto* schedule = app.add_subcommand("schedule", "per-level constants and guarantee diagnostics");
  cfg_flags.attach(schedule);
  add_common(schedule, false);

  // run-test
  auto* run_test_cmd = app.add_subcommand("run-test", "run the test on an observation file");
  bool csv_row = false;
  run_test_cmd->add_option("--input,-i", input, "observation JSON file")->required();
  run_test_cmd->add_flag("--csv", csv_row, "print the flat CSV row instead of JSON");
  cfg_flags.attach(run_test_cmd);
  add_common(run_test_cmd, false);

  // mc
  auto* mc = app.add_subcommand("mc", "Monte-Carlo rejection rate of one scenario");
  std::string scenario_name;
  std::size_t reps = 1000;
  int level = kMinLevel;
  double amp_a = 2.0;
  std::optional<int> scen_J;
  std::optional<double> prior_v;
  std::string truth_file, csv_path;
  mc->add_option("--scenario", scenario_name, "zero | boundary_null | geometric | two_level | prior_draw | custom")
      ->required()
      ->check(CLI::IsMember({"zero", "boundary_null", "geometric", "two_level", "prior_draw", "custom"}));
  mc->add_option("--reps", reps, "replicates")->required();
  mc->add_option("--level", level, "boundary_null level");
  mc->add_option("--a", amp_a, "two_level amplitude ratio (> 1)");
  mc->add_option("--J", scen_J, "two_level / prior_draw level (default: cutoff J)");
  mc->add_option("--v", prior_v, "prior_draw amplitude (default: lower-bound amplitude)");
  mc->add_option("--truth", truth_file, "custom truth coefficient file");
  mc->add_option("--csv", csv_path, "per-level CSV output file");
  mc->add_option("--threads", threads, "worker threads (default: SOBOTEST_THREADS or 1)");
  mc->add_flag("--no-meta", no_meta, "omit the timestamp from CSV headers");
  cfg_flags.attach(mc);
  add_common(mc, true);

  // verify
  auto* verify = app.add_subcommand("verify", "randomized verification suites");
  std::string lemma;
  std::size_t trials = 10000;
  std::vector<double> deltas{0.05, 0.1};
  verify->add_option("--lemma", lemma, "jpart2 | concentration | transition")
      ->required()
      ->check(CLI::IsMember({"jpart2", "concentration", "transition"}));
  verify->add_option("--trials", trials, "profiles (jpart2, transition)");
  verify->add_option("--reps", reps, "replicates (concentration)");
  verify->add_option("--scenario", scenario_name, "truth for concentration")
      ->check(CLI::IsMember({"zero", "boundary_null", "geometric", "two_level", "custom"}));
  verify->add_option("--level", level, "boundary_null level");
  verify->add_option("--a", amp_a, "two_level amplitude ratio");
  verify->add_option("--J", scen_J, "two_level level");
  verify->add_option("--truth", truth_file, "custom truth coefficient file");
  verify->add_option("--delta", deltas, "Chebyshev levels in (0, 1)");
  verify->add_option("--csv", csv_path, "table CSV output file (concentration)");
  verify->add_option("--threads", threads, "worker threads (default: SOBOTEST_THREADS or 1)");
  verify->add_flag("--no-meta", no_meta, "omit the timestamp from CSV headers");
  cfg_flags.attach(verify);
  add_common(verify, true);

  // lower-bound
  auto* lower = app.add_subcommand("lower-bound", "prior construction and chi^2 check");
  cfg_flags.attach(lower, true);
  add_common(lower, false);

  // rate-curve
  auto* rate = app.add_subcommand("rate-curve", "empirical minimal detectable distance versus n");
  std::vector<double> n_grid{4096, 16384, 65536, 262144, 1048576};
  double budget = 0.1;
  int steps = 20;
  rate->add_option("--n-grid", n_grid, "increasing sample sizes (>= 4)");
  rate->add_option("--budget", budget, "error budget; the target rejection is 1 - budget");
  rate->add_option("--reps", reps, "replicates per bisection step");
  rate->add_option("--steps", steps, "bisection steps per point");
  rate->add_option("--csv", csv_path, "per-point CSV output file");
  rate->add_option("--threads", threads, "worker threads (default: SOBOTEST_THREADS or 1)");
  rate->add_flag("--no-meta", no_meta, "omit the timestamp from CSV headers");
  cfg_flags.attach(rate, true);
  add_common(rate, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error=usage message=" << detail::one_line(e.what()) << "\n";
    return kExitValidation;
  }

  auto make_scenario = [&](const TestConfig& cfg) -> Scenario {
    const int J = compute_J(cfg.n, cfg.t);
    if (scenario_name == "zero") return scenarios::zero();
    if (scenario_name == "boundary_null") return scenarios::boundary_null(cfg, level);
    if (scenario_name == "geometric") return scenarios::geometric(cfg);
    if (scenario_name == "two_level") return scenarios::two_level(amp_a, cfg, scen_J.value_or(J));
    if (scenario_name == "prior_draw") {
      const double v = prior_v ? *prior_v : prior_amplitude(cfg, compute_constants(cfg).chosen.a_eta);
      return scenarios::prior_draw(v, scen_J.value_or(J));
    }
    if (truth_file.empty()) throw ConfigError("scenario 'custom' needs --truth");
    return {"custom", truth::Custom{detail::read_coefficients(truth_file)}, Hypothesis::neither};
  };

  try {
    if (*norms) {
      const auto c = detail::read_coefficients(input);
      const auto lsq = level_norms_sq(c);
      Json levels = Json::array();
      double l2 = 0.0;
      for (std::size_t i = 0; i < lsq.size(); ++i) {
        levels.push_back({{"j", static_cast<int>(i) + kMinLevel}, {"norm", std::sqrt(lsq[i])}});
        l2 += lsq[i];
      }
      Json sob = Json::array();
      for (double r : regularities) {
        if (!(r >= 0.0)) throw ConfigError("regularity must be >= 0");
        sob.push_back({{"r", r},
                       {"norm", std::sqrt(sobolev_norm_sq(lsq, r))},
                       {"sup_norm", std::sqrt(sup_sobolev_norm_sq(lsq, r))}});
      }
      Json doc = {{"j_max", c.j_max()}, {"l2_norm", std::sqrt(l2)}, {"levels", levels}, {"sobolev", sob}};
      detail::emit(out, output, doc.dump(2) + "\n");
    } else if (*project) {
      const auto c = detail::read_coefficients(input);
      const auto res = project_onto_ball(c, BallSpec{proj_s, proj_R}, proj_tol);
      if (!projected_out.empty()) {
        detail::write_file(projected_out, coefficients_to_json(res.projected).dump(2) + "\n");
      }
      detail::emit(out, output, to_json(res).dump(2) + "\n");
    } else if (*schedule) {
      detail::emit(out, output, to_json(build_schedule(cfg_flags.resolve())).dump(2) + "\n");
    } else if (*run_test_cmd) {
      const auto cfg = cfg_flags.resolve();
      const auto report = run_test(detail::read_coefficients(input), cfg);
      const std::string text =
          csv_row ? report_csv_header() + "\n" + report_csv_row(report) + "\n" : to_json(report).dump(2) + "\n";
      detail::emit(out, output, text);
    } else if (*mc) {
      const auto cfg = cfg_flags.resolve();
      ExperimentSpec spec{make_scenario(cfg), cfg, reps, seed, detail::resolve_threads(threads)};
      const auto result = run_experiment(spec);
      Json doc = to_json(result, spec);
      const Json hash_src = {{"config", to_json(cfg)}, {"scenario", spec.scenario.name}, {"reps", reps}};
      doc["config_hash"] = config_hash(hash_src);
      bool budget_ok = true;
      if (spec.scenario.tag == Hypothesis::H0) {
        budget_ok = result.estimate.wilson_low <= cfg.eta / 2.0;
        doc["type_one_budget"] = cfg.eta / 2.0;
        doc["within_budget"] = budget_ok;
      }
      if (!csv_path.empty()) {
        detail::write_file(csv_path, csv_comment_header(seed, hash_src, no_meta) + experiment_csv(result, spec));
      }
      detail::emit(out, output, doc.dump(2) + "\n");
      if (!budget_ok) {
        err << "error=suite message=H0 rejection rate exceeds the type-I budget\n";
        return kExitSuiteFailure;
      }
    } else if (*verify) {
      const unsigned th = detail::resolve_threads(threads);
      bool passed = true;
      Json doc;
      if (lemma == "jpart2") {
        const auto rep = verify_lemma_jpart2(trials, seed, th);
        doc = to_json(rep);
        passed = rep.passed();
      } else if (lemma == "transition") {
        const auto rep = verify_transition(trials, seed, th);
        doc = to_json(rep);
        passed = rep.passed();
      } else {
        if (scenario_name.empty()) scenario_name = "zero";
        const auto cfg = cfg_flags.resolve();
        const auto rows = verify_concentration(make_scenario(cfg), deltas, reps, seed, cfg, th);
        Json table = Json::array();
        for (const auto& r : rows) {
          table.push_back(to_json(r));
          passed = passed && r.within_slack();
        }
        doc = {{"lemma", "concentration"}, {"config", to_json(cfg)}, {"seed", seed}, {"passed", passed}, {"rows", table}};
        if (!csv_path.empty()) {
          const Json hash_src = {{"config", to_json(cfg)}, {"scenario", scenario_name}, {"reps", reps}};
          detail::write_file(csv_path, csv_comment_header(seed, hash_src, no_meta) + concentration_csv(rows));
        }
      }
      detail::emit(out, output, doc.dump(2) + "\n");
      if (!passed) {
        err << "error=suite message=verification suite '" << lemma << "' reported violations\n";
        return kExitSuiteFailure;
      }
    } else if (*lower) {
      // Without --n, use max(N_eta, 10^4) under the chosen constants.
      std::optional<double> fallback;
      if (!cfg_flags.n) {
        TestConfig probe = cfg_flags.resolve(1e4);
        fallback = std::max(compute_constants(probe).chosen.N_eta, 1e4);
      }
      const auto rep = verify_lower_bound(cfg_flags.resolve(fallback));
      detail::emit(out, output, to_json(rep).dump(2) + "\n");
      if (!rep.checks_passed()) {
        err << "error=suite message=lower-bound checks failed\n";
        return kExitSuiteFailure;
      }
    } else if (*rate) {
      const auto cfg = cfg_flags.resolve(n_grid.empty() ? 4096.0 : n_grid.front());
      const auto curve = rate_curve(n_grid, cfg, budget, reps, seed, detail::resolve_threads(threads), steps);
      if (!csv_path.empty()) {
        const Json hash_src = {{"config", to_json(cfg)}, {"n_grid", n_grid}, {"reps", reps}, {"budget", budget}};
        detail::write_file(csv_path, csv_comment_header(seed, hash_src, no_meta) + rate_curve_csv(curve));
      }
      detail::emit(out, output, to_json(curve).dump(2) + "\n");
    }
  } catch (const Error& e) {
    err << "error=" << e.kind() << " message=" << detail::one_line(e.what()) << "\n";
    return kExitValidation;
  } catch (const Json::exception& e) {
    err << "error=validation message=" << detail::one_line(e.what()) << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error=internal message=" << detail::one_line(e.what()) << "\n";
    return kExitValidation;
  }
  return kExitOk;
}

inline int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"sobotest"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace sobotest::cli
