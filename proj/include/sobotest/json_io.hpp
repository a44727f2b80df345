#pragma once

// JSON and CSV serialization for coefficient files, configurations and every
// report type. Structured results go to JSON; sweeps go to CSV with a comment
// header carrying the seed and a hash of the configuration.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sobotest/errors.hpp"
#include "sobotest/lower_bound.hpp"
#include "sobotest/mc_harness.hpp"
#include "sobotest/regularity_test.hpp"
#include "sobotest/sequence_model.hpp"
#include "sobotest/sobolev_geometry.hpp"

namespace sobotest {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Coefficient files: {"j_max": int, "levels": [{"j": int, "coeffs": [...]}, ...]}

inline Json coefficients_to_json(const CoefficientArray& c) {
  Json levels = Json::array();
  for (int j = kMinLevel; j <= c.j_max(); ++j) {
    const auto lv = c.level(j);
    levels.push_back({{"j", j}, {"coeffs", std::vector<double>(lv.begin(), lv.end())}});
  }
  return {{"j_max", c.j_max()}, {"levels", std::move(levels)}};
}

inline CoefficientArray coefficients_from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("coefficient file must be a JSON object");
  if (!doc.contains("j_max") || !doc["j_max"].is_number_integer()) {
    throw ConfigError("coefficient file needs an integer 'j_max'");
  }
  if (!doc.contains("levels") || !doc["levels"].is_array()) {
    throw ConfigError("coefficient file needs a 'levels' array");
  }
  const auto j_max = doc["j_max"].get<long long>();
  if (j_max < kMinLevel || j_max > kMaxLevel) {
    throw ConfigError("j_max must lie in 2.." + std::to_string(kMaxLevel));
  }
  const auto& levels = doc["levels"];
  if (static_cast<long long>(levels.size()) != j_max - 1) {
    throw ConfigError("expected " + std::to_string(j_max - 1) + " levels, found " +
                      std::to_string(levels.size()));
  }
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& lv = levels[i];
    const long long expected = kMinLevel + static_cast<long long>(i);
    if (!lv.is_object() || !lv.contains("j") || !lv["j"].is_number_integer() ||
        lv["j"].get<long long>() != expected) {
      throw ConfigError("levels must be contiguous from 2; entry " + std::to_string(i) +
                        " should have j = " + std::to_string(expected));
    }
    if (!lv.contains("coeffs") || !lv["coeffs"].is_array()) {
      throw ConfigError("level " + std::to_string(expected) + " needs a 'coeffs' array");
    }
    std::vector<double> coeffs;
    for (const auto& v : lv["coeffs"]) {
      if (!v.is_number()) throw ConfigError("level " + std::to_string(expected) + " has a non-numeric coefficient");
      coeffs.push_back(v.get<double>());
    }
    out.push_back(std::move(coeffs));
  }
  return CoefficientArray::from_levels(out);
}

inline Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Configurations

inline Json to_json(const TestConfig& c) {
  return {{"n", c.n}, {"s", c.s}, {"t", c.t}, {"R", c.R}, {"eta", c.eta}};
}

inline TestConfig config_from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a flat JSON object");
  TestConfig c;
  auto read = [&](const char* key, double& slot) {
    if (!doc.contains(key)) throw ConfigError(std::string("config is missing '") + key + "'");
    if (!doc[key].is_number()) throw ConfigError(std::string("config field '") + key + "' must be a number");
    slot = doc[key].get<double>();
  };
  read("n", c.n);
  read("s", c.s);
  read("t", c.t);
  read("R", c.R);
  read("eta", c.eta);
  for (const auto& [key, _] : doc.items()) {
    if (key != "n" && key != "s" && key != "t" && key != "R" && key != "eta") {
      throw ConfigError("unknown config field '" + key + "'");
    }
  }
  c.validate();
  return c;
}

/// 64-bit FNV-1a of the compact JSON text, as 16 hex digits.
inline std::string config_hash(const Json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : doc.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Comment header for CSV outputs; the timestamp line is dropped with no_meta.
inline std::string csv_comment_header(std::uint64_t seed, const Json& config, bool no_meta) {
  std::ostringstream os;
  os << "# seed=" << seed << "\n# config_hash=" << config_hash(config) << "\n";
  if (!no_meta) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    os << "# generated=" << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << "\n";
  }
  return os.str();
}

/// Shortest round-trip text of a double, as JSON would print it.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return Json(x).dump();
}

// ---------------------------------------------------------------------------
// Geometry and test

inline Json to_json(const ProjectionResult& p) {
  return {{"distance", p.distance}, {"multiplier", p.multiplier}, {"kkt_residual", p.kkt_residual}};
}

inline Json to_json(const GuaranteeCondition& g) {
  return {{"j_star", g.j_star}, {"condition", g.condition}, {"holds", g.holds}, {"log_margin", g.log_margin}};
}

inline Json to_json(const LevelSchedule& s) {
  Json levels = Json::array();
  for (const auto& c : s.levels) {
    levels.push_back({{"j", c.j},
                      {"alpha", c.alpha},
                      {"beta", c.beta},
                      {"rho", c.rho},
                      {"A", c.A},
                      {"C_beta", c.C_beta},
                      {"D", c.D},
                      {"tau", c.tau}});
  }
  Json diag = Json::array();
  for (const auto& g : s.diagnostics) diag.push_back(to_json(g));
  return {{"config", to_json(s.config)}, {"J", s.J}, {"levels", levels}, {"diagnostics", diag}};
}

inline Json to_json(const TestReport& r) {
  Json j_star = Json::array(), M_hat = Json::array(), sob = Json::array(), T = Json::array(),
       tau = Json::array(), exceeded = Json::array(), Y = Json::array();
  for (const auto& lv : r.levels) {
    j_star.push_back(lv.j_star);
    M_hat.push_back(lv.M_hat);
    sob.push_back(lv.sobolev_sq);
    T.push_back(lv.T);
    tau.push_back(lv.tau);
    exceeded.push_back(lv.exceeded);
  }
  // Y_j does not depend on j*, so the deepest level carries the full vector.
  if (!r.levels.empty()) Y = r.levels.back().Y;
  Json diag = Json::array();
  for (const auto& g : r.diagnostics) diag.push_back(to_json(g));
  const auto first = r.first_exceeding_level();
  return {{"config", to_json(r.config)},
          {"J", r.J},
          {"verdict", r.reject ? "reject" : "accept"},
          {"first_exceeding_level", first ? Json(*first) : Json(nullptr)},
          {"levels",
           {{"j_star", j_star},
            {"Y", Y},
            {"M_hat", M_hat},
            {"sobolev_sq", sob},
            {"T", T},
            {"tau", tau},
            {"exceeded", exceeded}}},
          {"diagnostics", diag}};
}

inline std::string report_csv_header() { return "n,s,t,R,eta,J,verdict,first_exceeding_level"; }

inline std::string report_csv_row(const TestReport& r) {
  const auto first = r.first_exceeding_level();
  std::ostringstream os;
  os << fmt(r.config.n) << ',' << fmt(r.config.s) << ',' << fmt(r.config.t) << ',' << fmt(r.config.R)
     << ',' << fmt(r.config.eta) << ',' << r.J << ',' << (r.reject ? "reject" : "accept") << ','
     << (first ? std::to_string(*first) : "");
  return os.str();
}

// ---------------------------------------------------------------------------
// Lower bound

inline Json to_json(const ConstantTriple& c) {
  return {{"a_eta", c.a_eta}, {"C_eta", c.C_eta}, {"N_eta", c.N_eta}};
}

inline Json to_json(const LowerBoundReport& r) {
  return {{"config", to_json(r.config)},
          {"J", r.J},
          {"a_eta", r.a_eta},
          {"C_eta", r.C_eta},
          {"N_eta", r.N_eta},
          {"feasible", r.feasible},
          {"v", r.v},
          {"constants",
           {{"square_root", to_json(r.constants.square_root)},
            {"fourth_root", to_json(r.constants.fourth_root)}}},
          {"prior_norm_t", r.prior_norm_t},
          {"prior_in_alternative_ball", r.prior_in_alternative_ball},
          {"separation", r.separation},
          {"separation_projected", r.separation_projected},
          {"separation_target", r.separation_target},
          {"separation_ok", r.separation_ok},
          {"chi2_div", r.chi2.overflow ? Json(nullptr) : Json(r.chi2.value)},
          {"log_chi2_div", r.chi2.log_value},
          {"chi2_bound_log", r.chi2.log_bound},
          {"chi2_budget", r.chi2_budget},
          {"chi2_ok", r.chi2_ok},
          {"total_error_lower_bound", r.total_error_lb},
          {"passed", r.passed()}};
}

// ---------------------------------------------------------------------------
// Monte-Carlo results

inline Json to_json(const ErrorEstimate& e) {
  return {{"rejection_rate", e.rate},
          {"wilson_low", e.wilson_low},
          {"wilson_high", e.wilson_high},
          {"replicates", e.replicates},
          {"rejections", e.rejections}};
}

inline Json to_json(const ExperimentResult& r, const ExperimentSpec& spec) {
  Json levels = Json::array();
  for (const auto& lv : r.levels) {
    levels.push_back({{"j_star", lv.j_star},
                      {"exceedances", lv.exceedances},
                      {"mean_T", lv.mean_T},
                      {"tau", lv.tau}});
  }
  return {{"scenario", spec.scenario.name},
          {"hypothesis", to_string(spec.scenario.tag)},
          {"config", to_json(spec.config)},
          {"seed", spec.seed},
          {"J", r.J},
          {"truth_levels", r.truth_levels},
          {"tail_bound", r.tail_bound},
          {"truth_tail_norm", r.truth_tail_norm},
          {"estimate", to_json(r.estimate)},
          {"levels", levels}};
}

inline std::string experiment_csv(const ExperimentResult& r, const ExperimentSpec& spec) {
  std::ostringstream os;
  os << "scenario,n,level,exceedances,replicates,exceed_rate,mean_T,tau\n";
  for (const auto& lv : r.levels) {
    os << spec.scenario.name << ',' << fmt(spec.config.n) << ',' << lv.j_star << ',' << lv.exceedances
       << ',' << spec.replicates << ','
       << fmt(static_cast<double>(lv.exceedances) / static_cast<double>(spec.replicates)) << ','
       << fmt(lv.mean_T) << ',' << fmt(lv.tau) << '\n';
  }
  return os.str();
}

inline Json to_json(const LemmaCase& c) {
  std::vector<double> norms;
  for (double m : c.level_sq) norms.push_back(std::sqrt(m));
  return {{"index", c.index},
          {"config", to_json(c.config)},
          {"J", c.J},
          {"rho", c.rho},
          {"level_norms", norms},
          {"coefficients", coefficients_to_json(make_level_profile(norms))}};
}

inline Json to_json(const LemmaViolation& v) {
  return {{"profile", to_json(v.profile)},
          {"j_star", v.j_star},
          {"lhs", v.lhs},
          {"rhs", v.rhs},
          {"reason", v.reason}};
}

inline Json to_json(const LemmaReport& r) {
  Json bad = Json::array();
  for (const auto& v : r.violations) bad.push_back(to_json(v));
  return {{"lemma", "jpart2"},
          {"requested", r.requested},
          {"admissible", r.admissible},
          {"attempts", r.attempts},
          {"checked_indices", r.checked_indices},
          {"min_log_margin", r.min_log_margin},
          {"violations", r.violations.size()},
          {"passed", r.passed()},
          {"counterexamples", bad}};
}

inline Json to_json(const TransitionReport& r) {
  Json bad = Json::array();
  for (const auto& v : r.failures) bad.push_back(to_json(v));
  return {{"lemma", "transition"},
          {"requested", r.requested},
          {"separated", r.separated},
          {"attempts", r.attempts},
          {"index_histogram", r.index_histogram},
          {"violations", r.failures.size()},
          {"passed", r.passed()},
          {"counterexamples", bad}};
}

inline Json to_json(const ConcentrationRow& r) {
  return {{"scenario", r.scenario},
          {"j_star", r.j_star},
          {"delta", r.delta},
          {"radius", r.radius},
          {"A", r.terms.A},
          {"B", r.terms.B},
          {"V", r.terms.V},
          {"violations", r.violations},
          {"replicates", r.replicates},
          {"frequency", r.frequency},
          {"wilson_low", r.wilson_low},
          {"wilson_high", r.wilson_high},
          {"within_slack", r.within_slack()},
          {"upper_below_delta", r.upper_below_delta()}};
}

inline std::string concentration_csv(const std::vector<ConcentrationRow>& rows) {
  std::ostringstream os;
  os << "scenario,j_star,delta,radius,violations,replicates,frequency,wilson_low,wilson_high\n";
  for (const auto& r : rows) {
    os << r.scenario << ',' << r.j_star << ',' << fmt(r.delta) << ',' << fmt(r.radius) << ','
       << r.violations << ',' << r.replicates << ',' << fmt(r.frequency) << ',' << fmt(r.wilson_low)
       << ',' << fmt(r.wilson_high) << '\n';
  }
  return os.str();
}

inline Json to_json(const RateCurve& c) {
  Json pts = Json::array();
  for (const auto& p : c.points) {
    pts.push_back({{"n", p.n},
                   {"J", p.J},
                   {"boundary", p.boundary},
                   {"distance", p.distance},
                   {"distance_low", p.distance_low},
                   {"distance_high", std::isinf(p.distance_high) ? Json(nullptr) : Json(p.distance_high)},
                   {"rate_at_distance", p.rate_at_distance},
                   {"in_alternative_class", p.in_alternative_class},
                   {"bracketed", p.bracketed},
                   {"probes", p.probes.size()}});
  }
  const auto num = [](double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); };
  return {{"config", to_json(c.config_template)},
          {"error_budget", c.error_budget},
          {"replicates", c.replicates},
          {"seed", c.seed},
          {"slope", num(c.slope)},
          {"slope_std_error", num(c.slope_std_error)},
          {"target_slope", c.target_slope},
          {"fitted_points", c.fitted_points},
          {"points", pts}};
}

inline std::string rate_curve_csv(const RateCurve& c) {
  std::ostringstream os;
  os << "n,J,distance,distance_low,distance_high,in_alternative_class,bracketed\n";
  for (const auto& p : c.points) {
    os << fmt(p.n) << ',' << p.J << ',' << fmt(p.distance) << ',' << fmt(p.distance_low) << ','
       << fmt(p.distance_high) << ',' << (p.in_alternative_class ? 1 : 0) << ',' << (p.bracketed ? 1 : 0)
       << '\n';
  }
  return os.str();
}

}  // namespace sobotest
