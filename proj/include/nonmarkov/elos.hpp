#pragma once

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nonmarkov/bootstrap.hpp"
#include "nonmarkov/covariance.hpp"
#include "nonmarkov/estimators.hpp"

namespace nonmarkov {

struct ElosResult {
  double estimate = 0.0;
  double variance = 0.0;  ///< asymptotic variance of sqrt(n) (estimate - e)
  std::size_t n_subgroup = 0;
  std::size_t n_total = 0;
  double s = 0.0;
  double tau = 0.0;
};

/// Integral of the estimated transition curve over [s, tau].
inline double elos(const TransitionCurve& curve) { return curve.estimate.integral(curve.s, curve.tau); }

inline double elos(const SubgroupFit& fit) {
  const auto w = fit.cell_widths();
  double total = 0.0;
  for (std::size_t g = 0; g < w.size(); ++g) total += w[g] * fit.estimate[g];
  return total;
}

inline ElosResult elos_result(const SubgroupFit& fit, CovarianceDiagnostics* diag = nullptr) {
  ElosResult r;
  r.estimate = elos(fit);
  r.variance = elos_variance(fit, diag);
  r.n_subgroup = fit.members.size();
  r.n_total = fit.n_total;
  r.s = fit.s;
  r.tau = fit.tau;
  return r;
}

inline ElosResult elos_result(const Sample& sample, double s, StateSet I, StateSet J, double tau) {
  return elos_result(fit_subgroup(sample, s, I, J, tau));
}

/// Expected length of stay under the Aalen-Johansen estimator, with its plug-in variance.
inline ElosResult aj_elos_result(const AalenJohansenFit& fit, StateSet I, StateSet J) {
  ElosResult r;
  r.estimate = fit.set_curve(I, J).integral(fit.s(), fit.tau());
  r.variance = clamp_variance(aj_elos_variance(fit, I, J));
  r.n_total = fit.n_total();
  r.s = fit.s();
  r.tau = fit.tau();
  return r;
}

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }
inline double normal_cdf(double x) { return boost::math::cdf(boost::math::normal(), x); }

/// Two-sided Wald interval e -+ z_{1-alpha/2} sqrt(variance / n).
inline std::pair<double, double> wald_ci(const ElosResult& r, double alpha) {
  const double half = normal_quantile(1.0 - alpha / 2.0) * std::sqrt(r.variance / static_cast<double>(r.n_total));
  return {r.estimate - half, r.estimate + half};
}

enum class TestMethod { wald, naive_bootstrap, bootstrap_t };

inline std::string to_string(TestMethod m) {
  switch (m) {
    case TestMethod::wald: return "wald";
    case TestMethod::naive_bootstrap: return "naive_bootstrap";
    case TestMethod::bootstrap_t: return "bootstrap_t";
  }
  return "";
}

struct TwoSampleTest {
  double delta = 0.0;
  double z = 0.0;
  double p_value_one_sided = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  TestMethod method = TestMethod::wald;
  std::size_t n1 = 0, n2 = 0;
  std::size_t failed_replicates = 0;
};

struct TwoSampleOptions {
  double alpha = 0.05;
  BootstrapConfig boot;
  /// When set, both samples are resampled with the same index stream.
  bool shared_stream = false;
};

inline nlohmann::json to_json(const TwoSampleTest& t) {
  return nlohmann::json{{"delta", t.delta}, {"z", t.z},         {"p_value", t.p_value_one_sided},
                        {"ci_lo", t.ci_lo}, {"ci_hi", t.ci_hi}, {"method", to_string(t.method)},
                        {"n1", t.n1},       {"n2", t.n2}};
}

namespace detail {

struct ElosDraw {
  double estimate;
  double variance;
};

inline BootstrapDraws<ElosDraw> elos_draws(const Sample& sample, double s, StateSet I, StateSet J, double tau,
                                           const BootstrapConfig& cfg, bool with_variance) {
  return bootstrap_rows(
      sample,
      [&](const Sample& base, std::span<const std::size_t> rows) {
        const auto fit = fit_subgroup(base, rows, s, I, J, tau);
        return ElosDraw{elos(fit), with_variance ? elos_variance(fit) : 0.0};
      },
      cfg);
}

/// Mid-p tail fraction P(x < threshold) + P(x = threshold) / 2.
inline double mid_p(const std::vector<double>& xs, double threshold) {
  double below = 0.0, tied = 0.0;
  for (double x : xs) {
    if (x < threshold) below += 1.0;
    else if (x == threshold) tied += 1.0;
  }
  return (below + 0.5 * tied) / static_cast<double>(xs.size());
}

}  // namespace detail

/// Test of H: e1 >= e2 against e1 < e2 for the expected length of stay in J given I at s.
/// z is always the normalised Wald statistic; the bootstrap methods differ in their
/// interval and p-value.
inline TwoSampleTest two_sample_test(const Sample& sample1, const Sample& sample2, double s, StateSet I, StateSet J,
                                     double tau, TestMethod method, const TwoSampleOptions& opt = {}) {
  const auto fit1 = fit_subgroup(sample1, s, I, J, tau);
  const auto fit2 = fit_subgroup(sample2, s, I, J, tau);
  const auto r1 = elos_result(fit1), r2 = elos_result(fit2);
  const double n1 = static_cast<double>(sample1.size()), n2 = static_cast<double>(sample2.size());
  const double lambda = n1 / (n1 + n2);
  const double sigma = std::sqrt((1.0 - lambda) * r1.variance + lambda * r2.variance);
  if (!(sigma > 0.0)) throw NonpositiveSE();
  const double scale = std::sqrt((n1 + n2) / (n1 * n2));

  TwoSampleTest out;
  out.method = method;
  out.n1 = sample1.size();
  out.n2 = sample2.size();
  out.delta = r1.estimate - r2.estimate;
  out.z = out.delta / (sigma * scale);
  if (method == TestMethod::wald) {
    const double half = normal_quantile(1.0 - opt.alpha / 2.0) * sigma * scale;
    out.ci_lo = out.delta - half;
    out.ci_hi = out.delta + half;
    out.p_value_one_sided = normal_cdf(out.z);
    return out;
  }

  BootstrapConfig cfg2 = opt.boot;
  if (!opt.shared_stream) cfg2.seed = stream_seed(opt.boot.seed, 0x5EC0);
  const bool studentize = method == TestMethod::bootstrap_t;
  const auto d1 = detail::elos_draws(sample1, s, I, J, tau, opt.boot, studentize);
  const auto d2 = detail::elos_draws(sample2, s, I, J, tau, cfg2, studentize);
  // Pair surviving replicates by index.
  std::vector<double> centered, studentized;
  std::size_t a = 0, b = 0;
  while (a < d1.size() && b < d2.size()) {
    if (d1.replicate[a] < d2.replicate[b]) {
      ++a;
    } else if (d2.replicate[b] < d1.replicate[a]) {
      ++b;
    } else {
      const double diff = d1.values[a].estimate - d2.values[b].estimate;
      centered.push_back(diff - out.delta);
      if (studentize) {
        const double sig = std::sqrt((1.0 - lambda) * d1.values[a].variance + lambda * d2.values[b].variance);
        if (sig > 0.0) studentized.push_back((diff - out.delta) / (sig * scale));
      }
      ++a;
      ++b;
    }
  }
  out.failed_replicates = opt.boot.B - (studentize ? studentized.size() : centered.size());
  if (static_cast<double>(out.failed_replicates) > opt.boot.max_failure_fraction * static_cast<double>(opt.boot.B))
    throw TooManyFailures(out.failed_replicates, opt.boot.B);
  if (method == TestMethod::naive_bootstrap) {
    std::vector<double> deltas(centered.size());
    for (std::size_t i = 0; i < centered.size(); ++i) deltas[i] = centered[i] + out.delta;
    std::tie(out.ci_lo, out.ci_hi) = percentile_ci(deltas, opt.alpha);
    out.p_value_one_sided = detail::mid_p(centered, out.delta);
  } else {
    std::tie(out.ci_lo, out.ci_hi) = bootstrap_t_ci(out.delta, sigma * scale, studentized, opt.alpha);
    out.p_value_one_sided = detail::mid_p(studentized, out.z);
  }
  return out;
}

}  // namespace nonmarkov
