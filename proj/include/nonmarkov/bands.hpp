#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nonmarkov/bootstrap.hpp"
#include "nonmarkov/covariance.hpp"
#include "nonmarkov/errors.hpp"
#include "nonmarkov/estimators.hpp"

namespace nonmarkov {

enum class Transform { phi1, phi2, identity };
enum class WeightKind { ep, hw, unit };

inline constexpr double kClampEpsilon = 1e-6;

struct BandSpec {
  Transform transform = Transform::phi2;
  WeightKind weight = WeightKind::hw;
  double t1 = 0.0;
  double t2 = 0.0;
  double alpha = 0.05;

  void validate() const {
    if (!(t1 < t2)) throw ValidationError("band interval needs t1 < t2");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must be in (0, 1)");
    if (weight == WeightKind::unit && transform != Transform::identity)
      throw ValidationError("unit weight requires the identity transform");
    if (weight == WeightKind::hw && transform == Transform::identity)
      throw ValidationError("Hall-Wellner weight requires phi1 or phi2");
  }
};

/// log(-log p), log(-log(1-p)) or p.
inline double transform_value(Transform tr, double p) {
  if (tr == Transform::identity) return p;
  if (!(p > 0.0 && p < 1.0)) throw DomainError("transform argument must lie in (0, 1)");
  return tr == Transform::phi1 ? std::log(-std::log(p)) : std::log(-std::log1p(-p));
}

inline double dtransform(Transform tr, double p) {
  if (tr == Transform::identity) return 1.0;
  if (!(p > 0.0 && p < 1.0)) throw DomainError("transform argument must lie in (0, 1)");
  return tr == Transform::phi1 ? 1.0 / (p * std::log(p)) : -1.0 / ((1.0 - p) * std::log1p(-p));
}

inline double inverse_transform(Transform tr, double y) {
  switch (tr) {
    case Transform::phi1: return std::exp(-std::exp(y));
    case Transform::phi2: return -std::expm1(-std::exp(y));
    case Transform::identity: break;
  }
  return y;
}

inline double clamp_probability(double p) { return std::clamp(p, kClampEpsilon, 1.0 - kClampEpsilon); }

/// Band weight at one time point; P is clamped before transforming.
inline double weight(const BandSpec& spec, double P, double sigma) {
  if (spec.weight == WeightKind::unit) return 1.0;
  double p = P;
  if (spec.transform != Transform::identity) {
    p = clamp_probability(P);
    if (p <= kClampEpsilon || p >= 1.0 - kClampEpsilon)
      throw DegenerateWeight("estimate at the clamp boundary: " + std::to_string(P));
  }
  if (spec.weight == WeightKind::ep) {
    const double w = 1.0 / std::abs(dtransform(spec.transform, p) * sigma);
    if (!(sigma > 0.0) || !std::isfinite(w)) throw DegenerateWeight("equal precision weight needs sigma > 0");
    return w;
  }
  const double w = spec.transform == Transform::phi1 ? -std::log(p) / (1.0 + sigma * sigma / (p * p))
                                                     : -std::log1p(-p) / (1.0 + sigma * sigma / ((1.0 - p) * (1.0 - p)));
  if (!(w > 0.0) || !std::isfinite(w)) throw DegenerateWeight("Hall-Wellner weight not positive");
  return w;
}

/// Estimate and standard error evaluated on a band grid.
struct PointwiseCurve {
  std::vector<double> estimate;
  std::vector<double> sigma;
};

struct ConfidenceBand {
  std::vector<double> grid;
  std::vector<double> lower, estimate, upper;
  double q_star = 0.0;
  std::size_t n = 0;
  std::size_t failed_replicates = 0;
};

/// {t1} + knots in (t1, t2] + {t2}.
inline std::vector<double> band_grid(std::span<const double> knots, double t1, double t2) {
  std::vector<double> g{t1};
  for (double k : knots)
    if (k > t1 && k <= t2) g.push_back(k);
  if (g.back() != t2) g.push_back(t2);
  return g;
}

/// Back-transformed limits phi^{-1}(phi(P) -+ q / (sqrt(n) w)), ordered and kept inside [0, 1].
inline void band_limits(const BandSpec& spec, double P, double w, double q, double n, double& lo, double& hi) {
  const double half = q / (std::sqrt(n) * w);
  if (spec.transform == Transform::identity) {
    lo = P - half;
    hi = P + half;
  } else {
    const double y = transform_value(spec.transform, clamp_probability(P));
    const double a = inverse_transform(spec.transform, y - half);
    const double b = inverse_transform(spec.transform, y + half);
    lo = std::min(a, b);
    hi = std::max(a, b);
  }
  lo = std::clamp(std::min(lo, P), 0.0, 1.0);
  hi = std::clamp(std::max(hi, P), 0.0, 1.0);
}

/// Band from bootstrap curves already evaluated on `grid`. Replicates whose
/// weight degenerates count as failures on top of `failed`.
inline ConfidenceBand assemble_band(const std::vector<double>& grid, const PointwiseCurve& hat,
                                    std::span<const PointwiseCurve> stars, std::size_t n, const BandSpec& spec,
                                    std::size_t requested, std::size_t failed = 0, double max_failure_fraction = 0.10) {
  spec.validate();
  const std::size_t K = grid.size();
  if (hat.estimate.size() != K || hat.sigma.size() != K) throw ValidationError("estimate does not match band grid");
  const double rn = std::sqrt(static_cast<double>(n));
  std::vector<double> w_hat(K), phi_hat(K);
  for (std::size_t g = 0; g < K; ++g) {
    w_hat[g] = weight(spec, hat.estimate[g], hat.sigma[g]);
    phi_hat[g] = transform_value(spec.transform, spec.transform == Transform::identity
                                                     ? hat.estimate[g]
                                                     : clamp_probability(hat.estimate[g]));
  }
  std::vector<std::vector<double>> curves;
  curves.reserve(stars.size());
  for (const auto& star : stars) {
    try {
      std::vector<double> c(K);
      for (std::size_t g = 0; g < K; ++g) {
        const double w = weight(spec, star.estimate[g], star.sigma[g]);
        const double p =
            spec.transform == Transform::identity ? star.estimate[g] : clamp_probability(star.estimate[g]);
        c[g] = rn * w * (transform_value(spec.transform, p) - phi_hat[g]);
      }
      curves.push_back(std::move(c));
    } catch (const Error&) {
      ++failed;
    }
  }
  if (static_cast<double>(failed) > max_failure_fraction * static_cast<double>(requested) || curves.empty())
    throw TooManyFailures(failed, requested);

  ConfidenceBand band;
  band.grid = grid;
  band.n = n;
  band.failed_replicates = failed;
  band.q_star = sup_quantile(curves, spec.alpha);
  band.estimate = hat.estimate;
  band.lower.resize(K);
  band.upper.resize(K);
  for (std::size_t g = 0; g < K; ++g)
    band_limits(spec, hat.estimate[g], w_hat[g], band.q_star, static_cast<double>(n), band.lower[g], band.upper[g]);
  return band;
}

/// Estimate and sigma of the non-Markov estimator at arbitrary times in [s, tau].
inline PointwiseCurve pointwise(const SubgroupFit& fit, std::span<const double> times) {
  const ProductLimitMoments mom(fit.components);
  PointwiseCurve out;
  out.estimate.reserve(times.size());
  out.sigma.reserve(times.size());
  for (double t : times) {
    const std::size_t g = fit.grid_index(t);
    out.estimate.push_back(fit.estimate[g]);
    out.sigma.push_back(std::sqrt(clamp_variance(gamma_diagonal(fit, mom, g))));
  }
  return out;
}

/// Same for the Aalen-Johansen estimator of P(X(t) in J | X(s) in I).
inline PointwiseCurve pointwise(const AalenJohansenFit& fit, StateSet I, StateSet J, std::span<const double> times) {
  const StepFunction curve = fit.set_curve(I, J);
  const auto rows = detail::aj_start_rows(fit, I);
  const int S = fit.n_states();
  std::vector<Eigen::MatrixXd> steps;
  steps.reserve(fit.times().size());
  for (const auto& dA : fit.increments()) steps.push_back(Eigen::MatrixXd::Identity(S, S) + dA);
  Eigen::VectorXd target = Eigen::VectorXd::Zero(S), c(S), next(S);
  for (int j = 0; j < S; ++j)
    if (J.contains(j)) target(j) = 1.0;
  PointwiseCurve out;
  for (double t : times) {
    double v = 0.0;
    const std::size_t E = fit.events_through(t);
    c = target;
    for (std::size_t e = E; e-- > 0;) {
      for (int j = 0; j < S; ++j)
        for (int k = 0; k < S; ++k) {
          if (k == j) continue;
          const double wgt = detail::aj_event_weight(fit, rows[e], e, j, k);
          if (wgt != 0.0) v += wgt * (c(k) - c(j)) * (c(k) - c(j));
        }
      next.noalias() = steps[e] * c;
      c.swap(next);
    }
    out.estimate.push_back(curve(t));
    out.sigma.push_back(std::sqrt(clamp_variance(v)));
  }
  return out;
}

/// Simultaneous band for the non-Markov estimator of P(X(t) in J | X(s) in I) on [t1, t2].
inline ConfidenceBand build_band(const Sample& sample, double s, StateSet I, StateSet J, const BandSpec& spec,
                                 const BootstrapConfig& cfg) {
  spec.validate();
  if (!(spec.t1 >= s)) throw ValidationError("band interval must lie in [s, tau]");
  const auto fit = fit_subgroup(sample, s, I, J, spec.t2);
  const auto grid = band_grid(fit.grid, spec.t1, spec.t2);
  const auto hat = pointwise(fit, grid);
  const auto draws = bootstrap_rows(
      sample,
      [&](const Sample& base, std::span<const std::size_t> rows) {
        return pointwise(fit_subgroup(base, rows, s, I, J, spec.t2), grid);
      },
      cfg);
  return assemble_band(grid, hat, draws.values, sample.size(), spec, cfg.B, draws.failed, cfg.max_failure_fraction);
}

/// Comparator band for the Aalen-Johansen estimator, classical bootstrap.
inline ConfidenceBand build_aj_band(const Sample& sample, double s, StateSet I, StateSet J, const BandSpec& spec,
                                    const BootstrapConfig& cfg) {
  spec.validate();
  if (!(spec.t1 >= s)) throw ValidationError("band interval must lie in [s, tau]");
  const AalenJohansenFit fit(sample, s, spec.t2);
  const auto grid = band_grid(fit.times(), spec.t1, spec.t2);
  const auto hat = pointwise(fit, I, J, grid);
  const auto draws = bootstrap_rows(
      sample,
      [&](const Sample& base, std::span<const std::size_t> rows) {
        return pointwise(AalenJohansenFit(base, rows, s, spec.t2), I, J, grid);
      },
      cfg);
  return assemble_band(grid, hat, draws.values, sample.size(), spec, cfg.B, draws.failed, cfg.max_failure_fraction);
}

/// Columns t, lower, estimate, upper.
inline void write_csv(std::ostream& os, const ConfidenceBand& band) {
  char buf[128];
  os << "t,lower,estimate,upper\n";
  for (std::size_t g = 0; g < band.grid.size(); ++g) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", band.grid[g], band.lower[g], band.estimate[g],
                  band.upper[g]);
    os << buf;
  }
}

}  // namespace nonmarkov
