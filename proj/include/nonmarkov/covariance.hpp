#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <span>
#include <vector>

#include "nonmarkov/errors.hpp"
#include "nonmarkov/estimators.hpp"

namespace nonmarkov {

/// Counters for plug-in quantities that had to be set to zero.
struct CovarianceDiagnostics {
  std::size_t empty_subsubgroups = 0;  ///< nobody observed in J at the conditioning time
  std::size_t zero_risk_cells = 0;     ///< grid cells with an empty risk set
  std::size_t clamped = 0;             ///< tiny negative variances set to 0
};

/// Slack below zero tolerated (and clamped) on variances.
inline constexpr double kVarianceSlack = 1e-9;

inline double clamp_variance(double v, CovarianceDiagnostics* diag = nullptr) {
  if (v >= 0.0) return v;
  if (v >= -kVarianceSlack) {
    if (diag) ++diag->clamped;
    return 0.0;
  }
  throw DiagnosticsError("negative variance estimate " + std::to_string(v));
}

/// Empirical moments of the at-risk indicators on a time grid.
struct CovComponents {
  std::vector<double> grid;
  Eigen::VectorXd p_I;       ///< P(X(s) in I, Y(u) = 1)
  Eigen::VectorXd p_JI;      ///< P(X(s) in I, X(u) in J, Y(u) = 1)
  Eigen::MatrixXd Sigma_JI;  ///< covariance of the J-occupancy indicators
  Eigen::MatrixXd Sigma_I;   ///< covariance of the at-risk indicators
  Eigen::MatrixXd Omega_JI;  ///< cross covariance, rows J-occupancy, columns at-risk
};

namespace detail {

inline bool at_risk(const SubgroupMember& m, double t) { return t < m.at_risk_end; }

inline bool in_target_at_risk(const SubgroupFit& fit, const SubgroupMember& m, double t) {
  if (!at_risk(m, t)) return false;
  const auto x = state_at(*m.path, t);
  return x && fit.J.contains(*x) && !fit.sets.sure.contains(*x);
}

}  // namespace detail

inline CovComponents estimate_components(const SubgroupFit& fit, std::span<const double> grid) {
  const auto K = static_cast<Eigen::Index>(grid.size());
  const auto m = static_cast<Eigen::Index>(fit.members.size());
  for (double g : grid)
    if (g < fit.s || g > fit.tau) throw ValidationError("component grid outside [s, tau]");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m, K);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(m, K);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& member = fit.members[static_cast<std::size_t>(i)];
    for (Eigen::Index a = 0; a < K; ++a) {
      const double u = grid[static_cast<std::size_t>(a)];
      B(i, a) = detail::at_risk(member, u) ? 1.0 : 0.0;
      A(i, a) = detail::in_target_at_risk(fit, member, u) ? 1.0 : 0.0;
    }
  }
  const double n = static_cast<double>(fit.n_total);
  CovComponents c;
  c.grid.assign(grid.begin(), grid.end());
  c.p_I = B.colwise().sum().transpose() / n;
  c.p_JI = A.colwise().sum().transpose() / n;
  c.Sigma_JI = A.transpose() * A / n - c.p_JI * c.p_JI.transpose();
  c.Omega_JI = A.transpose() * B / n - c.p_JI * c.p_I.transpose();
  c.Sigma_I.resize(K, K);
  for (Eigen::Index a = 0; a < K; ++a)
    for (Eigen::Index b = 0; b < K; ++b)
      c.Sigma_I(a, b) = c.p_I(grid[static_cast<std::size_t>(a)] >= grid[static_cast<std::size_t>(b)] ? a : b) -
                        c.p_I(a) * c.p_I(b);
  return c;
}

inline CovComponents estimate_components(const Sample& sample, double s, StateSet I, StateSet J,
                                         std::span<const double> grid, double tau) {
  return estimate_components(fit_subgroup(sample, s, I, J, tau), grid);
}

/// Asymptotic covariance of the conditional-proportion process at grid points u, v.
inline double cov_G(const CovComponents& c, std::size_t u, std::size_t v) {
  const auto a = static_cast<Eigen::Index>(u);
  const auto b = static_cast<Eigen::Index>(v);
  if (!(c.p_I(a) > 0.0) || !(c.p_I(b) > 0.0)) throw ZeroRiskSet("cov_G: empty risk set");
  const double pu = c.p_JI(a) / c.p_I(a);
  const double pv = c.p_JI(b) / c.p_I(b);
  return (c.Sigma_JI(a, b) + c.Sigma_I(a, b) * pu * pv - c.Omega_JI(a, b) * pv - c.Omega_JI(b, a) * pu) /
         (c.p_I(a) * c.p_I(b));
}

/// Cumulative sums over the subgroup's product-limit event times from which all
/// Kaplan-Meier / Aalen-Johansen plug-in covariances are assembled.
///
/// With d, d1 the all-cause and sure-set event counts, Y the risk set, F0- the
/// survival just before the event and F1k the incidence at it:
///   greenwood += d / (Y (Y - d)),  alpha += n d1 F0-^2 / Y^2,
///   beta += n d1 F0- / Y^2,  gamma += n d / Y^2.
struct ProductLimitMoments {
  std::vector<double> times;
  std::vector<double> greenwood, alpha, beta, beta_f, gamma, gamma_f, gamma_ff;
  std::vector<double> f0_left, f1_at;
  std::vector<double> w_alpha, w_beta, w_gamma;  ///< per-event (non-cumulative) terms

  explicit ProductLimitMoments(const SubgroupEstimate& est) {
    const double n = static_cast<double>(est.n_total);
    const std::size_t E = est.event_times.size();
    times = est.event_times;
    const auto push = [](std::vector<double>& v, double x) { v.push_back((v.empty() ? 0.0 : v.back()) + x); };
    double f0_prev = 1.0;
    for (std::size_t k = 0; k < E; ++k) {
      const double y = est.at_risk[k], d = est.events[k], d1 = est.events_sure[k];
      const double f1k = est.F1.values()[k];
      // Once everyone has an event the survival is 0 and every later weight vanishes.
      push(greenwood, y > d ? d / (y * (y - d)) : 0.0);
      const double a = n * d1 * f0_prev * f0_prev / (y * y);
      const double b = n * d1 * f0_prev / (y * y);
      const double g = n * d / (y * y);
      w_alpha.push_back(a);
      w_beta.push_back(b);
      w_gamma.push_back(g);
      push(alpha, a);
      push(beta, b);
      push(beta_f, b * f1k);
      push(gamma, g);
      push(gamma_f, g * f1k);
      push(gamma_ff, g * f1k * f1k);
      f0_left.push_back(f0_prev);
      f1_at.push_back(f1k);
      f0_prev = est.F0.values()[k];
    }
  }

  /// Number of events at or before t.
  std::size_t count_through(double t) const {
    return static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
  }
  static double at(const std::vector<double>& cum, std::size_t count) { return count == 0 ? 0.0 : cum[count - 1]; }
};

struct KmAjCovariances {
  double sigma00 = 0.0;  ///< cov(L0(r), L0(t))
  double sigma11 = 0.0;  ///< cov(L1(r), L1(t))
  double sigma01 = 0.0;  ///< cov(L0(r), L1(t))
  double sigma10 = 0.0;  ///< cov(L1(r), L0(t))
};

namespace detail {

inline KmAjCovariances km_aj_from_moments(const ProductLimitMoments& mom, double f0r, double f0t, double f1r,
                                          double f1t, std::size_t c, double n) {
  using M = ProductLimitMoments;
  KmAjCovariances out;
  out.sigma00 = n * f0r * f0t * M::at(mom.greenwood, c);
  const double A = M::at(mom.alpha, c), B = M::at(mom.beta, c), BF = M::at(mom.beta_f, c);
  const double G = M::at(mom.gamma, c), GF = M::at(mom.gamma_f, c), GFF = M::at(mom.gamma_ff, c);
  out.sigma11 = A - (f1r + f1t) * B + 2.0 * BF + f1r * f1t * G - (f1r + f1t) * GF + GFF;
  out.sigma01 = -f0r * (B - f1t * G + GF);
  out.sigma10 = -f0t * (B - f1r * G + GF);
  return out;
}

}  // namespace detail

/// Plug-in covariances of the subgroup Kaplan-Meier and cause-1 Aalen-Johansen
/// processes at (r, t): Greenwood for the survival curve, delta-method
/// (Aalen-type) sums for the incidence and the cross terms.
inline KmAjCovariances km_aj_covariances(const SubgroupEstimate& est, double r, double t) {
  const ProductLimitMoments mom(est);
  const std::size_t c = mom.count_through(std::min(r, t));
  return detail::km_aj_from_moments(mom, est.F0(r), est.F0(t), est.F1(r), est.F1(t), c,
                                    static_cast<double>(est.n_total));
}

/// cov(L0(r), L1(t)).
inline double cov_L0_L1(const SubgroupEstimate& est, double r, double t) { return km_aj_covariances(est, r, t).sigma01; }

/// Subjects of the subgroup observed in J at time u, split into those still at
/// risk (competing-risks state 0) and those already in the sure set; the
/// product-limit curves of the at-risk part restart at u.
struct ConditionalOnTarget {
  double u = 0.0;
  std::size_t observed = 0;
  std::size_t at_risk = 0;
  std::size_t absorbed = 0;
  SubgroupEstimate from_u;
};

inline ConditionalOnTarget conditional_on_target(const SubgroupFit& fit, double u) {
  ConditionalOnTarget out;
  out.u = u;
  std::vector<CompetingRisksRecord> records;
  for (const auto& m : fit.members) {
    const auto x = state_at(*m.path, u);
    if (!x || !fit.J.contains(*x)) continue;
    if (fit.sets.sure.contains(*x)) {
      ++out.absorbed;
    } else if (detail::at_risk(m, u)) {
      ++out.at_risk;
      records.push_back(m.record);
    }
  }
  out.observed = out.at_risk + out.absorbed;
  if (!records.empty()) out.from_u = product_limit(records, u, fit.tau, fit.n_total);
  return out;
}

/// P(Z(t) = k, X(u) in J | X(s) in I), estimated as
/// P(Z(t) = k | X(u) in J, X(s) in I) * P(s, u) with the first factor taken from
/// the subjects observed in J at u. An empty conditioning group yields 0.
inline double p_IJk_hat(const SubgroupFit& fit, const ConditionalOnTarget& cond, double t, Cause k,
                        CovarianceDiagnostics* diag = nullptr) {
  if (t < cond.u) throw ValidationError("p_IJk_hat requires u <= t");
  if (cond.observed == 0) {
    if (diag) ++diag->empty_subsubgroups;
    return 0.0;
  }
  const double m = static_cast<double>(cond.observed);
  const double rho0 = static_cast<double>(cond.at_risk) / m;
  const double rho1 = static_cast<double>(cond.absorbed) / m;
  double conditional = 0.0;
  switch (k) {
    case Cause::none: conditional = cond.at_risk ? rho0 * cond.from_u.F0(t) : 0.0; break;
    case Cause::to_sure: conditional = rho1 + (cond.at_risk ? rho0 * cond.from_u.F1(t) : 0.0); break;
    case Cause::to_excluded: conditional = cond.at_risk ? rho0 * cond.from_u.F2(t) : 0.0; break;
  }
  return conditional * fit.estimate[fit.grid_index(cond.u)];
}

inline double p_IJk_hat(const SubgroupFit& fit, double u, double t, Cause k, CovarianceDiagnostics* diag = nullptr) {
  if (u < fit.s || t > fit.tau) throw ValidationError("p_IJk_hat requires s <= u <= t <= tau");
  return p_IJk_hat(fit, conditional_on_target(fit, u), t, k, diag);
}

namespace detail {

inline double require_risk(const SubgroupFit& fit, double u) {
  const double p = fit.p_I[fit.grid_index(u)];
  if (!(p > 0.0)) throw ZeroRiskSet("empty risk set at u=" + std::to_string(u));
  return p;
}

}  // namespace detail

/// cov(L0(r), G(u)); zero unless u < r.
inline double cov_L0_G(const SubgroupFit& fit, double r, double u, CovarianceDiagnostics* diag = nullptr) {
  if (!(u < r)) return 0.0;
  const double pI = detail::require_risk(fit, u);
  const std::size_t gu = fit.grid_index(u), gr = fit.grid_index(r);
  return (p_IJk_hat(fit, u, r, Cause::none, diag) - fit.F0[gr] * fit.p_cond[gu]) / pI;
}

/// cov(L1(t), G(u)); zero unless u < t.
inline double cov_L1_G(const SubgroupFit& fit, double t, double u, CovarianceDiagnostics* diag = nullptr) {
  if (!(u < t)) return 0.0;
  const double pI = detail::require_risk(fit, u);
  const std::size_t gu = fit.grid_index(u), gt = fit.grid_index(t);
  return (p_IJk_hat(fit, u, t, Cause::to_sure, diag) - fit.F1[gu] - fit.p_cond[gu] * (fit.F1[gt] - fit.F1[gu])) / pI;
}

/// cov(L2(t), G(u)) for the excluded-set incidence; zero unless u < t.
inline double cov_L2_G(const SubgroupFit& fit, double t, double u, CovarianceDiagnostics* diag = nullptr) {
  if (!(u < t)) return 0.0;
  const double pI = detail::require_risk(fit, u);
  const std::size_t gu = fit.grid_index(u), gt = fit.grid_index(t);
  return (p_IJk_hat(fit, u, t, Cause::to_excluded, diag) - fit.p_cond[gu] * (fit.F2[gt] - fit.F2[gu])) / pI;
}

/// cov(G(u), G(v)) evaluated directly from the subgroup paths.
inline double cov_G(const SubgroupFit& fit, double u, double v) {
  const std::size_t gu = fit.grid_index(u), gv = fit.grid_index(v);
  const double pIu = fit.p_I[gu], pIv = fit.p_I[gv];
  if (!(pIu > 0.0) || !(pIv > 0.0)) throw ZeroRiskSet("cov_G: empty risk set");
  const double n = static_cast<double>(fit.n_total);
  double both = 0.0, ju_rv = 0.0, jv_ru = 0.0;
  for (const auto& m : fit.members) {
    const bool au = detail::in_target_at_risk(fit, m, u), av = detail::in_target_at_risk(fit, m, v);
    both += (au && av) ? 1.0 : 0.0;
    ju_rv += (au && detail::at_risk(m, v)) ? 1.0 : 0.0;
    jv_ru += (av && detail::at_risk(m, u)) ? 1.0 : 0.0;
  }
  const double pJu = fit.p_JI[gu], pJv = fit.p_JI[gv];
  const double sigma_ji = both / n - pJu * pJv;
  const double sigma_i = fit.p_I[std::max(gu, gv)] - pIu * pIv;
  const double omega_uv = ju_rv / n - pJu * pIv;
  const double omega_vu = jv_ru / n - pJv * pIu;
  const double pu = fit.p_cond[gu], pv = fit.p_cond[gv];
  return (sigma_ji + sigma_i * pu * pv - omega_uv * pv - omega_vu * pu) / (pIu * pIv);
}

/// Asymptotic covariance of sqrt(n)(P_hat(s, .) - P(s, .)) at (r, t).
inline double gamma_IJ(const SubgroupFit& fit, double r, double t, CovarianceDiagnostics* diag = nullptr) {
  const std::size_t gr = fit.grid_index(r), gt = fit.grid_index(t);
  const double hi = std::max(r, t), lo = std::min(r, t);
  const std::size_t ghi = std::max(gr, gt), glo = std::min(gr, gt);
  const auto km = km_aj_covariances(fit.components, r, t);
  const double pr = fit.p_cond[gr], pt = fit.p_cond[gt];
  double value = pr * pt * km.sigma00 + km.sigma11 + pr * km.sigma01 + pt * km.sigma10;
  if (fit.p_I[gr] > 0.0 && fit.p_I[gt] > 0.0) {
    value += fit.F0[gr] * fit.F0[gt] * cov_G(fit, r, t);
  } else if (diag) {
    ++diag->zero_risk_cells;
  }
  if (lo < hi && fit.p_I[glo] > 0.0) {
    value += fit.p_cond[ghi] * fit.F0[glo] * cov_L0_G(fit, hi, lo, diag);
    value += fit.F0[glo] * cov_L1_G(fit, hi, lo, diag);
  }
  return value;
}

/// Gamma(t, t) at grid index g; closed form since the cross terms vanish on the diagonal.
inline double gamma_diagonal(const SubgroupFit& fit, const ProductLimitMoments& mom, std::size_t g) {
  const double t = fit.grid[g];
  const auto km = detail::km_aj_from_moments(mom, fit.F0[g], fit.F0[g], fit.F1[g], fit.F1[g], mom.count_through(t),
                                             static_cast<double>(fit.n_total));
  const double p = fit.p_cond[g];
  double value = p * p * km.sigma00 + km.sigma11 + 2.0 * p * km.sigma01;
  if (fit.p_I[g] > 0.0) value += fit.F0[g] * fit.F0[g] * p * (1.0 - p) / fit.p_I[g];
  return value;
}

/// sigma_hat(t) = sqrt(Gamma(t, t)) at every grid point.
inline std::vector<double> sigma_on_grid(const SubgroupFit& fit, CovarianceDiagnostics* diag = nullptr) {
  const ProductLimitMoments mom(fit.components);
  std::vector<double> out(fit.grid.size());
  for (std::size_t g = 0; g < fit.grid.size(); ++g) out[g] = std::sqrt(clamp_variance(gamma_diagonal(fit, mom, g), diag));
  return out;
}

/// A covariance function tabulated on a shared time grid.
struct CovSurface {
  std::vector<double> grid;
  Eigen::MatrixXd values;
};

/// Gamma on the fit's own grid, assembled term by term.
inline CovSurface gamma_surface(const SubgroupFit& fit, CovarianceDiagnostics* diag = nullptr) {
  const std::size_t K = fit.grid.size();
  const auto Ki = static_cast<Eigen::Index>(K);
  const double n = static_cast<double>(fit.n_total);
  const auto comp = estimate_components(fit, fit.grid);
  const ProductLimitMoments mom(fit.components);
  std::vector<std::size_t> counts(K);
  for (std::size_t g = 0; g < K; ++g) counts[g] = mom.count_through(fit.grid[g]);

  CovSurface out;
  out.grid = fit.grid;
  out.values = Eigen::MatrixXd::Zero(Ki, Ki);
  for (std::size_t a = 0; a < K; ++a) {
    for (std::size_t b = 0; b < K; ++b) {
      const std::size_t lo = std::min(a, b);
      const auto km = detail::km_aj_from_moments(mom, fit.F0[a], fit.F0[b], fit.F1[a], fit.F1[b], counts[lo], n);
      double v = fit.p_cond[a] * fit.p_cond[b] * km.sigma00 + km.sigma11 + fit.p_cond[a] * km.sigma01 +
                 fit.p_cond[b] * km.sigma10;
      if (fit.p_I[a] > 0.0 && fit.p_I[b] > 0.0) v += fit.F0[a] * fit.F0[b] * cov_G(comp, a, b);
      out.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = v;
    }
  }
  // Cross terms with the proportion process: only (later, earlier) pairs survive.
  const bool has_sure = !fit.sets.sure.empty();
  for (std::size_t b = 0; b + 1 < K; ++b) {
    if (!(fit.p_I[b] > 0.0)) {
      if (diag) ++diag->zero_risk_cells;
      continue;
    }
    const auto cond = conditional_on_target(fit, fit.grid[b]);
    const double pIb = fit.p_I[b];
    for (std::size_t a = b + 1; a < K; ++a) {
      const double t = fit.grid[a];
      const double c0 = (p_IJk_hat(fit, cond, t, Cause::none) - fit.F0[a] * fit.p_cond[b]) / pIb;
      double v = fit.p_cond[a] * fit.F0[b] * c0;
      if (has_sure) {
        const double c1 =
            (p_IJk_hat(fit, cond, t, Cause::to_sure) - fit.F1[b] - fit.p_cond[b] * (fit.F1[a] - fit.F1[b])) / pIb;
        v += fit.F0[b] * c1;
      }
      out.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += v;
      out.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) += v;
    }
    if (cond.observed == 0 && diag) ++diag->empty_subsubgroups;
  }
  return out;
}

/// Double integral of a covariance surface over [s, tau]^2 as an exact cell sum:
/// the value at grid[a] holds on [grid[a], grid[a+1]), the last point up to tau.
inline double elos_variance(const CovSurface& surface, double s, double tau, CovarianceDiagnostics* diag = nullptr) {
  const std::size_t K = surface.grid.size();
  if (K == 0 || surface.grid.front() != s || surface.grid.back() > tau)
    throw ValidationError("surface grid must start at s and stay within [s, tau]");
  Eigen::VectorXd w(static_cast<Eigen::Index>(K));
  for (std::size_t a = 0; a < K; ++a)
    w(static_cast<Eigen::Index>(a)) = (a + 1 < K ? surface.grid[a + 1] : tau) - surface.grid[a];
  return clamp_variance(w.dot(surface.values * w), diag);
}

/// Double integral of Gamma over [s, tau]^2 computed without materialising the surface.
/// Agrees with elos_variance(gamma_surface(fit), s, tau) up to rounding.
inline double elos_variance(const SubgroupFit& fit, CovarianceDiagnostics* diag = nullptr) {
  const std::size_t K = fit.grid.size();
  const double n = static_cast<double>(fit.n_total);
  const std::vector<double> w = fit.cell_widths();
  const std::vector<double>& p = fit.p_cond;
  const std::vector<double>& F0 = fit.F0;
  const std::vector<double>& F1 = fit.F1;

  // Suffix sums over grid cells.
  auto suffix = [&](auto&& term) {
    std::vector<double> out(K + 1, 0.0);
    for (std::size_t a = K; a-- > 0;) out[a] = out[a + 1] + term(a);
    return out;
  };
  const auto W = suffix([&](std::size_t a) { return w[a]; });
  const auto V = suffix([&](std::size_t a) { return w[a] * F1[a]; });
  const auto X = suffix([&](std::size_t a) { return w[a] * p[a] * F0[a]; });
  const auto Zp = suffix([&](std::size_t a) { return w[a] * p[a]; });
  const auto Zf = suffix([&](std::size_t a) { return w[a] * p[a] * F0[a]; });

  auto grid_pos = [&](double t) {
    return static_cast<std::size_t>(std::lower_bound(fit.grid.begin(), fit.grid.end(), t) - fit.grid.begin());
  };

  double total = 0.0;

  // Kaplan-Meier and incidence terms, summed per product-limit event.
  const ProductLimitMoments mom(fit.components);
  for (std::size_t k = 0; k < mom.times.size(); ++k) {
    const std::size_t gk = grid_pos(mom.times[k]);
    const double Wk = W[gk], Xk = X[gk], Hk = V[gk] - mom.f1_at[k] * W[gk];
    const double dG = mom.greenwood[k] - (k ? mom.greenwood[k - 1] : 0.0);
    total += n * dG * Xk * Xk;
    total += mom.w_alpha[k] * Wk * Wk - 2.0 * mom.w_beta[k] * Hk * Wk + mom.w_gamma[k] * Hk * Hk;
    total += -2.0 * (mom.w_beta[k] * Xk * Wk - mom.w_gamma[k] * Xk * Hk);
  }

  // Proportion-process variance term.
  std::vector<double> c(K, 0.0), y(K, 0.0);
  double c_pji = 0.0, y_pi = 0.0;
  for (std::size_t a = 0; a < K; ++a) {
    if (fit.p_I[a] > 0.0) {
      c[a] = w[a] * F0[a] / fit.p_I[a];
    } else if (w[a] > 0.0 && diag) {
      ++diag->zero_risk_cells;
    }
    y[a] = c[a] * p[a];
    c_pji += c[a] * fit.p_JI[a];
    y_pi += y[a] * fit.p_I[a];
  }
  std::vector<double> cum_c(K + 1, 0.0), cum_y(K + 1, 0.0);
  for (std::size_t a = 0; a < K; ++a) {
    cum_c[a + 1] = cum_c[a] + c[a];
    cum_y[a + 1] = cum_y[a] + y[a];
  }
  const StateSet transient_target = fit.J - fit.sets.sure;
  double sum_sq = 0.0, sum_cross = 0.0;
  for (const auto& m : fit.members) {
    if (!(m.at_risk_end > fit.s)) continue;
    double in_target = 0.0;
    const auto& jumps = m.path->jumps;
    for (std::size_t k = 0; k < jumps.size(); ++k) {
      if (!transient_target.contains(jumps[k].state)) continue;
      const double lo = std::max(jumps[k].time, fit.s);
      const double hi = std::min(k + 1 < jumps.size() ? jumps[k + 1].time : kInfinity, m.at_risk_end);
      if (!(hi > lo) || lo > fit.tau) continue;
      in_target += cum_c[grid_pos(hi)] - cum_c[grid_pos(lo)];
    }
    const double risk = cum_y[grid_pos(m.at_risk_end)];
    sum_sq += in_target * in_target;
    sum_cross += in_target * risk;
  }
  double pI_max = 0.0;
  for (std::size_t g = 0; g < K; ++g) pI_max += fit.p_I[g] * (y[g] * y[g] + 2.0 * y[g] * cum_y[g]);
  total += sum_sq / n - c_pji * c_pji;
  total += pI_max - y_pi * y_pi;
  total -= 2.0 * (sum_cross / n - c_pji * y_pi);

  // Cross terms with the proportion process, conditioning on J-occupancy at grid[b].
  const bool has_sure = !fit.sets.sure.empty();
  for (std::size_t b = 0; b + 1 < K; ++b) {
    if (!(fit.p_I[b] > 0.0) || w[b] == 0.0) continue;
    const auto cond = conditional_on_target(fit, fit.grid[b]);
    const double scale = w[b] * F0[b] / fit.p_I[b];
    double sum_km = 0.0, sum_cif = 0.0;
    if (cond.at_risk > 0) {
      // Step curves restart at grid[b]; walk their knots over the later cells.
      const auto& est = cond.from_u;
      std::size_t cursor = b + 1;
      double km = 1.0, cif = 0.0;
      for (std::size_t k = 0; k < est.event_times.size(); ++k) {
        const std::size_t gk = grid_pos(est.event_times[k]);
        if (gk < cursor) {
          km = est.F0.values()[k];
          cif = est.F1.values()[k];
          continue;
        }
        sum_km += km * (Zp[cursor] - Zp[gk]);
        sum_cif += cif * (W[cursor] - W[gk]);
        cursor = gk;
        km = est.F0.values()[k];
        cif = est.F1.values()[k];
      }
      sum_km += km * Zp[cursor];
      sum_cif += cif * W[cursor];
    } else if (cond.observed == 0 && diag) {
      ++diag->empty_subsubgroups;
    }
    const double m = static_cast<double>(cond.observed);
    const double rho0 = cond.observed ? static_cast<double>(cond.at_risk) / m : 0.0;
    const double rho1 = cond.observed ? static_cast<double>(cond.absorbed) / m : 0.0;
    const double P = fit.estimate[b];
    total += 2.0 * scale * (rho0 * P * sum_km - p[b] * Zf[b + 1]);
    if (has_sure) {
      const double later_f1 = V[b + 1];
      total += 2.0 * scale *
               ((rho1 * P - F1[b] + p[b] * F1[b]) * W[b + 1] + rho0 * P * sum_cif - p[b] * later_f1);
    }
  }
  return clamp_variance(total, diag);
}

namespace detail {

/// Column vectors P(u_e, t) 1_J for every AJ event e with u_e <= t (index e).
inline std::vector<Eigen::VectorXd> aj_target_columns(const AalenJohansenFit& fit, StateSet J, double t) {
  const std::size_t E = fit.events_through(t);
  const int S = fit.n_states();
  Eigen::VectorXd target = Eigen::VectorXd::Zero(S);
  for (int j = 0; j < S; ++j)
    if (J.contains(j)) target(j) = 1.0;
  std::vector<Eigen::VectorXd> cols(E);
  if (E == 0) return cols;
  cols[E - 1] = target;
  for (std::size_t e = E - 1; e-- > 0;)
    cols[e] = (Eigen::MatrixXd::Identity(S, S) + fit.increments()[e + 1]) * cols[e + 1];
  return cols;
}

/// Occupation vector pi' P(s, u_e-) for every event e.
inline std::vector<Eigen::VectorXd> aj_start_rows(const AalenJohansenFit& fit, StateSet I) {
  const Eigen::VectorXd pi = fit.start_weights(I);
  std::vector<Eigen::VectorXd> rows(fit.times().size());
  Eigen::RowVectorXd cur = pi.transpose();
  for (std::size_t e = 0; e < rows.size(); ++e) {
    rows[e] = cur.transpose();
    cur = cur * (Eigen::MatrixXd::Identity(fit.n_states(), fit.n_states()) + fit.increments()[e]);
  }
  return rows;
}

/// n * N_jk / Y_j^2 * q_j^2 weights, one (j, k) matrix per event.
inline double aj_event_weight(const AalenJohansenFit& fit, const Eigen::VectorXd& q, std::size_t e, int j, int k) {
  const double y = fit.at_risk()[e][static_cast<std::size_t>(j)];
  const double count = fit.transition_counts()[e](j, k);
  if (count == 0.0 || y <= 0.0) return 0.0;
  return static_cast<double>(fit.n_total()) * q(j) * q(j) * count / (y * y);
}

}  // namespace detail

/// Plug-in asymptotic covariance of sqrt(n) times the Aalen-Johansen estimate of
/// P(X(.) in J | X(s) in I) at (r, t), treating the start weights over I as fixed.
inline double aj_gamma(const AalenJohansenFit& fit, StateSet I, StateSet J, double r, double t) {
  const double lo = std::min(r, t);
  const std::size_t E = fit.events_through(lo);
  if (E == 0) return 0.0;
  const auto cols_r = detail::aj_target_columns(fit, J, r);
  const auto cols_t = detail::aj_target_columns(fit, J, t);
  const auto rows = detail::aj_start_rows(fit, I);
  const int S = fit.n_states();
  double total = 0.0;
  for (std::size_t e = 0; e < E; ++e)
    for (int j = 0; j < S; ++j)
      for (int k = 0; k < S; ++k) {
        if (k == j) continue;
        const double wgt = detail::aj_event_weight(fit, rows[e], e, j, k);
        if (wgt == 0.0) continue;
        total += wgt * (cols_t[e](k) - cols_t[e](j)) * (cols_r[e](k) - cols_r[e](j));
      }
  return total;
}

/// Double integral of aj_gamma over [s, tau]^2 via backward recursion on
/// h(e) = integral_{u_e}^{tau} P(u_e, t) 1_J dt.
inline double aj_elos_variance(const AalenJohansenFit& fit, StateSet I, StateSet J) {
  const std::size_t E = fit.times().size();
  if (E == 0) return 0.0;
  const int S = fit.n_states();
  Eigen::VectorXd target = Eigen::VectorXd::Zero(S);
  for (int j = 0; j < S; ++j)
    if (J.contains(j)) target(j) = 1.0;
  std::vector<Eigen::VectorXd> h(E);
  h[E - 1] = (fit.tau() - fit.times()[E - 1]) * target;
  for (std::size_t e = E - 1; e-- > 0;)
    h[e] = (fit.times()[e + 1] - fit.times()[e]) * target +
           (Eigen::MatrixXd::Identity(S, S) + fit.increments()[e + 1]) * h[e + 1];
  const auto rows = detail::aj_start_rows(fit, I);
  double total = 0.0;
  for (std::size_t e = 0; e < E; ++e)
    for (int j = 0; j < S; ++j)
      for (int k = 0; k < S; ++k) {
        if (k == j) continue;
        const double wgt = detail::aj_event_weight(fit, rows[e], e, j, k);
        if (wgt == 0.0) continue;
        const double diff = h[e](k) - h[e](j);
        total += wgt * diff * diff;
      }
  return total;
}

/// aj_gamma tabulated on a grid in [s, tau].
inline CovSurface aj_gamma_surface(const AalenJohansenFit& fit, StateSet I, StateSet J, std::vector<double> grid) {
  CovSurface out;
  const auto K = static_cast<Eigen::Index>(grid.size());
  out.values = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index a = 0; a < K; ++a)
    for (Eigen::Index b = a; b < K; ++b) {
      const double v = aj_gamma(fit, I, J, grid[static_cast<std::size_t>(a)], grid[static_cast<std::size_t>(b)]);
      out.values(a, b) = v;
      out.values(b, a) = v;
    }
  out.grid = std::move(grid);
  return out;
}

/// CSV with a header row of grid times and one row per grid time.
inline void write_csv(std::ostream& os, const CovSurface& surface) {
  char buf[32];
  os << "t";
  for (double g : surface.grid) {
    std::snprintf(buf, sizeof buf, "%.17g", g);
    os << ',' << buf;
  }
  os << '\n';
  for (std::size_t a = 0; a < surface.grid.size(); ++a) {
    std::snprintf(buf, sizeof buf, "%.17g", surface.grid[a]);
    os << buf;
    for (std::size_t b = 0; b < surface.grid.size(); ++b) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    surface.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace nonmarkov
