#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nonmarkov/bands.hpp"
#include "nonmarkov/bootstrap.hpp"
#include "nonmarkov/elos.hpp"
#include "nonmarkov/estimators.hpp"
#include "nonmarkov/parallel.hpp"
#include "nonmarkov/random.hpp"
#include "nonmarkov/simulator.hpp"

namespace nonmarkov {

/// Monte Carlo study of interval and band coverage under a switch model.
struct CoverageConfig {
  SwitchModel model = SwitchModel::standard();
  std::size_t n = 200;
  std::size_t replicates = 1000;
  std::size_t B = 200;
  std::uint64_t seed = 1;
  double s = 5.0;
  double tau = 30.0;
  double alpha = 0.05;
  double t1 = 6.0;
  double t2 = 7.0;
  State from = 1;
  StateSet to{0};
  bool elos_study = true;
  bool band_study = true;
  bool parallel = true;
  std::size_t truth_points = 1000;  ///< dense check points for band coverage on (t1, t2]

  void validate() const {
    model.validate();
    if (n < 1 || replicates < 1 || B < 2) throw ValidationError("coverage study needs n, replicates >= 1 and B >= 2");
    if (!(s >= model.switch_time && s < t1 && t1 < t2 && t2 <= tau))
      throw ValidationError("coverage study needs switch_time <= s < t1 < t2 <= tau");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must be in (0, 1)");
  }
};

/// Hit rate over the replicates where the method could be computed.
struct CoverageCell {
  std::size_t hits = 0;
  std::size_t used = 0;
  std::size_t failed = 0;
  double rate() const { return used ? static_cast<double>(hits) / static_cast<double>(used) : std::nan(""); }
};

struct BiasCell {
  double sum = 0.0;
  std::size_t used = 0;
  std::size_t failed = 0;
  double mean() const { return used ? sum / static_cast<double>(used) : std::nan(""); }
};

struct CoverageSummary {
  std::size_t n = 0, replicates = 0, B = 0;
  std::uint64_t seed = 0;
  double truth_elos = 0.0;
  BiasCell bias_AJ, bias_NM;
  CoverageCell wald_AJ, wald_NM, naive_boot, boot_t;
  CoverageCell hw, ep, naive, aj_ep;
};

/// Per-replicate outcome; an empty optional means the method failed.
struct ReplicateOutcome {
  std::optional<double> err_AJ, err_NM;
  std::optional<bool> wald_AJ, wald_NM, naive_boot, boot_t;
  std::optional<bool> hw, ep, naive, aj_ep;
};

namespace detail {

/// Truth P(s, t) with the mixture weights computed once.
class TruthCurve {
 public:
  explicit TruthCurve(const TruthOracle& oracle) : oracle_(oracle), weights_(oracle.mixture_weights()) {
    for (double w : weights_) total_ += w;
  }
  double operator()(double t) const {
    double num = 0.0;
    for (State x = 0; x < 3; ++x) {
      const double w = weights_[static_cast<std::size_t>(x)];
      if (w == 0.0) continue;
      num += w * target_mass(matrix_exp(oracle_.model.after_switch(x), t - oracle_.s), oracle_.from, oracle_.to);
    }
    return num / total_;
  }

 private:
  TruthOracle oracle_;
  std::vector<double> weights_;
  double total_ = 0.0;
};

/// True iff lower <= truth <= upper everywhere on (t1, t2]. The band is a step
/// function on its grid; it is checked at every knot and at the dense points.
inline bool band_covers(const ConfidenceBand& band, const std::vector<double>& dense_t,
                        const std::vector<double>& dense_truth, const TruthCurve& truth) {
  auto inside = [&](double t, double value) {
    const auto it = std::upper_bound(band.grid.begin(), band.grid.end(), t);
    const auto g = static_cast<std::size_t>(it - band.grid.begin()) - 1;
    return band.lower[g] <= value && value <= band.upper[g];
  };
  for (std::size_t k = 1; k < band.grid.size(); ++k)
    if (!inside(band.grid[k], truth(band.grid[k]))) return false;
  for (std::size_t k = 0; k < dense_t.size(); ++k)
    if (!inside(dense_t[k], dense_truth[k])) return false;
  return true;
}

struct StudyDraw {
  double elos = 0.0;
  double variance = 0.0;
  PointwiseCurve nm, aj;
};

}  // namespace detail

inline ReplicateOutcome run_coverage_replicate(const CoverageConfig& cfg, std::size_t r, double truth_elos,
                                               const detail::TruthCurve& truth, const std::vector<double>& dense_t,
                                               const std::vector<double>& dense_truth) {
  ReplicateOutcome out;
  const StateSet I{cfg.from}, J = cfg.to;
  const Sample data = simulate_sample(cfg.model, cfg.n, stream_seed(cfg.seed, r), false);
  const double z = normal_quantile(1.0 - cfg.alpha / 2.0);
  const double rn = std::sqrt(static_cast<double>(cfg.n));

  std::optional<SubgroupFit> fit;
  try {
    fit.emplace(fit_subgroup(data, cfg.s, I, J, cfg.tau));
  } catch (const Error&) {
    return out;
  }
  std::optional<ElosResult> nm;
  if (cfg.elos_study) {
    try {
      nm = elos_result(*fit);
      out.err_NM = nm->estimate - truth_elos;
      const auto [lo, hi] = wald_ci(*nm, cfg.alpha);
      out.wald_NM = lo <= truth_elos && truth_elos <= hi;
    } catch (const Error&) {
    }
    try {
      const AalenJohansenFit aj(data, cfg.s, cfg.tau);
      const auto res = aj_elos_result(aj, I, J);
      out.err_AJ = res.estimate - truth_elos;
      const auto [lo, hi] = wald_ci(res, cfg.alpha);
      out.wald_AJ = lo <= truth_elos && truth_elos <= hi;
    } catch (const Error&) {
    }
  }

  std::vector<double> nm_grid, aj_grid;
  std::optional<PointwiseCurve> nm_hat, aj_hat;
  std::optional<AalenJohansenFit> aj_band_fit;
  if (cfg.band_study) {
    nm_grid = band_grid(fit->grid, cfg.t1, cfg.t2);
    try {
      nm_hat = pointwise(*fit, nm_grid);
    } catch (const Error&) {
    }
    try {
      aj_band_fit.emplace(data, cfg.s, cfg.t2);
      aj_grid = band_grid(aj_band_fit->times(), cfg.t1, cfg.t2);
      aj_hat = pointwise(*aj_band_fit, I, J, aj_grid);
    } catch (const Error&) {
      aj_hat.reset();
    }
  }

  BootstrapConfig boot{cfg.B, stream_seed(cfg.seed ^ 0xB0075742ULL, r), false};
  std::optional<BootstrapDraws<detail::StudyDraw>> draws;
  try {
    draws = bootstrap_rows(
        data,
        [&](const Sample& base, std::span<const std::size_t> rows) {
          detail::StudyDraw d;
          const auto star = fit_subgroup(base, rows, cfg.s, I, J, cfg.tau);
          if (cfg.elos_study) {
            d.elos = elos(star);
            d.variance = elos_variance(star);
          }
          if (cfg.band_study) {
            d.nm = pointwise(star, nm_grid);
            if (aj_hat) d.aj = pointwise(AalenJohansenFit(base, rows, cfg.s, cfg.t2), I, J, aj_grid);
          }
          return d;
        },
        boot);
  } catch (const Error&) {
    return out;
  }

  if (cfg.elos_study && nm) {
    std::vector<double> e(draws->size()), t;
    for (std::size_t b = 0; b < draws->size(); ++b) {
      const auto& d = draws->values[b];
      e[b] = d.elos;
      if (d.variance > 0.0) t.push_back((d.elos - nm->estimate) / std::sqrt(d.variance / static_cast<double>(cfg.n)));
    }
    const auto [plo, phi] = percentile_ci(e, cfg.alpha);
    out.naive_boot = plo <= truth_elos && truth_elos <= phi;
    try {
      if (static_cast<double>(cfg.B - t.size()) > boot.max_failure_fraction * static_cast<double>(cfg.B))
        throw TooManyFailures(cfg.B - t.size(), cfg.B);
      const auto [tlo, thi] = bootstrap_t_ci(nm->estimate, std::sqrt(nm->variance) / rn, t, cfg.alpha);
      out.boot_t = tlo <= truth_elos && truth_elos <= thi;
    } catch (const Error&) {
    }
  }

  if (cfg.band_study) {
    auto assess = [&](const std::vector<double>& grid, const std::optional<PointwiseCurve>& hat,
                      std::vector<PointwiseCurve> stars, const BandSpec& spec) -> std::optional<bool> {
      if (!hat) return std::nullopt;
      try {
        const auto band = assemble_band(grid, *hat, stars, cfg.n, spec, cfg.B, draws->failed);
        return detail::band_covers(band, dense_t, dense_truth, truth);
      } catch (const Error&) {
        return std::nullopt;
      }
    };
    std::vector<PointwiseCurve> nm_stars, aj_stars;
    nm_stars.reserve(draws->size());
    for (auto& d : draws->values) {
      nm_stars.push_back(d.nm);
      if (aj_hat) aj_stars.push_back(d.aj);
    }
    out.hw = assess(nm_grid, nm_hat, nm_stars, BandSpec{Transform::phi2, WeightKind::hw, cfg.t1, cfg.t2, cfg.alpha});
    out.ep = assess(nm_grid, nm_hat, nm_stars, BandSpec{Transform::phi2, WeightKind::ep, cfg.t1, cfg.t2, cfg.alpha});
    out.naive = assess(nm_grid, nm_hat, nm_stars,
                       BandSpec{Transform::identity, WeightKind::unit, cfg.t1, cfg.t2, cfg.alpha});
    out.aj_ep = assess(aj_grid, aj_hat, aj_stars, BandSpec{Transform::phi2, WeightKind::ep, cfg.t1, cfg.t2, cfg.alpha});
  }
  return out;
}

inline CoverageSummary run_coverage(const CoverageConfig& cfg, std::vector<ReplicateOutcome>* outcomes = nullptr) {
  cfg.validate();
  const TruthOracle oracle{cfg.model, cfg.s, cfg.from, cfg.to};
  const detail::TruthCurve truth(oracle);
  std::vector<double> dense_t, dense_truth;
  for (std::size_t k = 1; k <= cfg.truth_points; ++k) {
    const double t = cfg.t1 + (cfg.t2 - cfg.t1) * static_cast<double>(k) / static_cast<double>(cfg.truth_points);
    dense_t.push_back(t);
    dense_truth.push_back(truth(t));
  }
  CoverageSummary sum;
  sum.n = cfg.n;
  sum.replicates = cfg.replicates;
  sum.B = cfg.B;
  sum.seed = cfg.seed;
  sum.truth_elos = cfg.elos_study ? true_elos(oracle, cfg.tau) : std::nan("");

  std::vector<ReplicateOutcome> results(cfg.replicates);
  parallel_for(
      cfg.replicates,
      [&](std::size_t r) { results[r] = run_coverage_replicate(cfg, r, sum.truth_elos, truth, dense_t, dense_truth); },
      cfg.parallel);

  auto tally = [](CoverageCell& cell, const std::optional<bool>& v) {
    if (!v) {
      ++cell.failed;
      return;
    }
    ++cell.used;
    if (*v) ++cell.hits;
  };
  auto add = [](BiasCell& cell, const std::optional<double>& v) {
    if (!v) {
      ++cell.failed;
      return;
    }
    ++cell.used;
    cell.sum += *v;
  };
  for (const auto& o : results) {
    if (cfg.elos_study) {
      add(sum.bias_AJ, o.err_AJ);
      add(sum.bias_NM, o.err_NM);
      tally(sum.wald_AJ, o.wald_AJ);
      tally(sum.wald_NM, o.wald_NM);
      tally(sum.naive_boot, o.naive_boot);
      tally(sum.boot_t, o.boot_t);
    }
    if (cfg.band_study) {
      tally(sum.hw, o.hw);
      tally(sum.ep, o.ep);
      tally(sum.naive, o.naive);
      tally(sum.aj_ep, o.aj_ep);
    }
  }
  if (outcomes) *outcomes = std::move(results);
  return sum;
}

/// One header row and one value row; failure counts follow the rates.
inline void write_csv(std::ostream& out, const CoverageSummary& s) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "n,replicates,B,seed,truth_elos,bias_AJ,bias_NM,cov_wald_AJ,cov_wald_NM,cov_naive_boot,cov_boot_t,"
         "cov_hw,cov_ep,cov_naive,cov_aj_ep,fail_AJ,fail_NM,fail_wald_AJ,fail_wald_NM,fail_naive_boot,fail_boot_t,"
         "fail_hw,fail_ep,fail_naive,fail_aj_ep\n";
  out << s.n << ',' << s.replicates << ',' << s.B << ',' << s.seed << ',' << num(s.truth_elos) << ','
      << num(s.bias_AJ.mean()) << ',' << num(s.bias_NM.mean()) << ',' << num(s.wald_AJ.rate()) << ','
      << num(s.wald_NM.rate()) << ',' << num(s.naive_boot.rate()) << ',' << num(s.boot_t.rate()) << ','
      << num(s.hw.rate()) << ',' << num(s.ep.rate()) << ',' << num(s.naive.rate()) << ',' << num(s.aj_ep.rate())
      << ',' << s.bias_AJ.failed << ',' << s.bias_NM.failed << ',' << s.wald_AJ.failed << ',' << s.wald_NM.failed
      << ',' << s.naive_boot.failed << ',' << s.boot_t.failed << ',' << s.hw.failed << ',' << s.ep.failed << ','
      << s.naive.failed << ',' << s.aj_ep.failed << '\n';
}

}  // namespace nonmarkov
