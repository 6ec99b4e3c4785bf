#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "nonmarkov/errors.hpp"
#include "nonmarkov/multistate.hpp"
#include "nonmarkov/parallel.hpp"
#include "nonmarkov/random.hpp"

namespace nonmarkov {

struct BootstrapConfig {
  std::size_t B = 1000;
  std::uint64_t seed = 1;
  bool parallel = true;
  double max_failure_fraction = 0.10;

  void validate() const {
    if (B < 1) throw ValidationError("bootstrap needs B >= 1");
  }
};

/// Successful replicate values in replicate order plus the failure count.
template <class T>
struct BootstrapDraws {
  std::vector<T> values;
  std::vector<std::size_t> replicate;
  std::size_t requested = 0;
  std::size_t failed = 0;

  std::size_t size() const noexcept { return values.size(); }
};

/// n row indices drawn uniformly with replacement.
inline std::vector<std::size_t> resample_rows(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = pick(rng);
  return rows;
}

inline Sample resample(const Sample& sample, Rng& rng) {
  if (sample.paths.empty()) throw ValidationError("cannot resample an empty sample");
  Sample out;
  out.state_space = sample.state_space;
  out.paths.reserve(sample.paths.size());
  for (std::size_t r : resample_rows(sample.paths.size(), rng)) out.paths.push_back(sample.paths[r]);
  return out;
}

/// Evaluates stat(sample, rows) on B resampled row sets. Replicate b uses the
/// stream (cfg.seed, b), so results do not depend on scheduling. A replicate
/// fails when stat throws a library Error; failures are excluded and counted.
template <class Stat>
auto bootstrap_rows(const Sample& sample, Stat&& stat, const BootstrapConfig& cfg)
    -> BootstrapDraws<std::decay_t<decltype(stat(sample, std::span<const std::size_t>{}))>> {
  using T = std::decay_t<decltype(stat(sample, std::span<const std::size_t>{}))>;
  cfg.validate();
  if (sample.paths.empty()) throw ValidationError("cannot resample an empty sample");
  std::vector<std::optional<T>> slots(cfg.B);
  parallel_for(
      cfg.B,
      [&](std::size_t b) {
        Rng rng = make_stream(cfg.seed, b);
        const auto rows = resample_rows(sample.paths.size(), rng);
        try {
          slots[b] = stat(sample, std::span<const std::size_t>(rows));
        } catch (const Error&) {
          slots[b].reset();
        }
      },
      cfg.parallel);
  BootstrapDraws<T> draws;
  draws.requested = cfg.B;
  for (std::size_t b = 0; b < cfg.B; ++b) {
    if (slots[b]) {
      draws.values.push_back(std::move(*slots[b]));
      draws.replicate.push_back(b);
    } else {
      ++draws.failed;
    }
  }
  if (static_cast<double>(draws.failed) > cfg.max_failure_fraction * static_cast<double>(cfg.B))
    throw TooManyFailures(draws.failed, cfg.B);
  return draws;
}

/// Same as bootstrap_rows for a statistic of a materialised resample.
template <class Stat>
auto bootstrap_statistic(const Sample& sample, Stat&& stat, const BootstrapConfig& cfg) {
  return bootstrap_rows(
      sample,
      [&](const Sample& base, std::span<const std::size_t> rows) {
        Sample star;
        star.state_space = base.state_space;
        star.paths.reserve(rows.size());
        for (std::size_t r : rows) star.paths.push_back(base.paths[r]);
        return stat(static_cast<const Sample&>(star));
      },
      cfg);
}

/// Linear interpolation between order statistics (R type 7).
inline double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of an empty set");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline std::pair<double, double> percentile_ci(const std::vector<double>& draws, double alpha) {
  if (draws.size() < 2) throw ValidationError("percentile interval needs at least 2 draws");
  return {quantile_type7(draws, alpha / 2.0), quantile_type7(draws, 1.0 - alpha / 2.0)};
}

/// Studentized interval from draws t*_b = (theta*_b - theta) / se*_b.
inline std::pair<double, double> bootstrap_t_ci(double point, double se, const std::vector<double>& draws_t,
                                                double alpha) {
  if (!(se > 0.0)) throw NonpositiveSE();
  if (draws_t.empty()) throw ValidationError("bootstrap-t interval needs draws");
  return {point - quantile_type7(draws_t, 1.0 - alpha / 2.0) * se, point - quantile_type7(draws_t, alpha / 2.0) * se};
}

/// 1 - alpha quantile of the per-replicate supremum of |curve| over the shared grid.
inline double sup_quantile(const std::vector<std::vector<double>>& curves, double alpha) {
  if (curves.empty()) throw ValidationError("sup quantile needs draws");
  std::vector<double> sups;
  sups.reserve(curves.size());
  const std::size_t K = curves.front().size();
  for (const auto& c : curves) {
    if (c.size() != K) throw ValidationError("bootstrap curves must share a grid");
    double m = 0.0;
    for (double v : c) m = std::max(m, std::abs(v));
    sups.push_back(m);
  }
  return quantile_type7(std::move(sups), 1.0 - alpha);
}

}  // namespace nonmarkov
