#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "nonmarkov/errors.hpp"
#include "nonmarkov/multistate.hpp"
#include "nonmarkov/step_function.hpp"

namespace nonmarkov {

/// Kaplan-Meier and cumulative incidence curves of the reduced competing-risks
/// process in one subgroup, plus the product-limit ingredients they were built
/// from (needed by the plug-in covariances).
struct SubgroupEstimate {
  StepFunction F0;  ///< probability of no absorbing entry yet
  StepFunction F1;  ///< cumulative incidence of entry into the sure set
  StepFunction F2;  ///< cumulative incidence of entry into the excluded set
  std::size_t n_subgroup = 0;
  std::size_t n_total = 0;

  std::vector<double> event_times;
  std::vector<double> at_risk;
  std::vector<double> events;
  std::vector<double> events_sure;
  std::vector<double> events_excluded;
};

/// Product-limit estimates over records of one subgroup. `n_total` is the full
/// sample size used to normalise covariances; it defaults to the record count.
inline SubgroupEstimate product_limit(std::span<const CompetingRisksRecord> records, double s, double tau,
                                      std::size_t n_total = 0) {
  if (records.empty()) throw EmptySubgroup();
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].exit_time < records[b].exit_time; });

  SubgroupEstimate est;
  est.n_subgroup = records.size();
  est.n_total = n_total == 0 ? records.size() : n_total;
  est.F0 = StepFunction(s, tau, 1.0);
  est.F1 = StepFunction(s, tau, 0.0);
  est.F2 = StepFunction(s, tau, 0.0);

  double f0 = 1.0, f1 = 0.0, f2 = 0.0;
  std::size_t remaining = records.size();
  for (std::size_t k = 0; k < order.size();) {
    const double u = records[order[k]].exit_time;
    if (u < s) throw ValidationError("record exit time precedes s");
    std::size_t d1 = 0, d2 = 0, group = 0;
    for (; k < order.size() && records[order[k]].exit_time == u; ++k, ++group) {
      const auto& r = records[order[k]];
      if (!r.observed) continue;
      if (r.cause == Cause::to_sure) ++d1;
      else if (r.cause == Cause::to_excluded) ++d2;
    }
    const std::size_t d = d1 + d2;
    if (d > 0 && u <= tau) {
      const double y = static_cast<double>(remaining);
      f1 += f0 * static_cast<double>(d1) / y;
      f2 += f0 * static_cast<double>(d2) / y;
      f0 *= 1.0 - static_cast<double>(d) / y;
      est.F0.push_back(u, f0);
      est.F1.push_back(u, f1);
      est.F2.push_back(u, f2);
      est.event_times.push_back(u);
      est.at_risk.push_back(y);
      est.events.push_back(static_cast<double>(d));
      est.events_sure.push_back(static_cast<double>(d1));
      est.events_excluded.push_back(static_cast<double>(d2));
    }
    remaining -= group;
  }
  return est;
}

inline StepFunction kaplan_meier(std::span<const CompetingRisksRecord> records, double s, double tau) {
  return product_limit(records, s, tau).F0;
}

/// Aalen-Johansen cumulative incidence for one cause: F(t) = sum F0(u-) dA(u).
inline StepFunction aj_cif(std::span<const CompetingRisksRecord> records, Cause cause, double s, double tau) {
  auto est = product_limit(records, s, tau);
  switch (cause) {
    case Cause::to_sure: return est.F1;
    case Cause::to_excluded: return est.F2;
    case Cause::none: break;
  }
  throw std::invalid_argument("aj_cif: cause must be to_sure or to_excluded");
}

/// Indices of subjects observed in I at s (state_at(s) in I, censor_time > s).
inline std::vector<std::size_t> select_subgroup(const Sample& sample, double s, StateSet I) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sample.paths.size(); ++i) {
    const auto x = state_at(sample.paths[i], s);
    if (x && I.contains(*x)) out.push_back(i);
  }
  if (out.empty()) throw EmptySubgroup();
  return out;
}

/// Fraction of subjects in I at s and still at risk at t that occupy J at t.
/// Throws UndefinedProportion when nobody is at risk at t.
inline double empirical_proportion(const Sample& sample, double s, StateSet I, StateSet J, double t) {
  if (t < s) throw ValidationError("empirical_proportion requires t >= s");
  const auto sets = derive_absorbing_sets(sample.state_space, J);
  const StateSet absorbing = sets.sure | sets.excluded;
  std::size_t num = 0, den = 0;
  for (const auto& path : sample.paths) {
    const auto xs = state_at(path, s);
    if (!xs || !I.contains(*xs)) continue;
    const auto xt = state_at(path, t);
    if (!xt || absorbing.contains(*xt)) continue;
    ++den;
    if (J.contains(*xt)) ++num;
  }
  if (den == 0) throw UndefinedProportion(t);
  return static_cast<double>(num) / static_cast<double>(den);
}

/// Non-Markov transition probability estimate P(s, .) together with its pieces.
struct TransitionCurve {
  StepFunction estimate;
  StepFunction p_cond;
  SubgroupEstimate components;
  double s = 0.0;
  double tau = 0.0;
};

struct SubgroupMember {
  const SubjectPath* path = nullptr;
  CompetingRisksRecord record;
  double at_risk_end = 0.0;  ///< min(entry into sure or excluded set, censor_time)
};

/// Everything the estimator and its plug-in covariances need about the
/// subgroup observed in I at s, tabulated on the evaluation grid.
///
/// The grid is the sorted union of s, tau and every jump or censoring time of a
/// subgroup member inside (s, tau]; every estimated curve is constant between
/// consecutive grid points. The fit refers to the paths of the sample it was
/// built from and must not outlive it.
struct SubgroupFit {
  double s = 0.0;
  double tau = 0.0;
  StateSet I, J;
  AbsorbingSets sets;
  std::size_t n_total = 0;
  std::vector<SubgroupMember> members;

  std::vector<double> grid;
  std::vector<int> at_risk_count;   ///< subgroup members at risk at grid[g]
  std::vector<int> in_target_count; ///< ... of which in J at grid[g]
  std::vector<double> p_I, p_JI, p_cond, F0, F1, F2, estimate;

  SubgroupEstimate components;

  std::size_t grid_size() const noexcept { return grid.size(); }

  /// Index of the last grid point <= t.
  std::size_t grid_index(double t) const {
    if (t < s || t > tau) throw ValidationError("time outside [s, tau]");
    auto it = std::upper_bound(grid.begin(), grid.end(), t);
    return static_cast<std::size_t>(it - grid.begin()) - 1;
  }

  /// Cell widths grid[g+1]-grid[g]; the final point (tau) has width 0.
  std::vector<double> cell_widths() const {
    std::vector<double> w(grid.size(), 0.0);
    for (std::size_t g = 0; g + 1 < grid.size(); ++g) w[g] = grid[g + 1] - grid[g];
    return w;
  }

  TransitionCurve curve() const {
    TransitionCurve c;
    c.s = s;
    c.tau = tau;
    c.estimate = StepFunction(s, tau, estimate.front());
    c.p_cond = StepFunction(s, tau, p_cond.front());
    for (std::size_t g = 1; g < grid.size(); ++g) {
      c.estimate.push_back(grid[g], estimate[g]);
      c.p_cond.push_back(grid[g], p_cond[g]);
    }
    c.components = components;
    return c;
  }
};

inline SubgroupFit fit_subgroup(const Sample& sample, std::span<const std::size_t> rows, double s, StateSet I,
                                StateSet J, double tau) {
  if (!(s < tau)) throw ValidationError("estimation requires s < tau");
  if (I.empty()) throw ValidationError("starting set must be nonempty");
  SubgroupFit fit;
  fit.s = s;
  fit.tau = tau;
  fit.I = I;
  fit.J = J;
  fit.sets = derive_absorbing_sets(sample.state_space, J);
  fit.n_total = rows.size();
  const StateSet absorbing = fit.sets.sure | fit.sets.excluded;

  std::vector<CompetingRisksRecord> records;
  fit.grid.push_back(s);
  fit.grid.push_back(tau);
  for (std::size_t row : rows) {
    const SubjectPath& path = sample.paths[row];
    const auto rec = reduce_to_competing_risks(path, s, I, fit.sets, tau);
    if (!rec.at_risk_at_s || !rec.in_I_at_s) continue;
    SubgroupMember m;
    m.path = &path;
    m.record = rec;
    m.at_risk_end = std::min(first_entry_time(path, s, absorbing), path.censor_time);
    fit.members.push_back(m);
    records.push_back(rec);
    for (const auto& j : path.jumps)
      if (j.time > s && j.time <= tau) fit.grid.push_back(j.time);
    if (path.censor_time > s && path.censor_time <= tau) fit.grid.push_back(path.censor_time);
  }
  if (fit.members.empty()) throw EmptySubgroup();
  std::sort(fit.grid.begin(), fit.grid.end());
  fit.grid.erase(std::unique(fit.grid.begin(), fit.grid.end()), fit.grid.end());

  const std::size_t K = fit.grid.size();
  auto first_at_or_after = [&](double t) {
    return static_cast<std::size_t>(std::lower_bound(fit.grid.begin(), fit.grid.end(), t) - fit.grid.begin());
  };
  std::vector<int> den_diff(K + 1, 0), num_diff(K + 1, 0);
  const StateSet transient_target = J - fit.sets.sure;
  for (const auto& m : fit.members) {
    if (!(m.at_risk_end > s)) continue;
    den_diff[0] += 1;
    den_diff[first_at_or_after(m.at_risk_end)] -= 1;
    const auto& jumps = m.path->jumps;
    for (std::size_t k = 0; k < jumps.size(); ++k) {
      if (!transient_target.contains(jumps[k].state)) continue;
      const double a = std::max(jumps[k].time, s);
      const double b = std::min(k + 1 < jumps.size() ? jumps[k + 1].time : kInfinity, m.at_risk_end);
      if (!(b > a) || a > tau) continue;
      num_diff[first_at_or_after(a)] += 1;
      num_diff[first_at_or_after(b)] -= 1;
    }
  }

  fit.components = product_limit(records, s, tau, fit.n_total);
  const double n = static_cast<double>(fit.n_total);
  fit.at_risk_count.resize(K);
  fit.in_target_count.resize(K);
  fit.p_I.resize(K);
  fit.p_JI.resize(K);
  fit.p_cond.resize(K);
  fit.F0.resize(K);
  fit.F1.resize(K);
  fit.F2.resize(K);
  fit.estimate.resize(K);
  int den = 0, num = 0;
  double last_defined = 0.0;
  for (std::size_t g = 0; g < K; ++g) {
    den += den_diff[g];
    num += num_diff[g];
    fit.at_risk_count[g] = den;
    fit.in_target_count[g] = num;
    fit.p_I[g] = den / n;
    fit.p_JI[g] = num / n;
    if (den > 0) last_defined = static_cast<double>(num) / static_cast<double>(den);
    fit.p_cond[g] = last_defined;
    fit.F0[g] = fit.components.F0(fit.grid[g]);
    fit.F1[g] = fit.components.F1(fit.grid[g]);
    fit.F2[g] = fit.components.F2(fit.grid[g]);
    fit.estimate[g] = fit.F1[g] + fit.F0[g] * fit.p_cond[g];
  }
  return fit;
}

inline SubgroupFit fit_subgroup(const Sample& sample, double s, StateSet I, StateSet J, double tau) {
  std::vector<std::size_t> rows(sample.paths.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return fit_subgroup(sample, rows, s, I, J, tau);
}

/// P(s,t) = F1(t) + F0(t) p(J | I)(t) on [s, tau].
inline TransitionCurve titman_estimate(const Sample& sample, double s, StateSet I, StateSet J, double tau) {
  return fit_subgroup(sample, s, I, J, tau).curve();
}

/// Markov Aalen-Johansen product integral over the full sample, from s on.
class AalenJohansenFit {
 public:
  AalenJohansenFit(const Sample& sample, std::span<const std::size_t> rows, double s, double tau)
      : s_(s), tau_(tau), n_states_(sample.state_space.n_states), n_total_(rows.size()),
        initial_counts_(static_cast<std::size_t>(sample.state_space.n_states), 0.0) {
    if (!(s < tau)) throw ValidationError("estimation requires s < tau");
    struct Event {
      double time;
      State from;
      State to;  // -1 for censoring
    };
    std::vector<Event> events;
    for (std::size_t row : rows) {
      const SubjectPath& path = sample.paths[row];
      const auto xs = state_at(path, s);
      if (!xs) continue;
      initial_counts_[static_cast<std::size_t>(*xs)] += 1.0;
      State cur = *xs;
      for (std::size_t k = 1; k < path.jumps.size(); ++k) {
        const Jump& j = path.jumps[k];
        if (j.time <= s) continue;
        if (j.time > tau || !(j.time < path.censor_time)) break;
        events.push_back({j.time, cur, j.state});
        cur = j.state;
      }
      if (path.censor_time <= tau) events.push_back({path.censor_time, cur, -1});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.time < b.time; });

    const auto S = static_cast<Eigen::Index>(n_states_);
    std::vector<double> at_risk = initial_counts_;
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(S, S);
    for (std::size_t k = 0; k < events.size();) {
      const double u = events[k].time;
      Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(S, S);
      std::size_t end = k;
      bool any = false;
      for (; end < events.size() && events[end].time == u; ++end) {
        if (events[end].to >= 0) {
          counts(events[end].from, events[end].to) += 1.0;
          any = true;
        }
      }
      if (any) {
        Eigen::MatrixXd dA = Eigen::MatrixXd::Zero(S, S);
        for (Eigen::Index j = 0; j < S; ++j) {
          const double y = at_risk[static_cast<std::size_t>(j)];
          if (y <= 0.0) continue;
          for (Eigen::Index l = 0; l < S; ++l)
            if (l != j) dA(j, l) = counts(j, l) / y;
          dA(j, j) = -dA.row(j).sum();
        }
        P = P * (Eigen::MatrixXd::Identity(S, S) + dA);
        times_.push_back(u);
        increments_.push_back(dA);
        counts_.push_back(counts);
        risk_.push_back(at_risk);
        cumulative_.push_back(P);
      }
      for (; k < end; ++k) {
        at_risk[static_cast<std::size_t>(events[k].from)] -= 1.0;
        if (events[k].to >= 0) at_risk[static_cast<std::size_t>(events[k].to)] += 1.0;
      }
    }
  }

  AalenJohansenFit(const Sample& sample, double s, double tau)
      : AalenJohansenFit(sample, all_rows(sample), s, tau) {}

  double s() const noexcept { return s_; }
  double tau() const noexcept { return tau_; }
  int n_states() const noexcept { return n_states_; }
  std::size_t n_total() const noexcept { return n_total_; }
  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<Eigen::MatrixXd>& increments() const noexcept { return increments_; }
  const std::vector<Eigen::MatrixXd>& transition_counts() const noexcept { return counts_; }
  const std::vector<std::vector<double>>& at_risk() const noexcept { return risk_; }
  const std::vector<double>& initial_counts() const noexcept { return initial_counts_; }

  /// Number of event times <= t.
  std::size_t events_through(double t) const {
    return static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t) - times_.begin());
  }

  /// P(s, t); identity for t < first event.
  Eigen::MatrixXd transition(double t) const {
    if (t < s_) throw ValidationError("transition requires t >= s");
    const std::size_t k = events_through(t);
    if (k == 0) return Eigen::MatrixXd::Identity(n_states_, n_states_);
    return cumulative_[k - 1];
  }

  /// P(s, t-).
  Eigen::MatrixXd transition_left(double t) const {
    auto it = std::lower_bound(times_.begin(), times_.end(), t);
    const auto k = static_cast<std::size_t>(it - times_.begin());
    if (k == 0) return Eigen::MatrixXd::Identity(n_states_, n_states_);
    return cumulative_[k - 1];
  }

  /// Occupation weights of the states in I among subjects observed at s.
  Eigen::VectorXd start_weights(StateSet I) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n_states_);
    double total = 0.0;
    for (int j = 0; j < n_states_; ++j)
      if (I.contains(j)) {
        w(j) = initial_counts_[static_cast<std::size_t>(j)];
        total += w(j);
      }
    if (total <= 0.0) throw EmptySubgroup();
    return w / total;
  }

  /// sum_{i in I} w_i sum_{j in J} P_ij(s, .) as a step function on [s, tau].
  StepFunction set_curve(StateSet I, StateSet J) const {
    const Eigen::VectorXd w = start_weights(I);
    auto value = [&](const Eigen::MatrixXd& P) {
      double v = 0.0;
      for (int i = 0; i < n_states_; ++i)
        for (int j = 0; j < n_states_; ++j)
          if (J.contains(j)) v += w(i) * P(i, j);
      return v;
    };
    StepFunction f(s_, tau_, value(Eigen::MatrixXd::Identity(n_states_, n_states_)));
    for (std::size_t k = 0; k < times_.size(); ++k) f.push_back(times_[k], value(cumulative_[k]));
    return f;
  }

 private:
  static std::vector<std::size_t> all_rows(const Sample& sample) {
    std::vector<std::size_t> rows(sample.paths.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return rows;
  }

  double s_, tau_;
  int n_states_;
  std::size_t n_total_;
  std::vector<double> initial_counts_;
  std::vector<double> times_;
  std::vector<Eigen::MatrixXd> increments_;
  std::vector<Eigen::MatrixXd> counts_;
  std::vector<std::vector<double>> risk_;
  std::vector<Eigen::MatrixXd> cumulative_;
};

/// Aalen-Johansen estimate of the full transition matrix P(s, t).
inline Eigen::MatrixXd aj_markov_transition(const Sample& sample, double s, double t) {
  if (t < s) throw ValidationError("aj_markov_transition requires s <= t");
  if (t == s) return Eigen::MatrixXd::Identity(sample.state_space.n_states, sample.state_space.n_states);
  return AalenJohansenFit(sample, s, t).transition(t);
}

}  // namespace nonmarkov
