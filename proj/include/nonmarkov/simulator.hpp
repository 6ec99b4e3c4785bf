#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "nonmarkov/errors.hpp"
#include "nonmarkov/multistate.hpp"
#include "nonmarkov/parallel.hpp"
#include "nonmarkov/random.hpp"

namespace nonmarkov {

using Generator = Eigen::Matrix3d;

/// Illness-death process with recovery whose intensities switch once: before
/// switch_time the base generator applies; from switch_time on, subjects then in
/// switch_state follow the switched generator and everyone else stays on base.
struct SwitchModel {
  Generator base_intensities;
  Generator switched_intensities;
  double switch_time = 4.0;
  State switch_state = 1;
  double censor_rate = 0.04;
  State initial_state = 0;
  double horizon = 31.0;  ///< paths are followed up to here at most

  static Generator make_generator(double l01, double l02, double l10, double l12) {
    Generator G;
    G << -(l01 + l02), l01, l02, l10, -(l10 + l12), l12, 0.0, 0.0, 0.0;
    return G;
  }

  /// The non-Markov design: recovery-to-relapse intensity halved for those ill at time 4.
  static SwitchModel standard() {
    SwitchModel m;
    m.base_intensities = make_generator(0.6, 0.02, 0.3, 0.1);
    m.switched_intensities = make_generator(0.3, 0.02, 0.3, 0.1);
    return m;
  }

  /// Same intensities without the switch, hence Markov.
  static SwitchModel markov_variant() {
    SwitchModel m = standard();
    m.switched_intensities = m.base_intensities;
    return m;
  }

  void validate() const {
    for (const Generator* G : {&base_intensities, &switched_intensities}) {
      for (int j = 0; j < 3; ++j) {
        for (int k = 0; k < 3; ++k)
          if (j != k && (*G)(j, k) < 0.0) throw ValidationError("negative off-diagonal intensity");
        if (std::abs(G->row(j).sum()) > 1e-14) throw ValidationError("generator rows must sum to 0");
      }
    }
    if (!(switch_time > 0.0)) throw ValidationError("switch_time must be positive");
    if (!(censor_rate >= 0.0)) throw ValidationError("censor_rate must be nonnegative");
    if (initial_state < 0 || initial_state > 2 || switch_state < 0 || switch_state > 2)
      throw ValidationError("model states must be 0, 1 or 2");
    if (!(horizon > 0.0)) throw ValidationError("horizon must be positive");
  }

  /// Generator in force after the switch for a subject occupying x at switch_time.
  const Generator& after_switch(State x) const { return x == switch_state ? switched_intensities : base_intensities; }
};

/// Path of one subject, censored at an independent exponential time.
inline SubjectPath simulate_subject(const SwitchModel& model, Rng& rng, std::string id = {}) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto exponential = [&](double rate) {
    if (rate <= 0.0) return kInfinity;
    return -std::log1p(-unif(rng)) / rate;
  };
  const double C = exponential(model.censor_rate);

  SubjectPath path;
  path.id = std::move(id);
  path.jumps.push_back({0.0, model.initial_state});
  State x = model.initial_state;
  State recorded = x;
  double t = 0.0;
  const Generator* G = &model.base_intensities;
  bool switched = false;
  for (;;) {
    const double rate = -(*G)(x, x);
    const double next = t + exponential(rate);
    if (!switched && next >= model.switch_time) {
      // Holding times are memoryless, so restarting the clock at the switch is exact.
      t = model.switch_time;
      G = &model.after_switch(x);
      switched = true;
      continue;
    }
    if (next >= model.horizon) break;
    double u = unif(rng) * rate;
    State to = x;
    for (State k = 0; k < 3; ++k) {
      if (k == x || (*G)(x, k) <= 0.0) continue;
      to = k;
      u -= (*G)(x, k);
      if (u < 0.0) break;
    }
    t = next;
    x = to;
    if (t >= C) break;
    path.jumps.push_back({t, x});
    recorded = x;
  }
  const bool absorbed = model.base_intensities(recorded, recorded) == 0.0 &&
                        model.after_switch(recorded)(recorded, recorded) == 0.0;
  path.censor_time = absorbed ? kInfinity : std::min(C, model.horizon);
  return path;
}

/// n subjects, subject i drawn from stream (seed, i).
inline Sample simulate_sample(const SwitchModel& model, std::size_t n, std::uint64_t seed, bool parallel = true) {
  if (n == 0) throw ValidationError("sample size must be positive");
  model.validate();
  Sample sample;
  sample.state_space = StateSpace::illness_death_with_recovery();
  sample.paths.resize(n);
  parallel_for(
      n,
      [&](std::size_t i) {
        Rng rng = make_stream(seed, i);
        sample.paths[i] = simulate_subject(model, rng, std::to_string(i + 1));
      },
      parallel);
  return sample;
}

/// exp(G t) by a truncated Taylor series on G t / 2^k followed by k squarings.
template <class Matrix>
Matrix matrix_exp(const Matrix& G, double t) {
  if (!(t >= 0.0)) throw DomainError("matrix_exp requires t >= 0");
  const Matrix X = G * t;
  const double norm = X.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 8;
  while (std::ldexp(norm, -squarings) > 0.5) ++squarings;
  const Matrix Y = X * std::ldexp(1.0, -squarings);
  Matrix result = Matrix::Identity(G.rows(), G.cols());
  Matrix term = result;
  for (int k = 1; k <= 200; ++k) {
    term = term * Y / static_cast<double>(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-300) break;
  }
  for (int k = 0; k < squarings; ++k) result = result * result;
  return result;
}

/// Distribution of X(t) for a subject starting in the model's initial state.
inline Eigen::RowVector3d occupancy(const SwitchModel& model, double t) {
  Eigen::RowVector3d start = Eigen::RowVector3d::Zero();
  start(model.initial_state) = 1.0;
  if (t <= model.switch_time) return start * matrix_exp(model.base_intensities, t);
  const Eigen::RowVector3d at_switch = start * matrix_exp(model.base_intensities, model.switch_time);
  Eigen::RowVector3d out = Eigen::RowVector3d::Zero();
  for (State x = 0; x < 3; ++x) {
    Eigen::RowVector3d e = Eigen::RowVector3d::Zero();
    e(x) = 1.0;
    out += at_switch(x) * (e * matrix_exp(model.after_switch(x), t - model.switch_time));
  }
  return out;
}

/// Exact P(X(t) in `to` | X(s) = from) for s after the switch time.
struct TruthOracle {
  SwitchModel model;
  double s = 5.0;
  State from = 1;
  StateSet to{0};

  static TruthOracle standard() { return TruthOracle{SwitchModel::standard(), 5.0, 1, StateSet{0}}; }

  /// Mixture weights over the state x occupied at the switch time, given X(s) = from.
  std::vector<double> mixture_weights() const {
    if (!(s >= model.switch_time)) throw ValidationError("oracle requires s >= switch_time");
    const Generator E0 = matrix_exp(model.base_intensities, model.switch_time);
    std::vector<double> w(3, 0.0);
    for (State x = 0; x < 3; ++x)
      w[static_cast<std::size_t>(x)] =
          E0(model.initial_state, x) * matrix_exp(model.after_switch(x), s - model.switch_time)(x, from);
    return w;
  }
};

namespace detail {

inline double target_mass(const Generator& P, State from, StateSet to) {
  double v = 0.0;
  for (State j = 0; j < 3; ++j)
    if (to.contains(j)) v += P(from, j);
  return v;
}

}  // namespace detail

inline double true_transition(const TruthOracle& oracle, double t) {
  if (t < oracle.s) throw ValidationError("true_transition requires t >= s");
  const auto w = oracle.mixture_weights();
  double num = 0.0, den = 0.0;
  for (State x = 0; x < 3; ++x) {
    const double wx = w[static_cast<std::size_t>(x)];
    if (wx == 0.0) continue;
    num += wx * detail::target_mass(matrix_exp(oracle.model.after_switch(x), t - oracle.s), oracle.from, oracle.to);
    den += wx;
  }
  if (!(den > 0.0)) throw DomainError("conditioning event has probability zero");
  return num / den;
}

/// Integral of true_transition over [s, tau], composite Simpson with step <= h.
inline double true_elos(const TruthOracle& oracle, double tau, double h = 1e-3) {
  if (tau < oracle.s) throw ValidationError("true_elos requires tau >= s");
  if (tau == oracle.s) return 0.0;
  auto intervals = static_cast<long>(std::ceil((tau - oracle.s) / h));
  if (intervals % 2) ++intervals;
  const double step = (tau - oracle.s) / static_cast<double>(intervals);
  const auto w = oracle.mixture_weights();
  double den = 0.0;
  for (double x : w) den += x;
  if (!(den > 0.0)) throw DomainError("conditioning event has probability zero");
  double total = 0.0;
  for (State x = 0; x < 3; ++x) {
    const double wx = w[static_cast<std::size_t>(x)];
    if (wx == 0.0) continue;
    const Generator& M = oracle.model.after_switch(x);
    const Generator E = matrix_exp(M, step);
    Generator P = Generator::Identity();
    double sum = 0.0;
    for (long k = 0; k <= intervals; ++k) {
      const double f = detail::target_mass(P, oracle.from, oracle.to);
      const double c = (k == 0 || k == intervals) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      sum += c * f;
      P = P * E;
    }
    total += wx * sum * step / 3.0;
  }
  return total / den;
}

}  // namespace nonmarkov
