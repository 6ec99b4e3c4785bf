#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nonmarkov/errors.hpp"

namespace nonmarkov {

using State = int;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();
inline constexpr int kMaxStates = 64;

/// A set of state labels, stored as a bit mask (labels 0..63).
class StateSet {
 public:
  constexpr StateSet() = default;
  StateSet(std::initializer_list<State> states) {
    for (State x : states) insert(x);
  }
  explicit StateSet(const std::vector<State>& states) {
    for (State x : states) insert(x);
  }

  static constexpr StateSet from_mask(std::uint64_t mask) {
    StateSet out;
    out.mask_ = mask;
    return out;
  }

  void insert(State x) {
    if (x < 0 || x >= kMaxStates) throw ValidationError("state label out of range: " + std::to_string(x));
    mask_ |= std::uint64_t{1} << x;
  }
  constexpr bool contains(State x) const noexcept {
    return x >= 0 && x < kMaxStates && ((mask_ >> x) & 1U) != 0;
  }
  constexpr bool empty() const noexcept { return mask_ == 0; }
  constexpr std::size_t size() const noexcept { return static_cast<std::size_t>(std::popcount(mask_)); }
  constexpr std::uint64_t mask() const noexcept { return mask_; }

  constexpr bool subset_of(StateSet other) const noexcept { return (mask_ & ~other.mask_) == 0; }
  constexpr bool disjoint(StateSet other) const noexcept { return (mask_ & other.mask_) == 0; }

  friend constexpr StateSet operator|(StateSet a, StateSet b) noexcept { return from_mask(a.mask_ | b.mask_); }
  friend constexpr StateSet operator&(StateSet a, StateSet b) noexcept { return from_mask(a.mask_ & b.mask_); }
  /// Set difference a \ b.
  friend constexpr StateSet operator-(StateSet a, StateSet b) noexcept { return from_mask(a.mask_ & ~b.mask_); }
  friend constexpr bool operator==(StateSet a, StateSet b) noexcept = default;

  std::vector<State> members() const {
    std::vector<State> out;
    for (State x = 0; x < kMaxStates; ++x)
      if (contains(x)) out.push_back(x);
    return out;
  }

 private:
  std::uint64_t mask_ = 0;
};

/// States 0..n_states-1 and the transitions a path may make.
struct StateSpace {
  int n_states = 0;
  std::set<std::pair<State, State>> allowed_transitions;

  bool valid_state(State x) const noexcept { return x >= 0 && x < n_states; }
  bool allows(State from, State to) const { return allowed_transitions.count({from, to}) > 0; }

  void validate() const {
    if (n_states < 1 || n_states > kMaxStates)
      throw ValidationError("state space must have between 1 and 64 states");
    for (const auto& [from, to] : allowed_transitions) {
      if (!valid_state(from) || !valid_state(to))
        throw ValidationError("transition " + std::to_string(from) + "->" + std::to_string(to) +
                              " references an unknown state");
      if (from == to) throw ValidationError("self-transition " + std::to_string(from) + "->" + std::to_string(to));
    }
  }

  StateSet all_states() const { return StateSet::from_mask(n_states >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << n_states) - 1)); }

  /// States reachable from x in zero or more allowed transitions.
  StateSet reachable_from(State x) const {
    StateSet seen{x};
    std::vector<State> stack{x};
    while (!stack.empty()) {
      const State cur = stack.back();
      stack.pop_back();
      for (const auto& [from, to] : allowed_transitions) {
        if (from == cur && !seen.contains(to)) {
          seen.insert(to);
          stack.push_back(to);
        }
      }
    }
    return seen;
  }

  /// Three-state illness-death model with recovery: 0 healthy, 1 ill, 2 dead.
  static StateSpace illness_death_with_recovery() {
    return StateSpace{3, {{0, 1}, {1, 0}, {0, 2}, {1, 2}}};
  }
};

struct Jump {
  double time;
  State state;
  friend bool operator==(const Jump&, const Jump&) = default;
};

/// One subject's observed trajectory. jumps[0] is the initial state at time 0.
/// Observation stops at censor_time (+inf when the path ends by absorption or
/// is never censored).
struct SubjectPath {
  std::vector<Jump> jumps;
  double censor_time = kInfinity;
  std::string id;

  State initial_state() const { return jumps.front().state; }

  /// Throws ValidationError when the path is inconsistent with `space`.
  void validate(const StateSpace& space) const {
    if (jumps.empty()) throw ValidationError("subject " + id + ": empty path");
    if (jumps.front().time != 0.0) throw ValidationError("subject " + id + ": first jump must be at time 0");
    if (!(censor_time > 0.0)) throw ValidationError("subject " + id + ": censoring time must be positive");
    for (std::size_t k = 0; k < jumps.size(); ++k) {
      if (!space.valid_state(jumps[k].state))
        throw ValidationError("subject " + id + ": unknown state " + std::to_string(jumps[k].state));
      if (k == 0) continue;
      if (!(jumps[k].time > jumps[k - 1].time))
        throw ValidationError("subject " + id + ": jump times must be strictly increasing");
      if (jumps[k].state == jumps[k - 1].state)
        throw ValidationError("subject " + id + ": consecutive states must differ");
      if (!space.allows(jumps[k - 1].state, jumps[k].state))
        throw ValidationError("subject " + id + ": transition " + std::to_string(jumps[k - 1].state) + "->" +
                              std::to_string(jumps[k].state) + " not allowed");
    }
    if (jumps.back().time > censor_time) throw ValidationError("subject " + id + ": jump after censoring");
  }
};

struct Sample {
  StateSpace state_space;
  std::vector<SubjectPath> paths;

  std::size_t size() const noexcept { return paths.size(); }

  void validate() const {
    state_space.validate();
    if (paths.empty()) throw ValidationError("sample has no subjects");
    for (const auto& p : paths) p.validate(state_space);
  }
};

/// State occupied at t, or nullopt once the subject is censored (t >= censor_time).
/// Jumps are right-continuous: a jump at t is already in effect at t.
inline std::optional<State> state_at(const SubjectPath& path, double t) {
  if (t >= path.censor_time) return std::nullopt;
  auto it = std::upper_bound(path.jumps.begin(), path.jumps.end(), t,
                             [](double v, const Jump& j) { return v < j.time; });
  if (it == path.jumps.begin()) return path.jumps.front().state;
  return std::prev(it)->state;
}

struct AbsorbingSets {
  StateSet sure;      ///< states in J from which only J is reachable
  StateSet excluded;  ///< states outside J from which J is unreachable
};

inline AbsorbingSets derive_absorbing_sets(const StateSpace& space, StateSet target) {
  if (target.empty()) throw ValidationError("target set must be nonempty");
  if (!target.subset_of(space.all_states())) throw ValidationError("target set contains unknown states");
  AbsorbingSets out;
  for (State x = 0; x < space.n_states; ++x) {
    const StateSet reach = space.reachable_from(x);
    if (target.contains(x) && reach.subset_of(target)) out.sure.insert(x);
    if (!target.contains(x) && reach.disjoint(target)) out.excluded.insert(x);
  }
  return out;
}

enum class Cause { none, to_sure, to_excluded };

/// Reduced competing-risks view of one path from time s on.
struct CompetingRisksRecord {
  double exit_time = 0.0;
  bool observed = false;
  Cause cause = Cause::none;
  bool in_I_at_s = false;
  bool at_risk_at_s = false;
};

/// First time at or after s the path is inside `absorbing`, or +inf. A path
/// already inside at s returns s.
inline double first_entry_time(const SubjectPath& path, double s, StateSet absorbing, State* entered = nullptr) {
  for (std::size_t k = 0; k < path.jumps.size(); ++k) {
    const bool last = k + 1 == path.jumps.size();
    if (!last && path.jumps[k + 1].time <= s) continue;
    if (absorbing.contains(path.jumps[k].state)) {
      if (entered) *entered = path.jumps[k].state;
      return std::max(path.jumps[k].time, s);
    }
  }
  return kInfinity;
}

inline CompetingRisksRecord reduce_to_competing_risks(const SubjectPath& path, double s, StateSet I,
                                                      const AbsorbingSets& sets, double tau) {
  if (!(s < tau)) throw ValidationError("reduce_to_competing_risks requires s < tau");
  CompetingRisksRecord rec;
  rec.at_risk_at_s = path.censor_time > s;
  const auto at_s = state_at(path, s);
  rec.in_I_at_s = at_s && I.contains(*at_s);
  if (!rec.at_risk_at_s) {
    rec.exit_time = s;
    return rec;
  }
  State entered = -1;
  const double entry = first_entry_time(path, s, sets.sure | sets.excluded, &entered);
  rec.exit_time = std::min({entry, path.censor_time, tau});
  // Censoring first on ties.
  if (entry <= tau && entry < path.censor_time) {
    rec.observed = true;
    rec.cause = sets.sure.contains(entered) ? Cause::to_sure : Cause::to_excluded;
  }
  return rec;
}

}  // namespace nonmarkov
