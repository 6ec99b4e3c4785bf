#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nonmarkov/bands.hpp"
#include "nonmarkov/errors.hpp"
#include "nonmarkov/multistate.hpp"

namespace nonmarkov {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::optional<double> to_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> to_integer(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads `subject_id,time,state` rows; a state of "C" marks the censoring time.
/// Rows of one subject may be interleaved with others but must be in time order.
inline Sample parse_event_history(std::istream& in,
                                  const StateSpace& space = StateSpace::illness_death_with_recovery()) {
  space.validate();
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  ++lineno;
  {
    const auto cols = detail::split(line, ',');
    if (cols.size() != 3 || detail::trim(cols[0]) != "subject_id" || detail::trim(cols[1]) != "time" ||
        detail::trim(cols[2]) != "state")
      throw ParseError(1, "header must be subject_id,time,state");
  }
  Sample sample;
  sample.state_space = space;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<bool> closed;
  std::vector<double> last_time;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cols = detail::split(line, ',');
    if (cols.size() != 3) throw ParseError(lineno, "expected 3 columns, found " + std::to_string(cols.size()));
    const std::string id(detail::trim(cols[0]));
    if (id.empty()) throw ParseError(lineno, "column 1: empty subject_id");
    const auto time = detail::to_double(cols[1]);
    if (!time || !std::isfinite(*time)) throw ParseError(lineno, "column 2: malformed time");
    const auto state_text = detail::trim(cols[2]);

    auto [it, fresh] = index.try_emplace(id, sample.paths.size());
    if (fresh) {
      sample.paths.push_back(SubjectPath{{}, kInfinity, id});
      closed.push_back(false);
      last_time.push_back(0.0);
    }
    const std::size_t k = it->second;
    SubjectPath& path = sample.paths[k];
    if (closed[k]) throw ValidationError(lineno, "subject " + id + ": row after the censoring row");
    if (fresh && *time != 0.0) throw ValidationError(lineno, "subject " + id + ": first row must be at time 0");
    if (!fresh && *time < last_time[k]) throw ValidationError(lineno, "subject " + id + ": decreasing time");
    last_time[k] = *time;
    if (state_text == "C") {
      if (fresh) throw ValidationError(lineno, "subject " + id + ": censoring row before any state");
      if (!(*time > 0.0)) throw ValidationError(lineno, "subject " + id + ": censoring time must be positive");
      path.censor_time = *time;
      closed[k] = true;
      continue;
    }
    const auto state = detail::to_integer(state_text);
    if (!state) throw ParseError(lineno, "column 3: state must be an integer or C");
    if (!space.valid_state(static_cast<State>(*state)))
      throw ValidationError(lineno, "subject " + id + ": unknown state " + std::string(state_text));
    const State x = static_cast<State>(*state);
    if (!path.jumps.empty()) {
      const Jump& prev = path.jumps.back();
      if (!(*time > prev.time)) throw ValidationError(lineno, "subject " + id + ": repeated time");
      if (prev.state == x) throw ValidationError(lineno, "subject " + id + ": state repeats the previous row");
      if (!space.allows(prev.state, x))
        throw ValidationError(lineno, "subject " + id + ": transition " + std::to_string(prev.state) + "->" +
                                          std::to_string(x) + " not allowed");
    }
    path.jumps.push_back({*time, x});
  }
  if (sample.paths.empty()) throw ValidationError(lineno, "no subjects");
  return sample;
}

inline Sample parse_event_history_file(const std::string& path,
                                       const StateSpace& space = StateSpace::illness_death_with_recovery()) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return parse_event_history(in, space);
}

inline void write_event_history(std::ostream& out, const Sample& sample) {
  out << "subject_id,time,state\n";
  for (const auto& p : sample.paths) {
    for (const auto& j : p.jumps) out << p.id << ',' << detail::format_number(j.time) << ',' << j.state << '\n';
    if (std::isfinite(p.censor_time)) out << p.id << ',' << detail::format_number(p.censor_time) << ",C\n";
  }
}

enum class EstimatorKind { nonmarkov, aalen_johansen };

/// Settings shared by every command. Fields left unset keep their defaults.
struct RunConfig {
  double s = 5.0;
  double tau = 30.0;
  StateSet I{1};
  StateSet J{0};
  double alpha = 0.05;
  std::size_t B = 200;
  std::uint64_t seed = 1;
  std::size_t n = 200;
  std::size_t replicates = 1000;
  EstimatorKind estimator = EstimatorKind::nonmarkov;
  Transform band_transform = Transform::phi2;
  WeightKind band_weight = WeightKind::hw;
  double band_t1 = 6.0;
  double band_t2 = 7.0;
  std::string model = "switch";
  std::string input;
  std::string input2;
  std::string output_dir = ".";

  void validate() const {
    if (!(s < tau)) throw ValidationError("s must be smaller than tau");
    if (I.empty() || J.empty()) throw ValidationError("state sets must be nonempty");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must be in (0, 1)");
    if (B < 1) throw ValidationError("B must be at least 1");
    if (n < 1) throw ValidationError("n must be at least 1");
    if (replicates < 1) throw ValidationError("replicates must be at least 1");
    if (model != "switch" && model != "markov") throw ValidationError("model must be switch or markov");
    BandSpec{band_transform, band_weight, band_t1, band_t2, alpha}.validate();
  }

  BandSpec band() const { return BandSpec{band_transform, band_weight, band_t1, band_t2, alpha}; }
};

inline StateSet parse_state_list(std::string_view text) {
  StateSet out;
  for (auto part : detail::split(text, ',')) {
    const auto v = detail::to_integer(part);
    if (!v || *v < 0 || *v >= kMaxStates) throw ValidationError("malformed state list '" + std::string(text) + "'");
    out.insert(static_cast<State>(*v));
  }
  return out;
}

inline Transform parse_transform(std::string_view v) {
  if (v == "phi1") return Transform::phi1;
  if (v == "phi2") return Transform::phi2;
  if (v == "identity") return Transform::identity;
  throw ValidationError("band transform must be phi1, phi2 or identity");
}

inline WeightKind parse_weight(std::string_view v) {
  if (v == "ep") return WeightKind::ep;
  if (v == "hw") return WeightKind::hw;
  if (v == "unit") return WeightKind::unit;
  throw ValidationError("band weight must be ep, hw or unit");
}

inline EstimatorKind parse_estimator(std::string_view v) {
  if (v == "nonmarkov") return EstimatorKind::nonmarkov;
  if (v == "aalen_johansen") return EstimatorKind::aalen_johansen;
  throw ValidationError("estimator must be nonmarkov or aalen_johansen");
}

/// Applies one key=value setting; unknown keys and malformed values throw ValidationError.
inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value, std::size_t line = 0) {
  auto fail = [&](const std::string& what) -> ValidationError {
    return line ? ValidationError(line, what) : ValidationError(what);
  };
  auto real = [&]() {
    const auto v = detail::to_double(value);
    if (!v || !std::isfinite(*v)) throw fail("key '" + std::string(key) + "': expected a number");
    return *v;
  };
  auto count = [&]() {
    const auto v = detail::to_integer(value);
    if (!v || *v < 0) throw fail("key '" + std::string(key) + "': expected a nonnegative integer");
    return static_cast<std::size_t>(*v);
  };
  try {
    if (key == "s") cfg.s = real();
    else if (key == "tau") cfg.tau = real();
    else if (key == "I") cfg.I = parse_state_list(value);
    else if (key == "J") cfg.J = parse_state_list(value);
    else if (key == "alpha") cfg.alpha = real();
    else if (key == "B") cfg.B = count();
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(count());
    else if (key == "n") cfg.n = count();
    else if (key == "replicates") cfg.replicates = count();
    else if (key == "estimator") cfg.estimator = parse_estimator(value);
    else if (key == "band_transform") cfg.band_transform = parse_transform(value);
    else if (key == "band_weight") cfg.band_weight = parse_weight(value);
    else if (key == "band_t1") cfg.band_t1 = real();
    else if (key == "band_t2") cfg.band_t2 = real();
    else if (key == "model") cfg.model = std::string(value);
    else if (key == "input") cfg.input = std::string(value);
    else if (key == "input2") cfg.input2 = std::string(value);
    else if (key == "output_dir") cfg.output_dir = std::string(value);
    else throw fail("unknown key '" + std::string(key) + "'");
  } catch (const ValidationError& e) {
    if (line && e.line() == 0) throw ValidationError(line, e.what());
    throw;
  }
}

/// Flat key=value file; blank lines and lines starting with '#' are ignored.
inline RunConfig parse_run_config(std::istream& in, RunConfig cfg = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ParseError(lineno, "expected key=value");
    apply_setting(cfg, detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)), lineno);
  }
  return cfg;
}

inline RunConfig parse_run_config_file(const std::string& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  return parse_run_config(in, std::move(cfg));
}

/// Columns t, estimate.
inline void write_curve_csv(std::ostream& out, const std::vector<double>& t, const std::vector<double>& estimate) {
  out << "t,estimate\n";
  for (std::size_t g = 0; g < t.size(); ++g)
    out << detail::format_number(t[g]) << ',' << detail::format_number(estimate[g]) << '\n';
}

}  // namespace nonmarkov
