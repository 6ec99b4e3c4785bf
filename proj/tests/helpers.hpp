#pragma once

#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "nonmarkov/multistate.hpp"
#include "nonmarkov/simulator.hpp"

namespace testing_helpers {

using nonmarkov::kInfinity;

inline nonmarkov::SubjectPath path(std::initializer_list<std::pair<double, int>> jumps, double censor = kInfinity,
                                   std::string id = "x") {
  nonmarkov::SubjectPath p;
  for (const auto& [t, x] : jumps) p.jumps.push_back({t, x});
  p.censor_time = censor;
  p.id = std::move(id);
  return p;
}

inline nonmarkov::Sample sample_of(std::vector<nonmarkov::SubjectPath> paths) {
  nonmarkov::Sample s;
  s.state_space = nonmarkov::StateSpace::illness_death_with_recovery();
  for (std::size_t i = 0; i < paths.size(); ++i)
    if (paths[i].id == "x") paths[i].id = std::to_string(i + 1);
  s.paths = std::move(paths);
  s.validate();
  return s;
}

inline nonmarkov::Sample simulated(std::size_t n, std::uint64_t seed, bool censored = true, bool markov = false) {
  auto model = markov ? nonmarkov::SwitchModel::markov_variant() : nonmarkov::SwitchModel::standard();
  if (!censored) model.censor_rate = 0.0;
  return nonmarkov::simulate_sample(model, n, seed);
}

}  // namespace testing_helpers
