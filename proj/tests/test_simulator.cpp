#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "nonmarkov/simulator.hpp"

using namespace nonmarkov;

namespace {

// Reference values computed with scipy.linalg.expm and scipy.integrate.quad.
constexpr double kOccupancy[4][4] = {
    {2.0, 0.41834902, 0.49029862, 0.09135236},
    {4.0, 0.29521227, 0.4983759, 0.20641184},
    {6.0, 0.27810571529592826, 0.41252921409580545, 0.3093650706082665},
    {10.0, 0.2429875767556342, 0.2893211109251588, 0.4676913123192071},
};
constexpr double kTransition10 = 0.32585136855320523;
constexpr double kElos = 5.304131539758411;
constexpr double kMarkovElos = 3.6170657959584283;
constexpr double kMarkovTransition10 = 0.23613369233879686;

TEST(MatrixExp, AgreesWithClosedFormAndReference) {
  Eigen::Matrix2d G;
  G << -1.0, 1.0, 0.0, 0.0;
  const Eigen::Matrix2d E = matrix_exp(G, 2.0);
  EXPECT_NEAR(E(0, 0), std::exp(-2.0), 1e-13);
  EXPECT_NEAR(E(0, 1), 1.0 - std::exp(-2.0), 1e-13);
  EXPECT_EQ(matrix_exp(G, 0.0), Eigen::Matrix2d::Identity());
  EXPECT_THROW(matrix_exp(G, -1.0), DomainError);
  const auto B = SwitchModel::standard().base_intensities;
  const Generator P = matrix_exp(B, 7.5);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(P.row(j).sum(), 1.0, 1e-13);
  EXPECT_LT((matrix_exp(B, 3.0) * matrix_exp(B, 4.5) - P).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(MatrixExp, ScaledSeriesAgreesWithLongDirectSeries) {
  const auto m = SwitchModel::standard();
  for (const Generator& G : {m.base_intensities, m.switched_intensities}) {
    // Direct 400-term Taylor series of exp(25 G) in long double.
    Eigen::Matrix<long double, 3, 3> X = G.cast<long double>() * 25.0L, term, sum;
    term.setIdentity();
    sum.setIdentity();
    for (int k = 1; k <= 400; ++k) {
      term = term * X / static_cast<long double>(k);
      sum += term;
    }
    const Generator E = matrix_exp(G, 25.0);
    EXPECT_LT((E - sum.cast<double>()).cwiseAbs().maxCoeff(), 1e-9);
    for (double t : {1.0, 5.0, 25.0}) {
      const Generator P = matrix_exp(G, t);
      for (int j = 0; j < 3; ++j) {
        EXPECT_NEAR(P.row(j).sum(), 1.0, 1e-10);
        for (int k = 0; k < 3; ++k) {
          EXPECT_GE(P(j, k), 0.0);
          EXPECT_LE(P(j, k), 1.0);
        }
      }
    }
  }
}

TEST(Occupancy, MatchesReference) {
  const auto m = SwitchModel::standard();
  for (const auto& row : kOccupancy) {
    const auto p = occupancy(m, row[0]);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(p(j), row[j + 1], 1e-7) << "t=" << row[0] << " state " << j;
  }
  EXPECT_NEAR(occupancy(m, 5.0)(1), 0.459432861966838, 1e-12);
}

TEST(Truth, TransitionValues) {
  const auto oracle = TruthOracle::standard();
  EXPECT_NEAR(true_transition(oracle, 10.0), kTransition10, 1e-12);
  EXPECT_NEAR(true_transition(oracle, 6.5), 0.2602189, 1e-7);
  EXPECT_NEAR(true_transition(oracle, 7.0), 0.2946650, 1e-7);
  EXPECT_EQ(true_transition(oracle, 5.0), 0.0);
  EXPECT_NEAR(true_transition(oracle, 500.0), 0.0, 1e-12);
  EXPECT_THROW(true_transition(oracle, 4.0), ValidationError);
}

TEST(Truth, ElosValues) {
  const auto oracle = TruthOracle::standard();
  EXPECT_NEAR(true_elos(oracle, 30.0), kElos, 1e-9);
  EXPECT_EQ(true_elos(oracle, 5.0), 0.0);
  auto markov = oracle;
  markov.model = SwitchModel::markov_variant();
  EXPECT_NEAR(true_elos(markov, 30.0), kMarkovElos, 1e-9);
  EXPECT_NEAR(true_transition(markov, 10.0), kMarkovTransition10, 1e-12);
  const Generator P = matrix_exp(markov.model.base_intensities, 5.0);
  EXPECT_NEAR(true_transition(markov, 10.0), P(1, 0), 1e-12);
}

TEST(Truth, OracleNeedsConditioningAfterSwitch) {
  auto oracle = TruthOracle::standard();
  oracle.s = 3.0;
  EXPECT_THROW(oracle.mixture_weights(), ValidationError);
}

TEST(Simulate, ZeroSampleIsRejected) {
  EXPECT_THROW(simulate_sample(SwitchModel::standard(), 0, 1), ValidationError);
}

TEST(Simulate, PathsAreValidAndDeterministic) {
  const auto a = simulate_sample(SwitchModel::standard(), 500, 42);
  const auto b = simulate_sample(SwitchModel::standard(), 500, 42, false);
  EXPECT_NO_THROW(a.validate());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.paths[i].id, std::to_string(i + 1));
    EXPECT_EQ(a.paths[i].censor_time, b.paths[i].censor_time);
    ASSERT_EQ(a.paths[i].jumps.size(), b.paths[i].jumps.size());
    for (std::size_t k = 0; k < a.paths[i].jumps.size(); ++k) {
      EXPECT_EQ(a.paths[i].jumps[k].time, b.paths[i].jumps[k].time);
      EXPECT_EQ(a.paths[i].jumps[k].state, b.paths[i].jumps[k].state);
    }
    const auto& last = a.paths[i].jumps.back();
    if (last.state == 2) EXPECT_EQ(a.paths[i].censor_time, kInfinity);
    else EXPECT_LE(a.paths[i].censor_time, 31.0);
  }
}

TEST(Simulate, HeavyCensoringAndFrozenModels) {
  auto fast = SwitchModel::standard();
  fast.censor_rate = 1e6;
  const auto a = simulate_sample(fast, 2000, 3);
  std::size_t early = 0;
  for (const auto& p : a.paths) early += p.censor_time < 0.01;
  EXPECT_GT(early, 0.99 * 2000);

  SwitchModel frozen;
  frozen.base_intensities.setZero();
  frozen.switched_intensities.setZero();
  frozen.censor_rate = 0.0;
  const auto b = simulate_sample(frozen, 50, 3);
  for (const auto& p : b.paths) {
    ASSERT_EQ(p.jumps.size(), 1u);
    EXPECT_EQ(p.jumps[0].state, 0);
  }
}

TEST(Simulate, SubgroupFractionOnModerateSample) {
  const auto sample = simulate_sample(SwitchModel::standard(), 100000, 99);
  double sub = 0.0;
  for (const auto& p : sample.paths)
    if (const auto x = state_at(p, 5.0); x && *x == 1) sub += 1.0;
  EXPECT_NEAR(sub / 1e5, 0.3761518130668818, 0.01);
}

TEST(Simulate, InvalidModelsAreRejected) {
  auto m = SwitchModel::standard();
  m.base_intensities(0, 1) = -0.1;
  EXPECT_THROW(m.validate(), ValidationError);
  m = SwitchModel::standard();
  m.censor_rate = -1.0;
  EXPECT_THROW(simulate_sample(m, 10, 1), ValidationError);
}

// One million subjects: empirical occupancy and the subgroup fraction agree with
// the closed forms to Monte Carlo precision.
TEST(Simulate, MonteCarloMatchesClosedForms) {
  auto uncensored = SwitchModel::standard();
  uncensored.censor_rate = 0.0;
  const std::size_t n = 1000000;
  const auto sample = simulate_sample(uncensored, n, 2024);
  double ill5 = 0.0, healthy10 = 0.0;
  double occ6[3] = {0, 0, 0};
  for (const auto& p : sample.paths) {
    const auto x5 = state_at(p, 5.0);
    const auto x6 = state_at(p, 6.0);
    occ6[*x6] += 1.0;
    if (*x5 == 1) {
      ill5 += 1.0;
      if (*state_at(p, 10.0) == 0) healthy10 += 1.0;
    }
  }
  const double se = 0.5 / std::sqrt(static_cast<double>(n));
  EXPECT_NEAR(ill5 / n, 0.459432861966838, 5 * se);
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(occ6[j] / n, kOccupancy[2][j + 1], 5 * se);
  EXPECT_NEAR(healthy10 / ill5, kTransition10, 5 * 0.5 / std::sqrt(ill5));

  const auto censored = simulate_sample(SwitchModel::standard(), n, 2025);
  double sub = 0.0;
  for (const auto& p : censored.paths)
    if (const auto x = state_at(p, 5.0); x && *x == 1) sub += 1.0;
  EXPECT_NEAR(sub / n, 0.459432861966838 * std::exp(-0.2), 5 * se);
}

TEST(Simulate, MarkovVariantHasNoMemoryOfSwitch) {
  auto m = SwitchModel::markov_variant();
  m.censor_rate = 0.0;
  const auto sample = simulate_sample(m, 200000, 7);
  double ill5 = 0.0, healthy10 = 0.0;
  for (const auto& p : sample.paths)
    if (*state_at(p, 5.0) == 1) {
      ill5 += 1.0;
      if (*state_at(p, 10.0) == 0) healthy10 += 1.0;
    }
  EXPECT_NEAR(healthy10 / ill5, kMarkovTransition10, 5 * 0.5 / std::sqrt(ill5));
}

}  // namespace
