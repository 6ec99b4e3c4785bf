// Acceptance run: one PASS/FAIL line per criterion, indented details below it.
// Exit status is the number of failed criteria, or with --known-failures 1,2 the
// number of failures outside that list.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nonmarkov/nonmarkov.hpp"

using namespace nonmarkov;

namespace {

const StateSet kIll{1}, kHealthy{0};

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << "    " << (ok ? "ok   " : "FAIL ") << what << '\n';
  }
};

std::string f4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string within(double value, double centre, double tol) {
  return f4(value) + " in [" + f4(centre - tol) + ", " + f4(centre + tol) + "]";
}

bool near(double value, double centre, double tol) { return std::abs(value - centre) <= tol; }

std::vector<int> failed_ids;

void report(int id, const std::string& title, const std::function<void(Verdict&)>& body) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception& e) {
    v.check(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!v.pass) failed_ids.push_back(id);
  std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << title << "  (" << f4(secs)
            << " s)\n"
            << v.detail.str() << std::flush;
}

double sample_variance(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v / static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

double mean(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v / static_cast<double>(x.size());
  return m;
}

// sup over [s, tau] of |step(t) - truth(t)|: at every knot, just before the next knot, and on a 0.01 lattice.
template <class Step, class Truth>
double sup_distance_to_truth(const std::vector<double>& knots, const Step& step, const Truth& truth, double s,
                             double tau) {
  double d = 0.0;
  for (std::size_t k = 0; k < knots.size(); ++k) {
    d = std::max(d, std::abs(step(knots[k]) - truth(knots[k])));
    const double next = k + 1 < knots.size() ? knots[k + 1] : tau;
    d = std::max(d, std::abs(step(knots[k]) - truth(next)));
  }
  for (double t = s; t <= tau; t += 0.01) d = std::max(d, std::abs(step(t) - truth(t)));
  return d;
}

CoverageSummary coverage_study(std::size_t n, bool elos_study) {
  CoverageConfig c;
  c.n = n;
  c.replicates = 1000;
  c.B = 200;
  c.seed = 1;
  c.elos_study = elos_study;
  return run_coverage(c);
}

std::string f5(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5f", v);
  return buf;
}

std::vector<int> parse_ids(const std::string& list) {
  std::vector<int> ids;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) ids.push_back(std::stoi(item));
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> known;
  for (int a = 1; a < argc; ++a) {
    const std::string arg = argv[a];
    if (arg == "--known-failures" && a + 1 < argc) {
      known = parse_ids(argv[++a]);
    } else {
      std::cerr << "usage: acceptance [--known-failures 1,2,...]\n";
      return 2;
    }
  }
  std::cout << "threads: " << thread_count() << '\n';
  const auto oracle = TruthOracle::standard();
  const double truth10 = true_transition(oracle, 10.0);
  const SwitchModel markov = SwitchModel::markov_variant();

  CoverageSummary t200;
  report(1, "expected length of stay bias and interval coverage, n=200", [&](Verdict& v) {
    t200 = coverage_study(200, true);
    v.check(near(t200.wald_NM.rate(), 0.9556, 0.025), "Wald NM " + within(t200.wald_NM.rate(), 0.9556, 0.025));
    v.check(near(t200.naive_boot.rate(), 0.9454, 0.025),
            "naive bootstrap " + within(t200.naive_boot.rate(), 0.9454, 0.025));
    v.check(near(t200.boot_t.rate(), 0.9543, 0.025), "bootstrap-t " + within(t200.boot_t.rate(), 0.9543, 0.025));
    v.check(near(t200.wald_AJ.rate(), 0.8634, 0.03), "Wald AJ " + within(t200.wald_AJ.rate(), 0.8634, 0.03));
    v.check(near(t200.bias_NM.mean(), 0.033, 0.06), "bias NM " + within(t200.bias_NM.mean(), 0.033, 0.06));
    v.check(near(t200.bias_AJ.mean(), -0.297, 0.06), "bias AJ " + within(t200.bias_AJ.mean(), -0.297, 0.06));
    v.detail << "    truth " << f4(t200.truth_elos) << ", failed replicates: NM " << t200.wald_NM.failed << ", AJ "
             << t200.wald_AJ.failed << ", bootstrap-t " << t200.boot_t.failed << '\n';
  });

  report(2, "simultaneous band coverage on (6, 7], n=200 and n=50", [&](Verdict& v) {
    v.check(near(t200.hw.rate(), 0.9496, 0.025), "H-W n=200 " + within(t200.hw.rate(), 0.9496, 0.025));
    v.check(near(t200.ep.rate(), 0.9496, 0.025), "EP n=200 " + within(t200.ep.rate(), 0.9496, 0.025));
    v.check(near(t200.naive.rate(), 0.9420, 0.03), "naive n=200 " + within(t200.naive.rate(), 0.9420, 0.03));
    v.detail << "    AJ EP n=200 " << f4(t200.aj_ep.rate()) << "; failed bands H-W " << t200.hw.failed << ", EP "
             << t200.ep.failed << '\n';
    const auto t50 = coverage_study(50, false);
    v.check(t50.hw.rate() > 0.97, "H-W n=50 " + f4(t50.hw.rate()) + " > 0.97");
    v.check(t50.naive.rate() < 0.97, "naive n=50 " + f4(t50.naive.rate()) + " < 0.97");
    v.detail << "    n=50: EP " << f4(t50.ep.rate()) << ", AJ EP " << f4(t50.aj_ep.rate()) << "; failed bands H-W "
             << t50.hw.failed << ", EP " << t50.ep.failed << ", AJ EP " << t50.aj_ep.failed << " of 1000\n";
  });

  report(3, "consistency at n=5000 over 50 replicates", [&](Verdict& v) {
    const detail::TruthCurve truth(oracle);
    TruthOracle markov_oracle = oracle;
    markov_oracle.model = markov;
    const detail::TruthCurve markov_truth(markov_oracle);
    std::vector<double> nm(50), aj(50);
    parallel_for(50, [&](std::size_t r) {
      const auto sample = simulate_sample(SwitchModel::standard(), 5000, stream_seed(303, r), false);
      const auto fit = fit_subgroup(sample, 5.0, kIll, kHealthy, 30.0);
      const auto curve = fit.curve();
      nm[r] = sup_distance_to_truth(fit.grid, curve.estimate, truth, 5.0, 30.0);
      const auto msample = simulate_sample(markov, 5000, stream_seed(304, r), false);
      const AalenJohansenFit ajfit(msample, 5.0, 30.0);
      const auto ajcurve = ajfit.set_curve(kIll, kHealthy);
      std::vector<double> knots{5.0};
      for (double t : ajfit.times()) knots.push_back(t);
      aj[r] = sup_distance_to_truth(knots, ajcurve, markov_truth, 5.0, 30.0);
    });
    v.check(mean(nm) < 0.03, "mean sup-distance NM " + f5(mean(nm)) + " < 0.03");
    v.check(mean(aj) < 0.03, "mean sup-distance AJ, Markov variant " + f5(mean(aj)) + " < 0.03");
  });

  report(4, "plug-in variance at t=10, n=1000 over 500 replicates", [&](Verdict& v) {
    const std::size_t reps = 500, n = 1000;
    std::vector<double> est(reps), plug(reps), aj_est(reps), aj_plug(reps);
    const double markov_truth10 = matrix_exp(markov.base_intensities, 5.0)(1, 0);
    parallel_for(reps, [&](std::size_t r) {
      const auto sample = simulate_sample(SwitchModel::standard(), n, stream_seed(404, r), false);
      const auto fit = fit_subgroup(sample, 5.0, kIll, kHealthy, 10.0);
      est[r] = std::sqrt(double(n)) * (fit.estimate.back() - truth10);
      plug[r] = gamma_IJ(fit, 10.0, 10.0);
      const auto msample = simulate_sample(markov, n, stream_seed(405, r), false);
      const AalenJohansenFit ajfit(msample, 5.0, 10.0);
      aj_est[r] = std::sqrt(double(n)) * (ajfit.set_curve(kIll, kHealthy)(10.0) - markov_truth10);
      aj_plug[r] = aj_gamma(ajfit, kIll, kHealthy, 10.0, 10.0);
    });
    const double ratio = sample_variance(est) / mean(plug);
    const double aj_ratio = sample_variance(aj_est) / mean(aj_plug);
    v.check(near(ratio, 1.0, 0.15), "NM empirical / plug-in " + within(ratio, 1.0, 0.15));
    v.check(near(aj_ratio, 1.0, 0.15), "AJ empirical / plug-in " + within(aj_ratio, 1.0, 0.15));
  });

  report(5, "bootstrap variance against plug-in, n=500, B=2000, 50 datasets", [&](Verdict& v) {
    std::size_t good = 0;
    std::vector<double> ratios;
    for (std::size_t r = 0; r < 50; ++r) {
      const auto sample = simulate_sample(SwitchModel::standard(), 500, stream_seed(505, r));
      const auto fit = fit_subgroup(sample, 5.0, kIll, kHealthy, 10.0);
      const double plug = gamma_IJ(fit, 10.0, 10.0) / 500.0;
      const auto draws = bootstrap_rows(
          sample,
          [](const Sample& base, std::span<const std::size_t> rows) {
            return fit_subgroup(base, rows, 5.0, kIll, kHealthy, 10.0).estimate.back();
          },
          BootstrapConfig{2000, stream_seed(506, r)});
      const double ratio = sample_variance(draws.values) / plug;
      ratios.push_back(ratio);
      if (near(ratio, 1.0, 0.2)) ++good;
    }
    std::sort(ratios.begin(), ratios.end());
    v.check(good >= 45, std::to_string(good) + " of 50 within 20% (need 45)");
    v.detail << "    ratio range " << f4(ratios.front()) << " .. " << f4(ratios.back()) << ", median "
             << f4((ratios[24] + ratios[25]) / 2) << '\n';
  });

  report(6, "exact invariants", [&](Verdict& v) {
    double partition = 0.0, uncensored = 0.0, path_elos = 0.0, roundtrip = 0.0;
    bool absorbing = true, indicator = true;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto sample = simulate_sample(SwitchModel::standard(), 300, 600 + seed);
      const auto fit = fit_subgroup(sample, 5.0, StateSet{0, 1}, StateSet{0, 2}, 30.0);
      const auto& c = fit.components;
      for (std::size_t k = 0; k < c.F0.size(); ++k)
        partition = std::max(partition, std::abs(c.F0.values()[k] + c.F1.values()[k] + c.F2.values()[k] - 1.0));

      const auto dead = fit_subgroup(sample, 5.0, kIll, StateSet{2}, 30.0);
      for (std::size_t g = 0; g < dead.grid.size(); ++g) absorbing = absorbing && dead.estimate[g] == dead.F1[g];

      const auto plain = fit_subgroup(sample, 5.0, kIll, StateSet{0, 2}, 30.0);
      for (double r : {5.0, 8.0, 15.0})
        for (double u : {r, r + 1.0, 29.0})
          indicator = indicator && cov_L0_G(plain, r, u) == 0.0 && cov_L1_G(plain, r, u) == 0.0 &&
                      cov_L2_G(plain, r, u) == 0.0;

      auto um = SwitchModel::standard();
      um.censor_rate = 0.0;
      const auto full = simulate_sample(um, 300, 700 + seed);
      const auto ufit = fit_subgroup(full, 5.0, kIll, kHealthy, 30.0);
      double stay = 0.0;
      for (const auto& m : ufit.members) {
        const auto& jumps = m.path->jumps;
        for (std::size_t k = 0; k < jumps.size(); ++k) {
          const double a = std::max(jumps[k].time, 5.0);
          const double b = std::min(k + 1 < jumps.size() ? jumps[k + 1].time : kInfinity, 30.0);
          if (b > a && jumps[k].state == 0) stay += b - a;
        }
      }
      path_elos = std::max(path_elos, std::abs(elos(ufit) - stay / static_cast<double>(ufit.members.size())));
      for (std::size_t g = 0; g < ufit.grid.size(); ++g) {
        double healthy = 0.0;
        for (const auto& m : ufit.members) healthy += *state_at(*m.path, ufit.grid[g]) == 0;
        uncensored = std::max(uncensored, std::abs(ufit.estimate[g] - healthy / ufit.members.size()));
      }

      const BandSpec spec{Transform::phi2, WeightKind::hw, 6.0, 7.0, 0.05};
      const auto band = build_band(sample, 5.0, kIll, kHealthy, spec, BootstrapConfig{50, seed});
      const auto bfit = fit_subgroup(sample, 5.0, kIll, kHealthy, 7.0);
      const auto hat = pointwise(bfit, band.grid);
      for (std::size_t g = 0; g < band.grid.size(); ++g) {
        const double w = weight(spec, hat.estimate[g], hat.sigma[g]);
        const double half = band.q_star / (std::sqrt(300.0) * w);
        const double y = transform_value(spec.transform, hat.estimate[g]);
        if (band.lower[g] > 0.0)
          roundtrip = std::max(roundtrip, std::abs(transform_value(spec.transform, band.lower[g]) - (y - half)));
        if (band.upper[g] < 1.0)
          roundtrip = std::max(roundtrip, std::abs(transform_value(spec.transform, band.upper[g]) - (y + half)));
      }
    }
    v.check(partition <= 1e-12, "partition F0+F1+F2=1 at knots, max error " + std::to_string(partition));
    v.check(absorbing, "absorbing target: estimate equals incidence bit for bit");
    v.check(uncensored <= 1e-12, "uncensored estimate equals raw fractions, max error " + std::to_string(uncensored));
    v.check(path_elos <= 1e-12, "uncensored length of stay equals path integration, max error " +
                                    std::to_string(path_elos));
    v.check(roundtrip <= 1e-12, "band round trip, max error " + std::to_string(roundtrip));
    v.check(indicator, "indicator-zero covariance terms are exactly 0");
  });

  report(7, "two-sample Wald test level under equal laws, n=200 per group, 1000 replicates", [&](Verdict& v) {
    const std::size_t reps = 1000;
    std::vector<double> z(reps), p(reps);
    parallel_for(reps, [&](std::size_t r) {
      const auto a = simulate_sample(SwitchModel::standard(), 200, stream_seed(707, 2 * r), false);
      const auto b = simulate_sample(SwitchModel::standard(), 200, stream_seed(707, 2 * r + 1), false);
      const auto t = two_sample_test(a, b, 5.0, kIll, kHealthy, 30.0, TestMethod::wald);
      z[r] = t.z;
      p[r] = t.p_value_one_sided;
    });
    double rejected = 0.0;
    for (double x : p) rejected += x < 0.05;
    const double rate = rejected / reps;
    v.check(near(rate, 0.05, 0.02), "rejection rate " + within(rate, 0.05, 0.02));
    const double var = sample_variance(z);
    v.check(var >= 0.8 && var <= 1.25, "z variance " + f4(var) + " in [0.8, 1.25]");
    v.detail << "    z mean " << f4(mean(z)) << '\n';
  });

  report(8, "two-sample result layout", [&](Verdict& v) {
    const auto a = simulate_sample(SwitchModel::standard(), 200, 801);
    const auto b = simulate_sample(SwitchModel::markov_variant(), 200, 802);
    TwoSampleOptions opt;
    opt.boot = BootstrapConfig{200, 803};
    nlohmann::json rows = nlohmann::json::array();
    for (TestMethod m : {TestMethod::wald, TestMethod::naive_bootstrap, TestMethod::bootstrap_t})
      rows.push_back(to_json(two_sample_test(a, b, 5.0, kIll, kHealthy, 30.0, m, opt)));
    const std::vector<std::string> keys{"delta", "z", "p_value", "ci_lo", "ci_hi", "method", "n1", "n2"};
    bool shape = rows.size() == 3;
    for (const auto& r : rows) {
      shape = shape && r.size() == keys.size();
      for (const auto& k : keys) shape = shape && r.contains(k);
      shape = shape && r["ci_lo"].get<double>() <= r["ci_hi"].get<double>() && r["delta"] == rows[0]["delta"];
      const double pv = r["p_value"].get<double>();
      shape = shape && pv >= 0.0 && pv <= 1.0;
    }
    shape = shape && rows[0]["method"] == "wald" && rows[1]["method"] == "naive_bootstrap" &&
            rows[2]["method"] == "bootstrap_t";
    const auto reparsed = nlohmann::json::parse(rows.dump());
    v.check(shape && reparsed == rows, "three records with keys delta z p_value ci_lo ci_hi method n1 n2");
    for (const auto& r : rows)
      v.detail << "    " << r["method"].get<std::string>() << ": delta " << f4(r["delta"].get<double>()) << "  ("
               << f4(r["ci_lo"].get<double>()) << ", " << f4(r["ci_hi"].get<double>()) << ")  p "
               << f4(r["p_value"].get<double>()) << '\n';
  });

  std::cout << (8 - failed_ids.size()) << " of 8 criteria pass\n";
  int unexpected = 0;
  for (int id : failed_ids)
    if (std::find(known.begin(), known.end(), id) == known.end()) ++unexpected;
  if (!known.empty()) {
    std::cout << "known failures:";
    for (int id : known) std::cout << ' ' << id;
    std::cout << "; unexpected failures: " << unexpected << '\n';
    return unexpected;
  }
  return static_cast<int>(failed_ids.size());
}
