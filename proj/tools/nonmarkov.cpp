// Command-line driver: simulate, estimate, band, elos-test, coverage.
//
//   nonmarkov simulate --n 200 --seed 3 --out run/
//   nonmarkov estimate --input run/sample.csv --set-i 1 --set-j 0 --out run/
//   nonmarkov band --input run/sample.csv --band-weight ep --b 500 --out run/
//   nonmarkov elos-test --input a.csv --input2 b.csv --b 1000 --out run/
//   nonmarkov coverage --n 200 --replicates 1000 --b 200 --out run/

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nonmarkov/nonmarkov.hpp"

namespace fs = std::filesystem;
using namespace nonmarkov;

namespace {

struct Outputs {
  std::vector<std::pair<fs::path, std::string>> files;

  void add(const RunConfig& cfg, const std::string& name, std::string content) {
    files.emplace_back(fs::path(cfg.output_dir) / name, std::move(content));
  }

  // Everything is rendered before the first write; a failed write removes what was written.
  void commit() {
    std::vector<fs::path> written;
    try {
      for (const auto& [path, content] : files) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + path.string());
        written.push_back(path);
        out << content;
        out.close();
        if (!out) throw Error("write failed for " + path.string());
      }
    } catch (...) {
      std::error_code ec;
      for (const auto& p : written) fs::remove(p, ec);
      throw;
    }
  }
};

SwitchModel model_of(const RunConfig& cfg) {
  return cfg.model == "markov" ? SwitchModel::markov_variant() : SwitchModel::standard();
}

Sample input_or_simulated(const RunConfig& cfg, const std::string& file, std::uint64_t seed) {
  if (!file.empty()) return parse_event_history_file(file);
  return simulate_sample(model_of(cfg), cfg.n, seed);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void cmd_simulate(const RunConfig& cfg, Outputs& out) {
  const auto sample = simulate_sample(model_of(cfg), cfg.n, cfg.seed);
  std::ostringstream os;
  write_event_history(os, sample);
  out.add(cfg, "sample.csv", os.str());
}

void cmd_estimate(const RunConfig& cfg, Outputs& out) {
  const auto sample = input_or_simulated(cfg, cfg.input, cfg.seed);
  std::vector<double> t, est;
  double e = 0.0;
  if (cfg.estimator == EstimatorKind::nonmarkov) {
    const auto fit = fit_subgroup(sample, cfg.s, cfg.I, cfg.J, cfg.tau);
    t = fit.grid;
    est = fit.estimate;
    e = elos(fit);
  } else {
    const AalenJohansenFit fit(sample, cfg.s, cfg.tau);
    const auto curve = fit.set_curve(cfg.I, cfg.J);
    t.push_back(cfg.s);
    for (double x : fit.times()) t.push_back(x);
    if (t.back() != cfg.tau) t.push_back(cfg.tau);
    for (double x : t) est.push_back(curve(x));
    e = curve.integral(cfg.s, cfg.tau);
  }
  std::ostringstream os;
  write_curve_csv(os, t, est);
  out.add(cfg, "curve.csv", os.str());
  std::cout << "elos " << fixed4(e) << " over [" << cfg.s << ", " << cfg.tau << "]\n";
}

void cmd_band(const RunConfig& cfg, Outputs& out) {
  const auto sample = input_or_simulated(cfg, cfg.input, cfg.seed);
  const BootstrapConfig boot{cfg.B, cfg.seed};
  const auto band = cfg.estimator == EstimatorKind::nonmarkov
                        ? build_band(sample, cfg.s, cfg.I, cfg.J, cfg.band(), boot)
                        : build_aj_band(sample, cfg.s, cfg.I, cfg.J, cfg.band(), boot);
  std::ostringstream os;
  write_csv(os, band);
  out.add(cfg, "band.csv", os.str());
  std::cout << "q* " << fixed4(band.q_star) << ", " << band.failed_replicates << " failed replicates\n";
}

void cmd_elos_test(const RunConfig& cfg, Outputs& out) {
  const auto s1 = input_or_simulated(cfg, cfg.input, cfg.seed);
  const auto s2 = input_or_simulated(cfg, cfg.input2, stream_seed(cfg.seed, 2));
  TwoSampleOptions opt;
  opt.alpha = cfg.alpha;
  opt.boot = BootstrapConfig{cfg.B, cfg.seed};
  nlohmann::json records = nlohmann::json::array();
  std::ostringstream human;
  human << "method            delta      ci_lo      ci_hi      p\n";
  for (TestMethod m : {TestMethod::wald, TestMethod::naive_bootstrap, TestMethod::bootstrap_t}) {
    const auto t = two_sample_test(s1, s2, cfg.s, cfg.I, cfg.J, cfg.tau, m, opt);
    records.push_back(to_json(t));
    char line[128];
    std::snprintf(line, sizeof line, "%-16s %9.4f  %9.4f  %9.4f  %.4f\n", to_string(m).c_str(), t.delta, t.ci_lo,
                  t.ci_hi, t.p_value_one_sided);
    human << line;
  }
  out.add(cfg, "test.json", records.dump(2, ' ', false, nlohmann::json::error_handler_t::strict) + "\n");
  std::cout << human.str();
}

void cmd_coverage(const RunConfig& cfg, Outputs& out) {
  if (cfg.I.size() != 1) throw ValidationError("coverage needs a single starting state");
  CoverageConfig c;
  c.model = model_of(cfg);
  c.n = cfg.n;
  c.replicates = cfg.replicates;
  c.B = cfg.B;
  c.seed = cfg.seed;
  c.s = cfg.s;
  c.tau = cfg.tau;
  c.alpha = cfg.alpha;
  c.t1 = cfg.band_t1;
  c.t2 = cfg.band_t2;
  c.from = cfg.I.members().front();
  c.to = cfg.J;
  const auto summary = run_coverage(c);
  std::ostringstream os;
  write_csv(os, summary);
  out.add(cfg, "coverage.csv", os.str());
  std::cout << "n " << summary.n << ", replicates " << summary.replicates << ", B " << summary.B << "\n"
            << "bias       AJ " << fixed4(summary.bias_AJ.mean()) << "  NM " << fixed4(summary.bias_NM.mean()) << "\n"
            << "elos CI    wald_AJ " << fixed4(summary.wald_AJ.rate()) << "  wald_NM " << fixed4(summary.wald_NM.rate())
            << "  naive_boot " << fixed4(summary.naive_boot.rate()) << "  boot_t " << fixed4(summary.boot_t.rate())
            << "\n"
            << "bands      hw " << fixed4(summary.hw.rate()) << "  ep " << fixed4(summary.ep.rate()) << "  naive "
            << fixed4(summary.naive.rate()) << "  aj_ep " << fixed4(summary.aj_ep.rate()) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-Markov transition probabilities and expected length of stay"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> flags;
  const std::vector<std::pair<std::string, std::string>> keyed = {
      {"--n", "n"},
      {"--seed", "seed"},
      {"--replicates", "replicates"},
      {"--b", "B"},
      {"--s", "s"},
      {"--tau", "tau"},
      {"--set-i", "I"},
      {"--set-j", "J"},
      {"--alpha", "alpha"},
      {"--estimator", "estimator"},
      {"--band-transform", "band_transform"},
      {"--band-weight", "band_weight"},
      {"--band-t1", "band_t1"},
      {"--band-t2", "band_t2"},
      {"--model", "model"},
      {"--input", "input"},
      {"--input2", "input2"},
      {"--out", "output_dir"},
  };

  using Command = void (*)(const RunConfig&, Outputs&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands = {
      {"simulate", "simulate a sample to sample.csv", cmd_simulate},
      {"estimate", "transition curve to curve.csv", cmd_estimate},
      {"band", "simultaneous confidence band to band.csv", cmd_band},
      {"elos-test", "two-sample length-of-stay comparison to test.json", cmd_elos_test},
      {"coverage", "Monte Carlo coverage study to coverage.csv", cmd_coverage},
  };
  Command chosen = nullptr;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "key=value configuration file");
    for (const auto& [flag, key] : keyed) sub->add_option(flag, flags[key]);
    sub->callback([&chosen, f = fn] { chosen = f; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = parse_run_config_file(config_path);
    for (const auto& [flag, key] : keyed) {
      const auto& v = flags[key];
      if (!v.empty()) apply_setting(cfg, key, v);
    }
    cfg.validate();
    Outputs out;
    chosen(cfg, out);
    out.commit();
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
