#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "refmarket/analysis.hpp"
#include "refmarket/harness.hpp"

namespace fs = std::filesystem;
using namespace refmarket;

namespace {

std::vector<double> parse_values(const std::string& csv, std::vector<std::string>* tokens) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const double v = std::stod(item, &pos);
    if (pos != item.size()) throw std::invalid_argument("bad value in --values: " + item);
    values.push_back(v);
    if (tokens) tokens->push_back(item);
  }
  if (values.empty()) throw std::invalid_argument("--values must name at least one value");
  return values;
}

std::string default_out_root() {
  if (const char* env = std::getenv("REFMARKET_OUT")) return env;
  return "runs";
}

ExperimentConfig load_config(const std::string& spec) {
  if (spec.empty() || spec == "default") return default_config();
  return parse_config_file(spec);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v;
  if (n == 1) {
    v.push_back(lo);
    return v;
  }
  for (int i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * i / (n - 1));
  return v;
}

struct CommonOpts {
  std::string config_spec = "default";
  std::string out;
  int seed = -1;
  int epochs = -1;

  ExperimentConfig resolve(const std::string& subcommand) const {
    ExperimentConfig config = load_config(config_spec);
    if (seed >= 0) config.seeds = {static_cast<std::uint64_t>(seed)};
    if (epochs > 0) config.epochs = epochs;
    config.validate();
    (void)subcommand;
    return config;
  }

  fs::path out_dir(const std::string& subcommand) const {
    fs::path dir = out.empty() ? fs::path(default_out_root()) / subcommand : fs::path(out);
    fs::create_directories(dir);
    return dir;
  }
};

int cmd_simulate(const CommonOpts& opts, bool dump_ledger) {
  const ExperimentConfig config = opts.resolve("simulate");
  const fs::path dir = opts.out_dir("simulate");

  std::vector<std::pair<std::uint64_t, std::string>> dumps;
  RewardSeries series = normalize(run(config, dump_ledger ? &dumps : nullptr));

  {
    auto os = open_out(dir / "rewards.csv");
    write_csv(os, series, "sim", std::nan(""));
  }
  {
    auto os = open_out(dir / "config.txt");
    write_config_echo(os, config);
  }
  for (const auto& [seed, text] : dumps) {
    auto os = open_out(dir / ("ledger_" + std::to_string(seed) + ".txt"));
    os << text;
  }

  std::cout << "simulate: N=" << config.params.n_publishers << " epochs=" << config.epochs
            << " seeds=" << config.seeds.size() << " cells=" << series.cells().size()
            << " nulls=" << series.null_count() << " -> " << (dir / "rewards.csv").string()
            << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& axis, const std::string& values_csv,
              int jobs) {
  const ExperimentConfig base = opts.resolve("sweep");
  const fs::path dir = opts.out_dir("sweep");

  std::vector<std::string> tokens;
  const std::vector<double> values = parse_values(values_csv, &tokens);

  // Validate the axis before any work starts.
  {
    ExperimentConfig probe = base;
    apply_axis(probe, axis, values.front());
  }

  std::vector<RewardSeries> all_series(values.size());
  std::vector<SweepPoint> summary(values.size());
  const int workers = std::max(1, jobs);
  for (std::size_t start = 0; start < values.size(); start += static_cast<std::size_t>(workers)) {
    std::vector<std::future<std::pair<RewardSeries, SweepPoint>>> futures;
    const std::size_t end = std::min(values.size(), start + static_cast<std::size_t>(workers));
    for (std::size_t i = start; i < end; ++i) {
      futures.push_back(std::async(std::launch::async, [&base, &axis, &values, i]() {
        ExperimentConfig config = base;
        apply_axis(config, axis, values[i]);
        config.validate();
        RewardSeries series = normalize(run(config));
        SweepPoint point;
        point.axis_value = values[i];
        point.final_median = final_window_median(series, config.epochs);
        point.final_iqr = final_window_iqr(series, config.epochs);
        point.nulls = series.null_count();
        return std::make_pair(std::move(series), point);
      }));
    }
    for (std::size_t i = start; i < end; ++i) {
      auto [series, point] = futures[i - start].get();
      all_series[i] = std::move(series);
      summary[i] = point;
    }
  }

  for (std::size_t i = 0; i < values.size(); ++i) {
    auto os = open_out(dir / ("rewards_" + axis + "_" + tokens[i] + ".csv"));
    write_csv(os, all_series[i], axis + "=" + tokens[i], values[i]);
  }
  {
    auto os = open_out(dir / "summary.txt");
    os << "axis " << axis << "\n";
    for (const SweepPoint& p : summary)
      os << p.axis_value << "\tmedian " << p.final_median << "\tiqr " << p.final_iqr
         << "\tnulls " << p.nulls << "\n";
  }
  {
    auto os = open_out(dir / "config.txt");
    write_config_echo(os, base);
  }

  std::cout << "sweep: axis=" << axis << " points=" << values.size() << " -> "
            << (dir / "summary.txt").string() << "\n";
  return 0;
}

int cmd_verify_finality(const CommonOpts& opts) {
  const ExperimentConfig config = opts.resolve("verify-finality");
  const fs::path dir = opts.out_dir("verify-finality");
  const std::uint64_t seed = config.seeds.front();
  const FinalityReport report = verify_finality(config.params, seed);

  {
    auto os = open_out(dir / "finality.txt");
    os << "passed " << (report.passed ? 1 : 0) << "\n";
    os << "lifecycles " << report.lifecycles << "\n";
    os << "pairs " << report.pairs << "\n";
    os << "max_geometric_error " << report.max_geometric_error << "\n";
    if (!report.counterexample.empty()) os << "counterexample " << report.counterexample << "\n";
  }

  if (report.passed) {
    std::cout << "verify-finality: pass (" << report.lifecycles << " lifecycles, "
              << report.pairs << " pairs, max geometric error " << report.max_geometric_error
              << ")\n";
    return 0;
  }
  std::cout << "verify-finality: FAIL " << report.counterexample << "\n";
  return 2;
}

int cmd_nonconvexity(const CommonOpts& opts, int grid) {
  const ExperimentConfig config = opts.resolve("nonconvexity");
  const fs::path dir = opts.out_dir("nonconvexity");
  const MarketParams& p = config.params;

  const WitnessResult res = nonconvexity_witness(default_payoff_section(p), p.sigma_floor,
                                                 1.0, 0.0, 1.0, grid);
  {
    auto os = open_out(dir / "nonconvexity.txt");
    os << "grid " << grid << "x" << grid << " over sigma [" << p.sigma_floor << ",1] q [0,1]\n";
    os << "excluded_points " << res.excluded_points << "\n";
    if (res.found) {
      os << "witness sigma " << res.sigma << " q " << res.q << "\n";
      os << "A " << res.probe.a << " B " << res.probe.b << " C " << res.probe.c << "\n";
      os << "discriminant " << res.probe.discriminant() << "\n";
    } else {
      os << "witness none\n";
    }
  }

  if (res.found) {
    std::cout << "nonconvexity: witness at sigma=" << res.sigma << " q=" << res.q
              << " discriminant=" << res.probe.discriminant() << "\n";
  } else {
    std::cout << "nonconvexity: no witness found on the grid\n";
  }
  return 0;
}

int cmd_exploitability(const CommonOpts& opts, int players, int iterations, int lambda_n,
                       int pi_n, int w_n, int psi_n, bool simulated) {
  const ExperimentConfig config = opts.resolve("exploitability");
  const fs::path dir = opts.out_dir("exploitability");
  const MarketParams& p = config.params;

  const std::vector<double> lambda_levels = linspace(0.0, 1.0, lambda_n);
  const std::vector<double> pi_levels = linspace(0.0, p.pi_max, pi_n);
  const std::vector<double> w_levels = linspace(0.0, 1.0, w_n);
  const std::vector<double> psi_levels = linspace(p.psi_max / psi_n, p.psi_max, psi_n);

  const DiscretizedGame game =
      simulated ? make_simulated_pricing_game(p, players, lambda_levels, pi_levels, w_levels,
                                              psi_levels, config.seeds.front())
                : make_pricing_game(p, players, lambda_levels, pi_levels, w_levels,
                                    psi_levels);
  std::vector<MixedStrategy> profile;
  const std::vector<double> trace = fictitious_play(game, iterations, &profile);

  {
    auto os = open_out(dir / "exploitability.txt");
    os << "players " << players << " grid " << game.grid_sizes.front() << "\n";
    os << "lambda_levels";
    for (double v : lambda_levels) os << ' ' << v;
    os << "\npi_levels";
    for (double v : pi_levels) os << ' ' << v;
    os << "\nw_levels";
    for (double v : w_levels) os << ' ' << v;
    os << "\npsi_levels";
    for (double v : psi_levels) os << ' ' << v;
    os << "\n";
    for (std::size_t i = 0; i < trace.size(); ++i)
      os << i << '\t' << trace[i] << '\n';
    os << "final_profile\n";
    for (int pl = 0; pl < players; ++pl) {
      os << "player " << pl;
      for (double prob : profile[static_cast<std::size_t>(pl)].probs) os << ' ' << prob;
      os << '\n';
    }
  }

  std::cout << "exploitability: start=" << trace.front() << " final=" << trace.back()
            << " after " << iterations << " iterations -> "
            << (dir / "exploitability.txt").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DAG-referenced NFT pricing game: simulation, sweeps and game analysis"};
  app.require_subcommand(1);

  CommonOpts opts;
  bool dump_ledger = false;
  bool simulated = false;
  std::string axis, values_csv;
  int jobs = 1, grid = 101, players = 2, iterations = 200;
  int lambda_n = 3, pi_n = 2, w_n = 2, psi_n = 3;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_spec,
                    "config file path, or 'default' for built-in defaults");
    sub->add_option("--seed", opts.seed, "override the seed list with a single seed");
    sub->add_option("--epochs", opts.epochs, "override the epoch count");
    sub->add_option("--out", opts.out,
                    "output directory (default: $REFMARKET_OUT/<subcommand>)");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "run one configuration and emit CSV");
  add_common(simulate);
  simulate->add_flag("--dump-ledger", dump_ledger, "also write one ledger dump per seed");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a parameter sweep");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--axis", axis, "config field to sweep")->required();
  sweep_cmd->add_option("--values", values_csv, "comma-separated axis values")->required();
  sweep_cmd->add_option("--jobs", jobs, "max concurrent runs");

  CLI::App* finality = app.add_subcommand("verify-finality", "check the settlement bound");
  add_common(finality);

  CLI::App* nonconvex = app.add_subcommand("nonconvexity", "search for a Hessian witness");
  add_common(nonconvex);
  nonconvex->add_option("--grid", grid, "grid resolution per dimension");

  CLI::App* exploit = app.add_subcommand("exploitability", "fictitious play on the grid game");
  add_common(exploit);
  exploit->add_option("--players", players, "number of players");
  exploit->add_option("--iterations", iterations, "fictitious play iterations");
  exploit->add_option("--lambda-levels", lambda_n, "down-payment grid size");
  exploit->add_option("--pi-levels", pi_n, "optional-payment grid size");
  exploit->add_option("--w-levels", w_n, "weight-share grid size");
  exploit->add_option("--psi-levels", psi_n, "unit-price grid size");
  exploit->add_flag("--simulated", simulated,
                    "evaluate payoffs with short seeded simulations instead of closed forms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opts, dump_ledger);
    if (sweep_cmd->parsed()) return cmd_sweep(opts, axis, values_csv, jobs);
    if (finality->parsed()) return cmd_verify_finality(opts);
    if (nonconvex->parsed()) return cmd_nonconvexity(opts, grid);
    if (exploit->parsed()) return cmd_exploitability(opts, players, iterations, lambda_n, pi_n,
                                                     w_n, psi_n, simulated);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
