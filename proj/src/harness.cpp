#include "refmarket/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace refmarket {

void ExperimentConfig::validate() const {
  params.validate();
  if (epochs < 1) throw std::invalid_argument("ExperimentConfig.epochs: must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("ExperimentConfig.seeds: at least one seed");
  if (window < 0) throw std::invalid_argument("ExperimentConfig.window: must be >= 0");
  if (!(ref_score_gamma >= 0.0))
    throw std::invalid_argument("ExperimentConfig.ref_score_gamma: must be >= 0");
  if (!(psi_min > 0.0 && psi_min <= params.psi_max))
    throw std::invalid_argument("ExperimentConfig.psi_min: must lie in (0, psi_max]");
  if (learner.hidden < 1) throw std::invalid_argument("ExperimentConfig.learner_hidden: must be >= 1");
  if (learner.batch < 1) throw std::invalid_argument("ExperimentConfig.learner_batch: must be >= 1");
  if (learner.capacity < learner.batch)
    throw std::invalid_argument("ExperimentConfig.learner_capacity: must be >= batch");
}

std::size_t RewardSeries::null_count() const {
  std::size_t n = 0;
  for (const RewardCell& c : cells_)
    if (c.kind == CellKind::null) ++n;
  return n;
}

std::size_t RewardSeries::zero_count() const {
  std::size_t n = 0;
  for (const RewardCell& c : cells_)
    if (c.kind == CellKind::zero) ++n;
  return n;
}

namespace {

std::uint64_t publisher_seed(std::uint64_t seed, int publisher) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(publisher) + 1;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  return x;
}

struct PendingMint {
  Vector state;
  Vector raw_action;
  double log_prob = 0.0;
  int epoch = 0;
  int publisher = 0;
};

}  // namespace

RewardSeries run(const ExperimentConfig& config,
                 std::vector<std::pair<std::uint64_t, std::string>>* ledger_dumps) {
  config.validate();
  RewardSeries series;

  for (const std::uint64_t seed : config.seeds) {
    EnvConfig env_cfg;
    env_cfg.params = config.params;
    env_cfg.quality_dist = config.quality_dist;
    env_cfg.window = config.window;
    env_cfg.ref_score_gamma = config.ref_score_gamma;
    env_cfg.psi_min = config.psi_min;
    env_cfg.max_height_hint = config.epochs;
    GameEnv env(env_cfg, seed);
    env.bootstrap();

    LearnerConfig lcfg = config.learner;
    lcfg.obs_dim = env.layout().size();
    std::vector<PpoLearner> agents;
    agents.reserve(static_cast<std::size_t>(config.params.n_publishers));
    for (int j = 0; j < config.params.n_publishers; ++j)
      agents.emplace_back(lcfg, config.params, config.psi_min, publisher_seed(seed, j));

    std::unordered_map<NftId, PendingMint> pending;
    double running_max = 0.0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
      const int n = config.params.n_publishers;
      std::vector<Vector> states(static_cast<std::size_t>(n));
      std::vector<ActionSample> samples;
      samples.reserve(static_cast<std::size_t>(n));
      std::vector<ActionTuple> actions(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j) {
        states[static_cast<std::size_t>(j)] = env.observe(j).features;
        samples.push_back(agents[static_cast<std::size_t>(j)].choose_action(
            states[static_cast<std::size_t>(j)]));
        actions[static_cast<std::size_t>(j)] = samples.back().action;
      }

      const StepEvents events = env.step(actions);

      std::vector<bool> rejected(static_cast<std::size_t>(n), false);
      for (const RejectionEvent& r : events.rejections)
        rejected[static_cast<std::size_t>(r.publisher)] = true;

      std::vector<bool> minted(static_cast<std::size_t>(n), false);
      for (const MintEvent& m : events.mints) {
        minted[static_cast<std::size_t>(m.publisher)] = true;
        pending[m.id] = {states[static_cast<std::size_t>(m.publisher)],
                         samples[static_cast<std::size_t>(m.publisher)].raw,
                         samples[static_cast<std::size_t>(m.publisher)].log_prob, epoch,
                         m.publisher};
      }

      for (int j = 0; j < n; ++j) {
        if (minted[static_cast<std::size_t>(j)]) continue;
        // Inactive (or rejected) epochs record an exact zero and feed a
        // zero-reward transition to the learner right away.
        series.add({seed, j, epoch, CellKind::zero, 0.0, 0.0});
        Transition t;
        t.tx_id = 0;
        t.state = states[static_cast<std::size_t>(j)];
        t.next_state = states[static_cast<std::size_t>(j)];
        t.raw_action = samples[static_cast<std::size_t>(j)].raw;
        t.log_prob = samples[static_cast<std::size_t>(j)].log_prob;
        agents[static_cast<std::size_t>(j)].memorize(std::move(t));
      }

      for (const SettlementEvent& ev : events.settlements) {
        auto it = pending.find(ev.id);
        if (it == pending.end()) continue;  // bootstrap stock, not an agent decision
        const PendingMint& p = it->second;
        series.add({seed, ev.publisher, epoch, CellKind::value, ev.payoff, 0.0});
        running_max = std::max(running_max, std::abs(ev.payoff));
        Transition t;
        t.tx_id = ev.id;
        t.state = p.state;
        t.next_state = states[static_cast<std::size_t>(ev.publisher)];
        t.raw_action = p.raw_action;
        t.log_prob = p.log_prob;
        t.outcome_total = ev.outcome_total;
        t.income_total = ev.income_total;
        agents[static_cast<std::size_t>(ev.publisher)].memorize(std::move(t));
        pending.erase(it);
      }

      const double scale =
          (config.train_reward_running_norm && running_max > 0.0) ? 1.0 / running_max : 1.0;
      for (PpoLearner& agent : agents) agent.update(scale);
    }

    // Mints that never settled within the horizon.
    std::vector<const PendingMint*> leftovers;
    for (const auto& [id, p] : pending) leftovers.push_back(&p);
    std::sort(leftovers.begin(), leftovers.end(), [](const PendingMint* a, const PendingMint* b) {
      if (a->epoch != b->epoch) return a->epoch < b->epoch;
      return a->publisher < b->publisher;
    });
    for (const PendingMint* p : leftovers)
      series.add({seed, p->publisher, p->epoch, CellKind::null, 0.0, 0.0});

    if (ledger_dumps) {
      std::ostringstream os;
      env.ledger().dump(os);
      ledger_dumps->emplace_back(seed, os.str());
    }
  }

  auto& cells = series.cells();
  std::stable_sort(cells.begin(), cells.end(), [](const RewardCell& a, const RewardCell& b) {
    if (a.seed != b.seed) return a.seed < b.seed;
    if (a.epoch != b.epoch) return a.epoch < b.epoch;
    if (a.publisher != b.publisher) return a.publisher < b.publisher;
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
  return series;
}

RewardSeries normalize(RewardSeries series) {
  std::map<std::uint64_t, double> max_abs;
  for (const RewardCell& c : series.cells()) {
    if (c.kind != CellKind::value) continue;
    const double active = series.normalized() ? c.norm : c.raw;
    auto [it, inserted] = max_abs.try_emplace(c.seed, 0.0);
    it->second = std::max(it->second, std::abs(active));
  }
  for (RewardCell& c : series.cells()) {
    if (c.kind == CellKind::null) continue;
    if (c.kind == CellKind::zero) {
      c.norm = 0.0;
      continue;
    }
    const double active = series.normalized() ? c.norm : c.raw;
    const double denom = max_abs.count(c.seed) ? max_abs[c.seed] : 0.0;
    c.norm = denom > 0.0 ? active / denom : 0.0;
  }
  series.mark_normalized();
  return series;
}

namespace {

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double idx = p * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
  const double frac = idx - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

std::vector<double> window_values(const RewardSeries& series, int epochs, int window,
                                  std::optional<std::uint64_t> seed) {
  std::vector<double> vals;
  for (const RewardCell& c : series.cells()) {
    if (c.kind == CellKind::null) continue;
    if (c.epoch <= epochs - window) continue;
    if (seed && c.seed != *seed) continue;
    vals.push_back(series.normalized() ? c.norm : c.raw);
  }
  return vals;
}

}  // namespace

double final_window_median(const RewardSeries& series, int epochs, int window) {
  return percentile(window_values(series, epochs, window, std::nullopt), 0.5);
}

double final_window_iqr(const RewardSeries& series, int epochs, int window,
                        std::optional<std::uint64_t> seed) {
  std::vector<double> vals = window_values(series, epochs, window, seed);
  return percentile(vals, 0.75) - percentile(vals, 0.25);
}

double final_window_zero_fraction(const RewardSeries& series, int epochs, int window) {
  std::size_t zeros = 0, total = 0;
  std::map<std::uint64_t, bool> seeds;
  int max_pub = -1;
  for (const RewardCell& c : series.cells()) {
    seeds[c.seed] = true;
    max_pub = std::max(max_pub, c.publisher);
    if (c.epoch <= epochs - window) continue;
    if (c.kind == CellKind::zero) ++zeros;
  }
  total = seeds.size() * static_cast<std::size_t>(max_pub + 1) * static_cast<std::size_t>(window);
  return total > 0 ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
}

std::vector<std::string> sweep_axes() {
  return {"n_publishers", "q_hat",      "sigma_hat",  "d_hat",       "fixed_reward",
          "fixed_expense", "k",          "w0",         "psi_max",     "pi_max",
          "kappa_d",       "kappa_q",    "kappa_sigma", "sigma_floor", "candidate_size",
          "epochs",        "window"};
}

void apply_axis(ExperimentConfig& config, const std::string& axis, double value) {
  if (axis == "n_publishers") config.params.n_publishers = static_cast<int>(std::llround(value));
  else if (axis == "q_hat") config.params.q_hat = value;
  else if (axis == "sigma_hat") config.params.sigma_hat = value;
  else if (axis == "d_hat") config.params.d_hat = static_cast<int>(std::llround(value));
  else if (axis == "fixed_reward") config.params.fixed_reward = value;
  else if (axis == "fixed_expense") config.params.fixed_expense = value;
  else if (axis == "k") config.params.k = value;
  else if (axis == "w0") config.params.w0 = value;
  else if (axis == "psi_max") config.params.psi_max = value;
  else if (axis == "pi_max") config.params.pi_max = value;
  else if (axis == "kappa_d") config.params.kappa_d = value;
  else if (axis == "kappa_q") config.params.kappa_q = value;
  else if (axis == "kappa_sigma") config.params.kappa_sigma = value;
  else if (axis == "sigma_floor") config.params.sigma_floor = value;
  else if (axis == "candidate_size") config.params.candidate_size = static_cast<int>(std::llround(value));
  else if (axis == "epochs") config.epochs = static_cast<int>(std::llround(value));
  else if (axis == "window") config.window = static_cast<long>(std::llround(value));
  else throw std::invalid_argument("unknown sweep axis: " + axis);
}

SweepResult sweep(const ExperimentConfig& base, const std::string& axis,
                  std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("sweep: at least one value required");
  SweepResult result;
  result.axis = axis;
  for (const double value : values) {
    ExperimentConfig config = base;
    apply_axis(config, axis, value);  // throws on unknown axis
    config.validate();
    RewardSeries series = normalize(run(config));
    SweepPoint point;
    point.axis_value = value;
    point.final_median = final_window_median(series, config.epochs);
    point.final_iqr = final_window_iqr(series, config.epochs);
    point.nulls = series.null_count();
    result.values.push_back(value);
    result.summary.push_back(point);
    result.series.push_back(std::move(series));
  }
  return result;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_csv(std::ostream& os, const RewardSeries& series, const std::string& run_id,
               double axis_value) {
  os << "run_id,axis_value,seed,epoch,publisher,reward_raw,reward_norm\n";
  const std::string axis_str = std::isnan(axis_value) ? "" : format_double(axis_value);
  for (const RewardCell& c : series.cells()) {
    os << run_id << ',' << axis_str << ',' << c.seed << ',' << c.epoch << ',' << c.publisher
       << ',';
    if (c.kind == CellKind::null) {
      os << ",";  // raw and norm both empty
    } else {
      os << format_double(c.raw) << ',';
      if (series.normalized()) os << format_double(c.norm);
    }
    os << '\n';
  }
}

void write_config_echo(std::ostream& os, const ExperimentConfig& config) {
  const MarketParams& p = config.params;
  os << "# effective configuration\n";
  os << "n_publishers = " << p.n_publishers << '\n';
  os << "q_hat = " << format_double(p.q_hat) << '\n';
  os << "sigma_hat = " << format_double(p.sigma_hat) << '\n';
  os << "d_hat = " << p.d_hat << '\n';
  os << "fixed_reward = " << format_double(p.fixed_reward) << '\n';
  os << "fixed_expense = " << format_double(p.fixed_expense) << '\n';
  os << "k = " << format_double(p.k) << '\n';
  os << "w0 = " << format_double(p.w0) << '\n';
  os << "psi_max = " << format_double(p.psi_max) << '\n';
  os << "pi_max = " << format_double(p.pi_max) << '\n';
  os << "kappa_d = " << format_double(p.kappa_d) << '\n';
  os << "kappa_q = " << format_double(p.kappa_q) << '\n';
  os << "kappa_sigma = " << format_double(p.kappa_sigma) << '\n';
  os << "sigma_floor = " << format_double(p.sigma_floor) << '\n';
  os << "candidate_size = " << p.candidate_size << '\n';
  os << "decay_scales_with_downpayment = " << (p.decay_scales_with_downpayment ? 1 : 0) << '\n';
  os << "quality_dist = " << to_string(config.quality_dist.kind) << '\n';
  os << "quality_mu = " << format_double(config.quality_dist.mu) << '\n';
  os << "quality_s = " << format_double(config.quality_dist.s) << '\n';
  os << "quality_alpha = " << format_double(config.quality_dist.alpha) << '\n';
  os << "quality_lambda_p = " << format_double(config.quality_dist.lambda_p) << '\n';
  os << "epochs = " << config.epochs << '\n';
  os << "seeds = ";
  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    if (i) os << ',';
    os << config.seeds[i];
  }
  os << '\n';
  os << "window = " << config.window << '\n';
  os << "ref_score_gamma = " << format_double(config.ref_score_gamma) << '\n';
  os << "psi_min = " << format_double(config.psi_min) << '\n';
  os << "learner_hidden = " << config.learner.hidden << '\n';
  os << "learner_batch = " << config.learner.batch << '\n';
  os << "learner_capacity = " << config.learner.capacity << '\n';
  os << "learner_clip = " << format_double(config.learner.clip) << '\n';
  os << "learner_update_epochs = " << config.learner.update_epochs << '\n';
  os << "learner_step_size = " << format_double(config.learner.step_size) << '\n';
  os << "learner_entropy_bonus = " << format_double(config.learner.entropy_bonus) << '\n';
  os << "learner_value_coef = " << format_double(config.learner.value_coef) << '\n';
  os << "learner_sigma_min = " << format_double(config.learner.sigma_min) << '\n';
  os << "learner_sigma_max = " << format_double(config.learner.sigma_max) << '\n';
  os << "train_reward_running_norm = " << (config.train_reward_running_norm ? 1 : 0) << '\n';
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": not a number: " + value);
  }
  if (pos != value.size())
    throw std::invalid_argument("config key " + key + ": trailing characters: " + value);
  return v;
}

long parse_long(const std::string& key, const std::string& value) {
  const double v = parse_double(key, value);
  if (v != std::floor(v))
    throw std::invalid_argument("config key " + key + ": expected an integer: " + value);
  return static_cast<long>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on") return true;
  if (value == "0" || value == "false" || value == "off") return false;
  throw std::invalid_argument("config key " + key + ": expected a boolean: " + value);
}

}  // namespace

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig config = default_config();
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream os;
      os << "config line " << line_no << ": expected key = value";
      throw std::invalid_argument(os.str());
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    MarketParams& p = config.params;
    if (key == "n_publishers") p.n_publishers = static_cast<int>(parse_long(key, value));
    else if (key == "q_hat") p.q_hat = parse_double(key, value);
    else if (key == "sigma_hat") p.sigma_hat = parse_double(key, value);
    else if (key == "d_hat") p.d_hat = static_cast<int>(parse_long(key, value));
    else if (key == "fixed_reward") p.fixed_reward = parse_double(key, value);
    else if (key == "fixed_expense") p.fixed_expense = parse_double(key, value);
    else if (key == "k") p.k = parse_double(key, value);
    else if (key == "w0") p.w0 = parse_double(key, value);
    else if (key == "psi_max") p.psi_max = parse_double(key, value);
    else if (key == "pi_max") p.pi_max = parse_double(key, value);
    else if (key == "kappa_d") p.kappa_d = parse_double(key, value);
    else if (key == "kappa_q") p.kappa_q = parse_double(key, value);
    else if (key == "kappa_sigma") p.kappa_sigma = parse_double(key, value);
    else if (key == "sigma_floor") p.sigma_floor = parse_double(key, value);
    else if (key == "candidate_size") p.candidate_size = static_cast<int>(parse_long(key, value));
    else if (key == "decay_scales_with_downpayment")
      p.decay_scales_with_downpayment = parse_bool(key, value);
    else if (key == "quality_dist")
      config.quality_dist.kind = quality_dist_kind_from_string(value);
    else if (key == "quality_mu") config.quality_dist.mu = parse_double(key, value);
    else if (key == "quality_s") config.quality_dist.s = parse_double(key, value);
    else if (key == "quality_alpha") config.quality_dist.alpha = parse_double(key, value);
    else if (key == "quality_lambda_p") config.quality_dist.lambda_p = parse_double(key, value);
    else if (key == "epochs") config.epochs = static_cast<int>(parse_long(key, value));
    else if (key == "seeds") {
      config.seeds.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        config.seeds.push_back(static_cast<std::uint64_t>(parse_long(key, item)));
      }
      if (config.seeds.empty())
        throw std::invalid_argument("config key seeds: at least one seed required");
    } else if (key == "window") config.window = parse_long(key, value);
    else if (key == "ref_score_gamma") config.ref_score_gamma = parse_double(key, value);
    else if (key == "psi_min") config.psi_min = parse_double(key, value);
    else if (key == "learner_hidden") config.learner.hidden = static_cast<int>(parse_long(key, value));
    else if (key == "learner_batch") config.learner.batch = static_cast<int>(parse_long(key, value));
    else if (key == "learner_capacity") config.learner.capacity = static_cast<int>(parse_long(key, value));
    else if (key == "learner_clip") config.learner.clip = parse_double(key, value);
    else if (key == "learner_update_epochs")
      config.learner.update_epochs = static_cast<int>(parse_long(key, value));
    else if (key == "learner_step_size") config.learner.step_size = parse_double(key, value);
    else if (key == "learner_entropy_bonus")
      config.learner.entropy_bonus = parse_double(key, value);
    else if (key == "learner_value_coef") config.learner.value_coef = parse_double(key, value);
    else if (key == "learner_sigma_min") config.learner.sigma_min = parse_double(key, value);
    else if (key == "learner_sigma_max") config.learner.sigma_max = parse_double(key, value);
    else if (key == "train_reward_running_norm")
      config.train_reward_running_norm = parse_bool(key, value);
    else
      throw std::invalid_argument("unknown config key: " + key);
  }
  return config;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  return parse_config(is);
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

}  // namespace refmarket
