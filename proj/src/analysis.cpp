#include "refmarket/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "refmarket/env.hpp"
#include "refmarket/ledger.hpp"

namespace refmarket {

FinalityReport verify_finality(const MarketParams& params, std::uint64_t seed) {
  FinalityReport report;
  RandomEngine rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Randomized lifecycles on a throwaway ledger: mint a genesis population,
  // then mint referencing NFTs for enough rounds to settle everything.
  {
    MarketParams p = params;
    p.n_publishers = 4;
    DagLedger ledger(p);
    const int genesis = 6;
    for (int i = 0; i < genesis; ++i) {
      RNft nft;
      nft.publisher = i % p.n_publishers;
      nft.kind = (i % 2 == 0) ? NftKind::dataset : NftKind::model;
      nft.weights = WeightVector(1.0, {});
      nft.quality = unit(rng);
      nft.price = 0.25 + 0.5 * unit(rng);
      nft.lambda = 1.0;
      nft.derived = map_params(p, 0.0);
      ledger.mint(std::move(nft), 0, CandidateSet{});
    }
    ledger.advance_round(0);

    int minted = genesis;
    const int max_d = map_params(p, p.pi_max).d;
    const long horizon = 2 * (max_d + 2);
    for (long h = 1; h <= horizon && report.counterexample.empty(); ++h) {
      for (int m = 0; m < 8 && minted < 128 && h <= horizon / 2; ++m) {
        CandidateSet omega = ledger.candidate_set(h - 1, p.d_hat, p.candidate_size, rng);
        RNft nft;
        nft.publisher = static_cast<int>(h) % p.n_publishers;
        nft.kind = NftKind::composite;
        if (!omega.entries.empty()) {
          nft.theta.push_back({omega.entries.front().id, NftKind::dataset});
          nft.weights = WeightVector::normalized(p.w0, {1.0});
          nft.quality = quality(nft.weights, {{omega.entries.front().quality}}, unit(rng));
        } else {
          nft.weights = WeightVector(1.0, {});
          nft.quality = unit(rng);
        }
        nft.price = 0.25 + 0.5 * unit(rng);
        nft.lambda = 0.25 + 0.5 * unit(rng);
        nft.pi_r = unit(rng) * p.pi_max;
        nft.derived = map_params(p, nft.pi_r, nft.lambda);
        ledger.mint(std::move(nft), h, omega);
        ++minted;
      }
      ledger.advance_round(h);
      ++report.lifecycles;
    }

    for (const RNft& nft : ledger.all()) {
      for (const auto& inst : nft.outcome_ledger.installments) {
        if (inst.first > nft.derived.d) {
          std::ostringstream os;
          os << "installment past d on NFT " << nft.id;
          report.counterexample = os.str();
        }
      }
      for (const auto& round : nft.income_ledger.per_round) {
        if (round.offset > nft.derived.d) {
          std::ostringstream os;
          os << "income entry past d on NFT " << nft.id;
          report.counterexample = os.str();
        }
      }
    }
    report.lifecycles = static_cast<int>(ledger.size());
  }

  // Geometric partial-sum identity for 100 random (sigma, d) pairs.
  std::uniform_real_distribution<double> sigma_draw(0.01, 0.99);
  std::uniform_int_distribution<int> d_draw(1, 50);
  for (int i = 0; i < 100; ++i) {
    const double s = sigma_draw(rng);
    const int d = d_draw(rng);
    double lhs = 0.0;
    for (int j = 0; j <= d; ++j) lhs += std::pow(s, j);
    const double rhs = (1.0 - std::pow(s, d + 1)) / (1.0 - s);
    const double err = std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs));
    report.max_geometric_error = std::max(report.max_geometric_error, err);
    if (err > 1e-12 && report.counterexample.empty()) {
      std::ostringstream os;
      os << "geometric identity failed at (sigma=" << s << ", d=" << d << ")";
      report.counterexample = os.str();
    }
    ++report.pairs;
  }

  report.passed = report.counterexample.empty();
  return report;
}

HessianProbe hessian_probe(const std::function<double(double, double)>& f, double x,
                           double y, double step) {
  const double h = step;
  HessianProbe probe;
  const double f0 = f(x, y);
  probe.a = (f(x + h, y) - 2.0 * f0 + f(x - h, y)) / (h * h);
  probe.c = (f(x, y + h) - 2.0 * f0 + f(x, y - h)) / (h * h);
  probe.b = (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) /
            (4.0 * h * h);
  return probe;
}

WitnessResult nonconvexity_witness(const std::function<double(double, double)>& payoff_fn,
                                   double sigma_lo, double sigma_hi, double q_lo,
                                   double q_hi, int grid_n) {
  if (grid_n < 2) throw std::invalid_argument("nonconvexity_witness: grid_n must be >= 2");
  WitnessResult result;
  const double ds = (sigma_hi - sigma_lo) / (grid_n - 1);
  const double dq = (q_hi - q_lo) / (grid_n - 1);
  for (int i = 0; i < grid_n; ++i) {
    const double s = sigma_lo + i * ds;
    for (int j = 0; j < grid_n; ++j) {
      const double q = q_lo + j * dq;
      const HessianProbe probe = hessian_probe(payoff_fn, s, q);
      if (!std::isfinite(probe.a) || !std::isfinite(probe.b) || !std::isfinite(probe.c)) {
        ++result.excluded_points;
        continue;
      }
      if (probe.discriminant() < -1e-8) {
        result.found = true;
        result.sigma = s;
        result.q = q;
        result.probe = probe;
        return result;
      }
    }
  }
  return result;
}

std::function<double(double, double)> default_payoff_section(const MarketParams& params) {
  // One referral per round, mid-range action, quality fixed.
  const double epsilon = 0.7;
  const double lambda = 0.5;
  const double p0 = params.fixed_expense + 0.5 * params.psi_max;
  const int d = params.d_hat;
  const double k = params.k;
  const double fixed_reward = params.fixed_reward;
  return [=](double sigma, double q) {
    double income_sum = 0.0;
    double cost_sum = 0.0;
    for (int j = 1; j <= d; ++j) {
      income_sum += k * std::pow(sigma, -j) * 1.0 * epsilon;
      cost_sum += std::pow(1.0 + q, j - epsilon) * p0 * (1.0 - lambda) / d;
    }
    return income_sum + fixed_reward - lambda * p0 - cost_sum;
  };
}

void MixedStrategy::validate() const {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw std::invalid_argument("mixed strategy has a negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("mixed strategy probabilities do not sum to 1");
}

MixedStrategy MixedStrategy::uniform(std::size_t n) {
  MixedStrategy m;
  m.probs.assign(n, 1.0 / static_cast<double>(n));
  return m;
}

MixedStrategy MixedStrategy::pure(std::size_t n, std::size_t index) {
  MixedStrategy m;
  m.probs.assign(n, 0.0);
  m.probs.at(index) = 1.0;
  return m;
}

namespace {

struct OpponentSupport {
  std::vector<int> players;                 // opponent player indices
  std::vector<std::vector<int>> actions;    // nonzero-probability actions
  std::vector<std::vector<double>> probs;   // matching probabilities
  double evaluations_per_own_action = 1.0;
};

OpponentSupport opponent_support(const DiscretizedGame& game, int player,
                                 const std::vector<MixedStrategy>& profile) {
  OpponentSupport s;
  for (int p = 0; p < game.players; ++p) {
    if (p == player) continue;
    profile[static_cast<std::size_t>(p)].validate();
    std::vector<int> acts;
    std::vector<double> probs;
    const auto& mix = profile[static_cast<std::size_t>(p)].probs;
    for (std::size_t a = 0; a < mix.size(); ++a) {
      if (mix[a] > 0.0) {
        acts.push_back(static_cast<int>(a));
        probs.push_back(mix[a]);
      }
    }
    s.evaluations_per_own_action *= static_cast<double>(acts.size());
    s.players.push_back(p);
    s.actions.push_back(std::move(acts));
    s.probs.push_back(std::move(probs));
  }
  return s;
}

// Expected payoff of `player` playing `own_action` against the support.
double expected_against(const DiscretizedGame& game, int player, int own_action,
                        const OpponentSupport& support) {
  std::vector<int> joint(static_cast<std::size_t>(game.players), 0);
  joint[static_cast<std::size_t>(player)] = own_action;
  const std::size_t k = support.players.size();
  std::vector<std::size_t> cursor(k, 0);
  double total = 0.0;
  while (true) {
    double prob = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      joint[static_cast<std::size_t>(support.players[i])] = support.actions[i][cursor[i]];
      prob *= support.probs[i][cursor[i]];
    }
    total += prob * game.payoff(player, joint);
    std::size_t i = 0;
    for (; i < k; ++i) {
      if (++cursor[i] < support.actions[i].size()) break;
      cursor[i] = 0;
    }
    if (i == k) break;
  }
  return total;
}

void check_guard(double evaluations) {
  constexpr double kMaxJointEvaluations = 1e7;
  if (evaluations > kMaxJointEvaluations) {
    std::ostringstream os;
    os << "joint evaluation count " << evaluations << " exceeds the 1e7 guard";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

BestResponse best_response(const DiscretizedGame& game, int player,
                           const std::vector<MixedStrategy>& profile) {
  if (player < 0 || player >= game.players)
    throw std::invalid_argument("best_response: player index out of range");
  const std::size_t own_n = game.grid_sizes[static_cast<std::size_t>(player)];
  const OpponentSupport support = opponent_support(game, player, profile);
  check_guard(static_cast<double>(own_n) * support.evaluations_per_own_action);

  BestResponse best{0, -std::numeric_limits<double>::infinity()};
  for (std::size_t a = 0; a < own_n; ++a) {
    const double v = expected_against(game, player, static_cast<int>(a), support);
    if (v > best.value) {
      best.action = static_cast<int>(a);
      best.value = v;
    }
  }
  return best;
}

double expected_value(const DiscretizedGame& game, int player,
                      const std::vector<MixedStrategy>& profile) {
  const OpponentSupport support = opponent_support(game, player, profile);
  const auto& own = profile[static_cast<std::size_t>(player)].probs;
  double own_support = 0.0;
  for (double p : own)
    if (p > 0.0) own_support += 1.0;
  check_guard(own_support * support.evaluations_per_own_action);

  double total = 0.0;
  for (std::size_t a = 0; a < own.size(); ++a) {
    if (own[a] <= 0.0) continue;
    total += own[a] * expected_against(game, player, static_cast<int>(a), support);
  }
  return total;
}

double exploitability(const DiscretizedGame& game,
                      const std::vector<MixedStrategy>& profile) {
  double worst = 0.0;
  for (int p = 0; p < game.players; ++p) {
    const double br = best_response(game, p, profile).value;
    const double cur = expected_value(game, p, profile);
    worst = std::max(worst, br - cur);
  }
  return std::max(worst, 0.0);
}

std::vector<double> fictitious_play(const DiscretizedGame& game, int iterations,
                                    std::vector<MixedStrategy>* out_profile) {
  std::vector<std::vector<double>> counts;
  counts.reserve(static_cast<std::size_t>(game.players));
  for (int p = 0; p < game.players; ++p)
    counts.emplace_back(game.grid_sizes[static_cast<std::size_t>(p)], 1.0);  // uniform prior

  const auto empirical = [&]() {
    std::vector<MixedStrategy> profile;
    profile.reserve(counts.size());
    for (const auto& c : counts) {
      const double total = std::accumulate(c.begin(), c.end(), 0.0);
      MixedStrategy m;
      m.probs.resize(c.size());
      for (std::size_t a = 0; a < c.size(); ++a) m.probs[a] = c[a] / total;
      // Absorb rounding so validate() holds exactly.
      double partial = 0.0;
      for (std::size_t a = 1; a < c.size(); ++a) partial += m.probs[a];
      m.probs[0] = 1.0 - partial;
      profile.push_back(std::move(m));
    }
    return profile;
  };

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    std::vector<MixedStrategy> profile = empirical();
    trace.push_back(exploitability(game, profile));
    for (int p = 0; p < game.players; ++p) {
      const BestResponse br = best_response(game, p, profile);
      counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(br.action)] += 1.0;
    }
  }
  if (out_profile) *out_profile = empirical();
  return trace;
}

namespace {

// Reference environment the grid game mints against: one dataset and one
// model with fixed quality and price.
constexpr double kRefQualityDataset = 0.9;
constexpr double kRefQualityModel = 0.6;
constexpr double kRefBaseQuality = 0.5;
constexpr double kRefPriceShareDataset = 0.4;
constexpr double kRefPriceShareModel = 0.6;

GridAction decode_action(std::span<const double> lambda_levels,
                         std::span<const double> pi_levels,
                         std::span<const double> w_levels,
                         std::span<const double> psi_levels, std::size_t index) {
  GridAction a;
  const std::size_t nl = lambda_levels.size(), np = pi_levels.size(), nw = w_levels.size(),
                    ns = psi_levels.size();
  a.lambda = lambda_levels[index % nl];
  index /= nl;
  a.pi_r = pi_levels[index % np];
  index /= np;
  a.w_share = w_levels[index % nw];
  index /= nw;
  a.psi = psi_levels[index % ns];
  return a;
}

}  // namespace

GridAction pricing_grid_action(const MarketParams&, std::span<const double> lambda_levels,
                               std::span<const double> pi_levels,
                               std::span<const double> w_levels,
                               std::span<const double> psi_levels, std::size_t index) {
  return decode_action(lambda_levels, pi_levels, w_levels, psi_levels, index);
}

DiscretizedGame make_pricing_game(const MarketParams& params, int players,
                                  std::span<const double> lambda_levels,
                                  std::span<const double> pi_levels,
                                  std::span<const double> w_levels,
                                  std::span<const double> psi_levels) {
  if (players < 1) throw std::invalid_argument("make_pricing_game: players must be >= 1");
  if (lambda_levels.empty() || pi_levels.empty() || w_levels.empty() || psi_levels.empty())
    throw std::invalid_argument("make_pricing_game: every level list must be non-empty");

  const std::size_t grid =
      lambda_levels.size() * pi_levels.size() * w_levels.size() * psi_levels.size();
  std::vector<double> ll(lambda_levels.begin(), lambda_levels.end());
  std::vector<double> pl(pi_levels.begin(), pi_levels.end());
  std::vector<double> wl(w_levels.begin(), w_levels.end());
  std::vector<double> sl(psi_levels.begin(), psi_levels.end());

  DiscretizedGame game;
  game.players = players;
  game.grid_sizes.assign(static_cast<std::size_t>(players), grid);
  game.payoff = [params, ll, pl, wl, sl](int player, std::span<const int> joint) {
    const int n = static_cast<int>(joint.size());
    std::vector<GridAction> actions(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) {
      GridAction a = decode_action(ll, pl, wl, sl, static_cast<std::size_t>(joint[p]));
      // A full down payment fixes the cost at p0; the optional payment is void.
      if (a.lambda == 1.0) a.pi_r = 0.0;
      actions[static_cast<std::size_t>(p)] = a;
    }

    // Demand: proportional to quality, divided by the price rank (cheapest
    // first, ties to the lower player index).
    std::vector<double> eps(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p) {
      const GridAction& a = actions[static_cast<std::size_t>(p)];
      const double mass = 1.0 - params.w0;
      const WeightVector weights(params.w0,
                                 {mass * a.w_share, mass * (1.0 - a.w_share)});
      const std::vector<double> ref_q{kRefQualityDataset, kRefQualityModel};
      eps[static_cast<std::size_t>(p)] = quality(weights, ref_q, kRefBaseQuality);
    }
    std::vector<int> rank(static_cast<std::size_t>(n));
    {
      std::vector<int> idx(static_cast<std::size_t>(n));
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](int lhs, int rhs) {
        const double a = actions[static_cast<std::size_t>(lhs)].psi;
        const double b = actions[static_cast<std::size_t>(rhs)].psi;
        if (a != b) return a < b;
        return lhs < rhs;
      });
      for (int r = 0; r < n; ++r) rank[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])] = r + 1;
    }

    const GridAction& own = actions[static_cast<std::size_t>(player)];
    const DerivedTerms terms = map_params(params, own.pi_r, own.lambda);
    const double demand = eps[static_cast<std::size_t>(player)] /
                          static_cast<double>(rank[static_cast<std::size_t>(player)]);
    const std::vector<double> counts(static_cast<std::size_t>(terms.d), demand);

    const double mass = 1.0 - params.w0;
    const double topup = mass * own.w_share * kRefPriceShareDataset * params.psi_max +
                         mass * (1.0 - own.w_share) * kRefPriceShareModel * params.psi_max;
    const double p0 = params.fixed_expense + topup;

    const double eps_own = eps[static_cast<std::size_t>(player)];
    const IncomeBreakdown inc =
        income(params, terms.sigma, terms.d, eps_own, counts, /*bonus_awarded=*/false);
    const CostBreakdown out = outcome(params, own.lambda, own.pi_r, p0, eps_own);
    return payoff(inc.total, out.total);
  };
  return game;
}

DiscretizedGame make_simulated_pricing_game(const MarketParams& params, int players,
                                            std::span<const double> lambda_levels,
                                            std::span<const double> pi_levels,
                                            std::span<const double> w_levels,
                                            std::span<const double> psi_levels,
                                            std::uint64_t seed, int rounds) {
  if (players < 1) throw std::invalid_argument("make_simulated_pricing_game: players must be >= 1");
  if (rounds < 1) throw std::invalid_argument("make_simulated_pricing_game: rounds must be >= 1");
  const std::size_t grid =
      lambda_levels.size() * pi_levels.size() * w_levels.size() * psi_levels.size();
  if (grid == 0)
    throw std::invalid_argument("make_simulated_pricing_game: every level list must be non-empty");

  std::vector<double> ll(lambda_levels.begin(), lambda_levels.end());
  std::vector<double> pl(pi_levels.begin(), pi_levels.end());
  std::vector<double> wl(w_levels.begin(), w_levels.end());
  std::vector<double> sl(psi_levels.begin(), psi_levels.end());

  MarketParams market = params;
  market.n_publishers = players;

  auto memo = std::make_shared<std::map<std::vector<int>, std::vector<double>>>();

  DiscretizedGame game;
  game.players = players;
  game.grid_sizes.assign(static_cast<std::size_t>(players), grid);
  game.payoff = [market, ll, pl, wl, sl, seed, rounds, memo](int player,
                                                             std::span<const int> joint) {
    const std::vector<int> key(joint.begin(), joint.end());
    auto it = memo->find(key);
    if (it == memo->end()) {
      const int n = static_cast<int>(joint.size());
      std::vector<ActionTuple> actions(static_cast<std::size_t>(n));
      for (int p = 0; p < n; ++p) {
        GridAction a = decode_action(ll, pl, wl, sl, static_cast<std::size_t>(joint[p]));
        if (a.lambda == 1.0) a.pi_r = 0.0;
        ActionTuple& act = actions[static_cast<std::size_t>(p)];
        act.trigger = true;
        act.lambda = a.lambda;
        act.pi_r = a.pi_r;
        const double mass = 1.0 - market.w0;
        act.w_dataset = mass * a.w_share;
        act.w_model = mass * (1.0 - a.w_share);
        act.price = a.psi;
      }

      EnvConfig cfg;
      cfg.params = market;
      cfg.max_height_hint = rounds;
      GameEnv env(cfg, seed);
      env.bootstrap();

      std::vector<bool> agent_minted(4096, false);
      std::vector<double> totals(static_cast<std::size_t>(n), 0.0);
      std::vector<int> settled(static_cast<std::size_t>(n), 0);
      for (int round = 0; round < rounds; ++round) {
        const StepEvents events = env.step(actions);
        for (const MintEvent& m : events.mints) {
          if (m.id >= agent_minted.size()) agent_minted.resize(m.id + 1, false);
          agent_minted[m.id] = true;
        }
        for (const SettlementEvent& ev : events.settlements) {
          if (ev.id >= agent_minted.size() || !agent_minted[ev.id]) continue;  // genesis
          totals[static_cast<std::size_t>(ev.publisher)] += ev.payoff;
          ++settled[static_cast<std::size_t>(ev.publisher)];
        }
      }
      std::vector<double> means(static_cast<std::size_t>(n), 0.0);
      for (int p = 0; p < n; ++p)
        if (settled[static_cast<std::size_t>(p)] > 0)
          means[static_cast<std::size_t>(p)] =
              totals[static_cast<std::size_t>(p)] / settled[static_cast<std::size_t>(p)];
      it = memo->emplace(key, std::move(means)).first;
    }
    return it->second[static_cast<std::size_t>(player)];
  };
  return game;
}

}  // namespace refmarket
