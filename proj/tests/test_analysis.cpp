#include "refmarket/analysis.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <doctest.h>

using namespace refmarket;

namespace {

DiscretizedGame matching_pennies() {
  DiscretizedGame game;
  game.players = 2;
  game.grid_sizes = {2, 2};
  game.payoff = [](int player, std::span<const int> joint) {
    const bool match = joint[0] == joint[1];
    const double p0 = match ? 1.0 : -1.0;
    return player == 0 ? p0 : -p0;
  };
  return game;
}

}  // namespace

TEST_CASE("geometric partial sum identity at sigma 0.5, d 3") {
  double lhs = 0.0;
  for (int i = 0; i <= 3; ++i) lhs += std::pow(0.5, i);
  const double rhs = (1.0 - std::pow(0.5, 4)) / (1.0 - 0.5);
  CHECK(lhs == doctest::Approx(1.875).epsilon(1e-15));
  CHECK(rhs == doctest::Approx(1.875).epsilon(1e-15));
}

TEST_CASE("finality verification passes for the default market") {
  const FinalityReport report = verify_finality(MarketParams{}, 4711);
  CHECK(report.passed);
  CHECK(report.counterexample.empty());
  CHECK(report.pairs == 100);
  CHECK(report.lifecycles >= 100);
  CHECK(report.max_geometric_error <= 1e-12);
}

TEST_CASE("finite-difference Hessian recovers a quadratic form") {
  const auto f = [](double x, double y) { return 2.0 * x * x + 0.5 * x * y - 3.0 * y * y; };
  const HessianProbe probe = hessian_probe(f, 0.3, -0.2);
  CHECK(std::abs(probe.a - 4.0) <= 1e-5);
  CHECK(std::abs(probe.b - 0.5) <= 1e-5);
  CHECK(std::abs(probe.c + 6.0) <= 1e-5);
}

TEST_CASE("witness search rejects a convex control") {
  const auto convex = [](double s, double q) { return -s * s - q * q; };
  const WitnessResult res = nonconvexity_witness(convex, 0.05, 1.0, 0.0, 1.0, 101);
  CHECK_FALSE(res.found);
  CHECK(res.excluded_points == 0);
}

TEST_CASE("witness search finds the saddle immediately") {
  const auto saddle = [](double s, double q) { return s * q; };
  const WitnessResult res = nonconvexity_witness(saddle, 0.05, 1.0, 0.0, 1.0, 11);
  REQUIRE(res.found);
  CHECK(res.sigma == doctest::Approx(0.05));  // first grid point
  CHECK(res.q == doctest::Approx(0.0));
  CHECK(res.probe.discriminant() == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("default payoff section is non-convex in (sigma, q)") {
  const MarketParams p;
  const WitnessResult res =
      nonconvexity_witness(default_payoff_section(p), p.sigma_floor, 1.0, 0.0, 1.0, 101);
  REQUIRE(res.found);
  CHECK(res.probe.discriminant() < -1e-8);
  CHECK(res.sigma >= p.sigma_floor);
  CHECK(res.sigma <= 1.0);
  CHECK(res.q >= 0.0);
  CHECK(res.q <= 1.0);
}

TEST_CASE("best response on a single-action grid is trivial") {
  DiscretizedGame game;
  game.players = 2;
  game.grid_sizes = {1, 1};
  game.payoff = [](int, std::span<const int>) { return 3.5; };
  const std::vector<MixedStrategy> profile{MixedStrategy::uniform(1), MixedStrategy::uniform(1)};
  const BestResponse br = best_response(game, 0, profile);
  CHECK(br.action == 0);
  CHECK(br.value == doctest::Approx(3.5));
}

TEST_CASE("best response finds the separable optimum at 0.7 of the price cap") {
  const std::vector<double> psi_levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  DiscretizedGame game;
  game.players = 2;
  game.grid_sizes = {psi_levels.size(), psi_levels.size()};
  game.payoff = [&psi_levels](int player, std::span<const int> joint) {
    const double psi = psi_levels[static_cast<std::size_t>(joint[player])];
    return -(psi - 0.7) * (psi - 0.7);
  };
  const std::vector<MixedStrategy> profile{MixedStrategy::uniform(psi_levels.size()),
                                           MixedStrategy::uniform(psi_levels.size())};
  const BestResponse br = best_response(game, 0, profile);
  CHECK(psi_levels[static_cast<std::size_t>(br.action)] == doctest::Approx(0.7));
}

TEST_CASE("best response dominates every pure action exhaustively") {
  const MarketParams params;
  const std::vector<double> lambda_levels{0.0, 0.5};
  const std::vector<double> pi_levels{0.0, params.pi_max};
  const std::vector<double> w_levels{0.25, 0.75};
  const std::vector<double> psi_levels{0.3, 0.9};
  const DiscretizedGame game =
      make_pricing_game(params, 2, lambda_levels, pi_levels, w_levels, psi_levels);

  std::vector<MixedStrategy> profile;
  MixedStrategy skew;
  skew.probs.assign(game.grid_sizes[0], 0.0);
  skew.probs[3] = 0.5;
  skew.probs[7] = 0.25;
  skew.probs[12] = 0.25;
  profile.push_back(skew);
  profile.push_back(MixedStrategy::uniform(game.grid_sizes[1]));

  for (int player = 0; player < 2; ++player) {
    const BestResponse br = best_response(game, player, profile);
    for (std::size_t a = 0; a < game.grid_sizes[static_cast<std::size_t>(player)]; ++a) {
      std::vector<MixedStrategy> pure_profile = profile;
      pure_profile[static_cast<std::size_t>(player)] =
          MixedStrategy::pure(game.grid_sizes[static_cast<std::size_t>(player)], a);
      CHECK(br.value >= expected_value(game, player, pure_profile) - 1e-12);
    }
  }
}

TEST_CASE("exploitability is zero at the matching-pennies equilibrium") {
  const DiscretizedGame game = matching_pennies();
  const std::vector<MixedStrategy> uniform{MixedStrategy::uniform(2), MixedStrategy::uniform(2)};
  CHECK(exploitability(game, uniform) <= 1e-9);
}

TEST_CASE("a profitable deviation of one shows up as exploitability one") {
  DiscretizedGame game;
  game.players = 2;
  game.grid_sizes = {2, 2};
  game.payoff = [](int player, std::span<const int> joint) {
    if (player == 0) return joint[0] == 1 ? 1.0 : 0.0;
    return 0.0;
  };
  const std::vector<MixedStrategy> pure{MixedStrategy::pure(2, 0), MixedStrategy::pure(2, 0)};
  CHECK(exploitability(game, pure) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("exploitability is nonnegative on the pricing game") {
  const MarketParams params;
  const std::vector<double> lambda_levels{0.0, 1.0};
  const std::vector<double> pi_levels{0.0, params.pi_max};
  const std::vector<double> w_levels{0.5};
  const std::vector<double> psi_levels{0.25, 0.75};
  const DiscretizedGame game =
      make_pricing_game(params, 2, lambda_levels, pi_levels, w_levels, psi_levels);
  const std::vector<MixedStrategy> uniform{MixedStrategy::uniform(game.grid_sizes[0]),
                                           MixedStrategy::uniform(game.grid_sizes[1])};
  CHECK(exploitability(game, uniform) >= 0.0);
}

TEST_CASE("fictitious play drives matching-pennies exploitability down") {
  const DiscretizedGame game = matching_pennies();
  const std::vector<double> trace = fictitious_play(game, 1000);
  REQUIRE(trace.size() == 1000);
  for (double e : trace) CHECK(e >= 0.0);
  const double head =
      std::accumulate(trace.begin(), trace.begin() + 100, 0.0) / 100.0;
  const double tail = std::accumulate(trace.end() - 100, trace.end(), 0.0) / 100.0;
  CHECK(tail <= head);  // monitored trend, not strict monotonicity
  CHECK(trace.back() <= 0.05);
}

TEST_CASE("joint evaluation guard names the bound") {
  DiscretizedGame game;
  game.players = 2;
  game.grid_sizes = {4000, 4000};
  game.payoff = [](int, std::span<const int>) { return 0.0; };
  const std::vector<MixedStrategy> uniform{MixedStrategy::uniform(4000),
                                           MixedStrategy::uniform(4000)};
  CHECK_THROWS_WITH_AS(best_response(game, 0, uniform), doctest::Contains("1e7"),
                       std::invalid_argument);
}

TEST_CASE("mixed strategies validate the simplex") {
  MixedStrategy bad;
  bad.probs = {0.5, 0.6};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.probs = {-0.1, 1.1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_NOTHROW(MixedStrategy::uniform(7).validate());
  CHECK_NOTHROW(MixedStrategy::pure(7, 3).validate());
}

TEST_CASE("simulation-backed game evaluator is deterministic and playable") {
  const MarketParams params;
  const std::vector<double> lambda_levels{0.5};
  const std::vector<double> pi_levels{0.0};
  const std::vector<double> w_levels{0.3, 0.7};
  const std::vector<double> psi_levels{0.3, 0.8};
  const DiscretizedGame game = make_simulated_pricing_game(
      params, 2, lambda_levels, pi_levels, w_levels, psi_levels, 2024, 30);

  const std::vector<int> joint{1, 2};
  const double a = game.payoff(0, joint);
  const double b = game.payoff(0, joint);
  CHECK(a == b);  // memoized and seed-deterministic
  CHECK(std::isfinite(game.payoff(1, joint)));

  const DiscretizedGame fresh = make_simulated_pricing_game(
      params, 2, lambda_levels, pi_levels, w_levels, psi_levels, 2024, 30);
  CHECK(fresh.payoff(0, joint) == a);

  const std::vector<MixedStrategy> uniform{MixedStrategy::uniform(game.grid_sizes[0]),
                                           MixedStrategy::uniform(game.grid_sizes[1])};
  const BestResponse br = best_response(game, 0, uniform);
  CHECK(br.action >= 0);
  CHECK(br.action < static_cast<int>(game.grid_sizes[0]));
  CHECK(exploitability(game, uniform) >= 0.0);
}

TEST_CASE("full down payment voids the optional payment on the grid") {
  const MarketParams params;
  const std::vector<double> lambda_levels{1.0};
  const std::vector<double> pi_levels{params.pi_max};  // would be inconsistent if charged
  const std::vector<double> w_levels{0.5};
  const std::vector<double> psi_levels{0.5};
  const DiscretizedGame game =
      make_pricing_game(params, 2, lambda_levels, pi_levels, w_levels, psi_levels);
  const std::vector<int> joint{0, 0};
  CHECK_NOTHROW(game.payoff(0, joint));
}
