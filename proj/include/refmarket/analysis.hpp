#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refmarket/market.hpp"
#include "refmarket/types.hpp"

namespace refmarket {

// --- Finality -------------------------------------------------------------

struct FinalityReport {
  bool passed = false;
  int lifecycles = 0;
  int pairs = 0;
  double max_geometric_error = 0.0;
  std::string counterexample;  // "(sigma, d)" of the first failure, if any
};

// Randomized NFT lifecycles must produce no ledger entry past h + d, and the
// geometric partial sum identity sum_{i=0}^{d} s^i = (1 - s^{d+1}) / (1 - s)
// must hold to 1e-12 relative for 100 random (s, d) pairs.
FinalityReport verify_finality(const MarketParams& params, std::uint64_t seed);

// --- Non-convexity witness -------------------------------------------------

struct HessianProbe {
  double a = 0.0;  // d2U / ds2
  double b = 0.0;  // d2U / ds dq
  double c = 0.0;  // d2U / dq2
  double discriminant() const { return a * c - b * b; }
};

// Central-difference Hessian of f at (x, y) with the given step.
HessianProbe hessian_probe(const std::function<double(double, double)>& f, double x,
                           double y, double step = 1e-4);

struct WitnessResult {
  bool found = false;
  double sigma = 0.0;
  double q = 0.0;
  HessianProbe probe;
  int excluded_points = 0;  // grid points with non-finite evaluations
};

// Scans a grid over [sigma_lo, sigma_hi] x [q_lo, q_hi] and returns the first
// point whose Hessian discriminant drops below -1e-8.
WitnessResult nonconvexity_witness(const std::function<double(double, double)>& payoff_fn,
                                   double sigma_lo, double sigma_hi, double q_lo,
                                   double q_hi, int grid_n = 101);

// The payoff as a direct function of (sigma, q) with one referral per round,
// everything else fixed at the given parameters.
std::function<double(double, double)> default_payoff_section(const MarketParams& params);

// --- Discretized game ------------------------------------------------------

// One grid action of the single-mint pricing game.
struct GridAction {
  double lambda = 0.5;
  double pi_r = 0.0;
  double w_share = 0.5;  // dataset share of the cross-reference mass
  double psi = 0.5;
};

// Finite projection of the pricing game: per-player action grids and a
// deterministic per-player payoff over joint grid indices.
struct DiscretizedGame {
  int players = 0;
  std::vector<std::size_t> grid_sizes;
  std::function<double(int player, std::span<const int> joint)> payoff;
};

struct MixedStrategy {
  std::vector<double> probs;
  void validate() const;  // nonnegative, sums to 1 within 1e-9
  static MixedStrategy uniform(std::size_t n);
  static MixedStrategy pure(std::size_t n, std::size_t index);
};

struct BestResponse {
  int action = 0;
  double value = 0.0;
};

// Exhaustive best response of `player` against the opponents' mixtures.
// Ties resolve to the lowest grid index. Throws when the number of joint
// evaluations would exceed 1e7.
BestResponse best_response(const DiscretizedGame& game, int player,
                           const std::vector<MixedStrategy>& profile);

// Expected payoff of `player` when everyone, including the player, mixes.
double expected_value(const DiscretizedGame& game, int player,
                      const std::vector<MixedStrategy>& profile);

// max over players of (best-response value - current expected value); zero
// exactly at a mixed Nash equilibrium of the grid game.
double exploitability(const DiscretizedGame& game,
                      const std::vector<MixedStrategy>& profile);

// Anytime equilibrium-search heuristic: each player best-responds to the
// opponents' empirical action frequencies. Returns exploitability per
// iteration; the final empirical profile is written to out_profile when given.
std::vector<double> fictitious_play(const DiscretizedGame& game, int iterations,
                                    std::vector<MixedStrategy>* out_profile = nullptr);

// Closed-form pricing game with a deterministic demand model: per-round
// referral counts proportional to quality and inversely rank-ordered by price.
DiscretizedGame make_pricing_game(const MarketParams& params, int players,
                                  std::span<const double> lambda_levels,
                                  std::span<const double> pi_levels,
                                  std::span<const double> w_levels,
                                  std::span<const double> psi_levels);

// Simulation-backed variant: evaluates a joint profile by running a short
// fixed-seed market episode in which every player repeats its grid action,
// and averaging the realized settlement payoffs per player. Slower than the
// closed forms but captures the candidate-sampling dynamics. Results are
// memoized per joint profile.
DiscretizedGame make_simulated_pricing_game(const MarketParams& params, int players,
                                            std::span<const double> lambda_levels,
                                            std::span<const double> pi_levels,
                                            std::span<const double> w_levels,
                                            std::span<const double> psi_levels,
                                            std::uint64_t seed, int rounds = 40);

// Action decoded from a flat grid index of make_pricing_game's grids.
GridAction pricing_grid_action(const MarketParams& params, std::span<const double> lambda_levels,
                               std::span<const double> pi_levels,
                               std::span<const double> w_levels,
                               std::span<const double> psi_levels, std::size_t index);

}  // namespace refmarket
