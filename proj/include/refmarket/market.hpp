#pragma once

#include <span>
#include <utility>
#include <vector>

#include "refmarket/types.hpp"

namespace refmarket {

// Global constants of the pricing mechanism. All monetary values share one
// currency unit; rates are dimensionless.
struct MarketParams {
  double q_hat = 0.01;        // initial raw interest
  double sigma_hat = 0.95;    // initial descending rate, in (0,1]
  int d_hat = 10;             // initial decay parameter, rounds
  double fixed_reward = 2.0;  // bonus granted when a mint tops its candidate set
  double fixed_expense = 0.1; // flat fee for releasing any NFT
  double k = 0.25;            // income per referral per round
  double w0 = 0.2;            // self-reference weight when references exist
  double psi_max = 1.0;       // unit-price cap
  double pi_max = 0.2;        // optional-payment cap
  double kappa_d = 5.0;       // decay-extension coefficient
  double kappa_q = 1.0;       // interest-reduction coefficient
  double kappa_sigma = 0.1;   // descending-rate reduction coefficient
  double sigma_floor = 0.1;   // lower clamp for the descending rate
  int candidate_size = 10;    // |Omega|
  int n_publishers = 10;

  // Alternative decay base: d_hat scaled by (1 - lambda) instead of constant.
  // Off by default.
  bool decay_scales_with_downpayment = false;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  // Effective initial decay parameter for a given down-payment ratio.
  int initial_decay(double lambda) const;
};

// Terms an optional payment buys: longer decay, lower interest, lower
// descending rate.
struct DerivedTerms {
  int d = 0;
  double growth = 1.0;  // the factor (1 + q)
  double sigma = 1.0;
};

// Profit-sharing weights: self weight plus one entry per reference.
// Components are nonnegative and sum to 1 within 1e-9.
class WeightVector {
 public:
  WeightVector() : self_(1.0) {}
  WeightVector(double self_weight, std::vector<double> ref_weights);

  // Scales raw nonnegative reference weights so they sum to 1 - self_weight.
  // With no references the self weight becomes exactly 1.
  static WeightVector normalized(double self_weight, std::vector<double> raw);

  double self_weight() const { return self_; }
  const std::vector<double>& refs() const { return refs_; }
  std::size_t ref_count() const { return refs_.size(); }

 private:
  double self_;
  std::vector<double> refs_;
};

struct CostBreakdown {
  double p0_total = 0.0;
  double down_payment = 0.0;
  double pi_r = 0.0;
  std::vector<std::pair<int, double>> installments;  // (round offset j, amount)
  double total = 0.0;
};

struct IncomeBreakdown {
  struct Round {
    int offset = 0;         // j in 1..d
    double referrals = 0.0; // |I_(h+j)|
    double amount = 0.0;
  };
  std::vector<Round> per_round;
  double bonus = 0.0;
  double total = 0.0;
};

// d = d_hat + floor(kappa_d * pi_r)
// growth = 1 + q_hat * exp(-kappa_q * pi_r)
// sigma = max(sigma_floor, sigma_hat * exp(-kappa_sigma * pi_r))
DerivedTerms map_params(const MarketParams& params, double pi_r);
DerivedTerms map_params(const MarketParams& params, double pi_r, double lambda);

// p0 = fixed_expense + topup, split into per-recipient shares by weight.
// Returns (p0_total, shares); shares[0] is the self share.
std::pair<double, std::vector<double>> base_price(const MarketParams& params,
                                                  double topup,
                                                  const WeightVector& weights);

// Mint-time cost plus the amortized remainder with compound interest.
// lambda = 1 short-circuits to exactly p0_total and rejects pi_r > 0.
CostBreakdown outcome(const MarketParams& params, double lambda, double pi_r,
                      double p0_total, double epsilon);

// Referral income k * sigma^(-j) * count_j * epsilon for j = 1..d, plus the
// fixed bonus when awarded. referral_counts must have exactly d entries.
IncomeBreakdown income(const MarketParams& params, double sigma, int d,
                       double epsilon, std::span<const double> referral_counts,
                       bool bonus_awarded);

inline double payoff(double income_total, double outcome_total) {
  return income_total - outcome_total;
}

// Convex combination of the publisher's own draw and the referenced
// qualities; stays in [0,1].
double quality(const WeightVector& weights,
               std::span<const double> ref_qualities, double base_quality);

}  // namespace refmarket
