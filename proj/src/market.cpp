#include "refmarket/market.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace refmarket {

namespace {

[[noreturn]] void fail_field(const char* field, const std::string& detail) {
  throw std::invalid_argument(std::string("MarketParams.") + field + ": " + detail);
}

}  // namespace

void MarketParams::validate() const {
  if (!(q_hat >= 0.0)) fail_field("q_hat", "must be >= 0");
  if (!(sigma_hat > 0.0 && sigma_hat <= 1.0)) fail_field("sigma_hat", "must lie in (0, 1]");
  if (d_hat < 1) fail_field("d_hat", "must be >= 1");
  if (!(fixed_reward > 0.0)) fail_field("fixed_reward", "must be > 0");
  if (!(fixed_expense > 0.0)) fail_field("fixed_expense", "must be > 0");
  if (!(k >= 0.0)) fail_field("k", "must be >= 0");
  if (!(w0 >= 0.0 && w0 < 1.0)) fail_field("w0", "must lie in [0, 1)");
  if (!(psi_max > 0.0)) fail_field("psi_max", "must be > 0");
  if (!(pi_max >= 0.0)) fail_field("pi_max", "must be >= 0");
  if (!(kappa_d >= 0.0)) fail_field("kappa_d", "must be >= 0");
  if (!(kappa_q >= 0.0)) fail_field("kappa_q", "must be >= 0");
  if (!(kappa_sigma >= 0.0)) fail_field("kappa_sigma", "must be >= 0");
  if (!(sigma_floor > 0.0 && sigma_floor <= sigma_hat))
    fail_field("sigma_floor", "must lie in (0, sigma_hat]");
  if (candidate_size < 1) fail_field("candidate_size", "must be >= 1");
  if (n_publishers < 1) fail_field("n_publishers", "must be >= 1");
}

int MarketParams::initial_decay(double lambda) const {
  if (!decay_scales_with_downpayment) return d_hat;
  const int scaled = static_cast<int>(std::llround(d_hat * (1.0 - lambda)));
  return scaled < 1 ? 1 : scaled;
}

WeightVector::WeightVector(double self_weight, std::vector<double> ref_weights)
    : self_(self_weight), refs_(std::move(ref_weights)) {
  double sum = self_;
  if (self_ < 0.0) throw std::invalid_argument("weight simplex violation: self weight < 0");
  for (double w : refs_) {
    if (w < 0.0) throw std::invalid_argument("weight simplex violation: negative component");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "weight simplex violation: components sum to " << sum << ", expected 1";
    throw std::invalid_argument(os.str());
  }
}

WeightVector WeightVector::normalized(double self_weight, std::vector<double> raw) {
  if (raw.empty()) return WeightVector(1.0, {});
  if (!(self_weight >= 0.0 && self_weight < 1.0))
    throw std::invalid_argument("weight simplex violation: self weight outside [0, 1)");
  double sum = 0.0;
  for (double& w : raw) {
    if (!(w >= 0.0)) w = 0.0;
    sum += w;
  }
  const double mass = 1.0 - self_weight;
  if (sum <= 0.0) {
    for (double& w : raw) w = mass / static_cast<double>(raw.size());
  } else {
    for (double& w : raw) w *= mass / sum;
  }
  // Absorb rounding into the first entry so the simplex holds exactly.
  double assigned = 0.0;
  for (std::size_t i = 1; i < raw.size(); ++i) assigned += raw[i];
  raw[0] = mass - assigned;
  if (raw[0] < 0.0) raw[0] = 0.0;
  return WeightVector(self_weight, std::move(raw));
}

DerivedTerms map_params(const MarketParams& params, double pi_r) {
  return map_params(params, pi_r, 0.0);
}

DerivedTerms map_params(const MarketParams& params, double pi_r, double lambda) {
  if (!(pi_r >= 0.0 && pi_r <= params.pi_max)) {
    std::ostringstream os;
    os << "pi_r out of range: must lie in [0, " << params.pi_max << "], got " << pi_r;
    throw std::domain_error(os.str());
  }
  DerivedTerms t;
  t.d = params.initial_decay(lambda) + static_cast<int>(std::floor(params.kappa_d * pi_r));
  t.growth = 1.0 + params.q_hat * std::exp(-params.kappa_q * pi_r);
  t.sigma = std::max(params.sigma_floor, params.sigma_hat * std::exp(-params.kappa_sigma * pi_r));
  return t;
}

std::pair<double, std::vector<double>> base_price(const MarketParams& params,
                                                  double topup,
                                                  const WeightVector& weights) {
  if (!(topup >= 0.0)) throw std::domain_error("topup must be >= 0");
  const double p0_total = params.fixed_expense + topup;
  std::vector<double> shares;
  shares.reserve(weights.ref_count() + 1);
  shares.push_back(p0_total * weights.self_weight());
  for (double w : weights.refs()) shares.push_back(p0_total * w);
  return {p0_total, std::move(shares)};
}

CostBreakdown outcome(const MarketParams& params, double lambda, double pi_r,
                      double p0_total, double epsilon) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::domain_error("lambda must lie in [0, 1]");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::domain_error("epsilon must lie in [0, 1]");
  if (!(pi_r >= 0.0 && pi_r <= params.pi_max)) {
    std::ostringstream os;
    os << "pi_r out of range: must lie in [0, " << params.pi_max << "], got " << pi_r;
    throw std::domain_error(os.str());
  }

  CostBreakdown cost;
  cost.p0_total = p0_total;

  if (lambda == 1.0) {
    if (pi_r > 0.0)
      throw std::invalid_argument(
          "inconsistent action: pi_r > 0 with lambda = 1 (full down payment fixes the cost at p0)");
    cost.down_payment = p0_total;
    cost.pi_r = 0.0;
    cost.total = p0_total;
    return cost;
  }

  const DerivedTerms terms = map_params(params, pi_r, lambda);
  cost.down_payment = lambda * p0_total;
  cost.pi_r = pi_r;
  cost.total = cost.down_payment + pi_r;
  const double slice = p0_total * (1.0 - lambda) / static_cast<double>(terms.d);
  cost.installments.reserve(static_cast<std::size_t>(terms.d));
  for (int j = 1; j <= terms.d; ++j) {
    const double amount = std::pow(terms.growth, static_cast<double>(j) - epsilon) * slice;
    cost.installments.emplace_back(j, amount);
    cost.total += amount;
  }
  return cost;
}

IncomeBreakdown income(const MarketParams& params, double sigma, int d,
                       double epsilon, std::span<const double> referral_counts,
                       bool bonus_awarded) {
  if (!(sigma > 0.0 && sigma <= 1.0)) throw std::domain_error("sigma must lie in (0, 1]");
  if (d < 1) throw std::domain_error("d must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::domain_error("epsilon must lie in [0, 1]");
  if (referral_counts.size() != static_cast<std::size_t>(d)) {
    std::ostringstream os;
    os << "referral_counts has " << referral_counts.size() << " entries, expected d = " << d;
    throw std::invalid_argument(os.str());
  }

  IncomeBreakdown inc;
  inc.per_round.reserve(static_cast<std::size_t>(d));
  inc.bonus = bonus_awarded ? params.fixed_reward : 0.0;
  inc.total = inc.bonus;
  for (int j = 1; j <= d; ++j) {
    const double count = referral_counts[static_cast<std::size_t>(j - 1)];
    const double amount = params.k * std::pow(sigma, -static_cast<double>(j)) * count * epsilon;
    inc.per_round.push_back({j, count, amount});
    inc.total += amount;
  }
  return inc;
}

double quality(const WeightVector& weights, std::span<const double> ref_qualities,
               double base_quality) {
  if (ref_qualities.size() != weights.ref_count()) {
    std::ostringstream os;
    os << "ref_qualities has " << ref_qualities.size() << " entries, expected "
       << weights.ref_count();
    throw std::invalid_argument(os.str());
  }
  if (!(base_quality >= 0.0 && base_quality <= 1.0))
    throw std::domain_error("base_quality must lie in [0, 1]");
  double eps = weights.self_weight() * base_quality;
  for (std::size_t i = 0; i < ref_qualities.size(); ++i) {
    const double q = ref_qualities[i];
    if (!(q >= 0.0 && q <= 1.0)) throw std::domain_error("ref quality must lie in [0, 1]");
    eps += weights.refs()[i] * q;
  }
  return eps;
}

}  // namespace refmarket
