#include "refmarket/ledger.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace refmarket {

const char* to_string(NftKind kind) {
  switch (kind) {
    case NftKind::dataset: return "dataset";
    case NftKind::model: return "model";
    case NftKind::composite: return "composite";
  }
  return "?";
}

DagLedger::DagLedger(MarketParams params) : params_(std::move(params)) {
  params_.validate();
}

NftId DagLedger::mint(RNft nft, long height, const CandidateSet& drawn_from) {
  if (height != open_round_) {
    std::ostringstream os;
    os << "mint height " << height << " is not the open round " << open_round_;
    throw std::runtime_error(os.str());
  }
  if (nft.publisher < 0 || nft.publisher >= params_.n_publishers)
    throw std::invalid_argument("mint: publisher index out of range");
  if (!(nft.price > 0.0 && nft.price <= params_.psi_max))
    throw std::domain_error("mint: price must lie in (0, psi_max]");
  if (!(nft.quality >= 0.0 && nft.quality <= 1.0))
    throw std::domain_error("mint: quality must lie in [0, 1]");
  if (!(nft.lambda >= 0.0 && nft.lambda <= 1.0))
    throw std::domain_error("mint: lambda must lie in [0, 1]");
  if (nft.weights.ref_count() != nft.theta.size())
    throw std::invalid_argument("mint: one weight required per reference");

  for (const ThetaRef& ref : nft.theta) {
    if (ref.id >= nfts_.size()) {
      std::ostringstream os;
      os << "mint: dangling reference to unknown NFT " << ref.id;
      throw std::runtime_error(os.str());
    }
    const RNft& target = nfts_[ref.id];
    if (target.settled) {
      std::ostringstream os;
      os << "mint: reference to settled NFT " << ref.id;
      throw std::runtime_error(os.str());
    }
    if (target.height >= height)
      throw std::runtime_error("mint: reference must point to a strictly lower height");
  }

  const DerivedTerms expected = map_params(params_, nft.pi_r, nft.lambda);
  if (expected.d != nft.derived.d || std::abs(expected.growth - nft.derived.growth) > 1e-12 ||
      std::abs(expected.sigma - nft.derived.sigma) > 1e-12)
    throw std::invalid_argument("mint: derived terms inconsistent with (params, pi_r)");

  // Base price and mint-time charges.
  double topup = 0.0;
  for (std::size_t i = 0; i < nft.theta.size(); ++i)
    topup += nft.weights.refs()[i] * nfts_[nft.theta[i].id].price;
  auto [p0_total, shares] = base_price(params_, topup, nft.weights);

  nft.outcome_ledger = CostBreakdown{};
  nft.outcome_ledger.p0_total = p0_total;
  if (nft.lambda == 1.0) {
    if (nft.pi_r > 0.0)
      throw std::invalid_argument("mint: inconsistent action, pi_r > 0 with lambda = 1");
    nft.outcome_ledger.down_payment = p0_total;
    nft.outcome_ledger.total = p0_total;
  } else {
    nft.outcome_ledger.down_payment = nft.lambda * p0_total;
    nft.outcome_ledger.pi_r = nft.pi_r;
    nft.outcome_ledger.total = nft.outcome_ledger.down_payment + nft.pi_r;
  }

  nft.base_price_shares.clear();
  nft.base_price_shares.emplace_back(nft.publisher, shares[0]);
  for (std::size_t i = 0; i < nft.theta.size(); ++i)
    nft.base_price_shares.emplace_back(nfts_[nft.theta[i].id].publisher, shares[i + 1]);

  // Strictly better than everything it was sampled against.
  nft.bonus_awarded = true;
  for (const CandidateEntry& c : drawn_from.entries) {
    if (!(nft.quality > c.quality)) {
      nft.bonus_awarded = false;
      break;
    }
  }

  nft.income_ledger = IncomeBreakdown{};
  nft.settled = false;
  nft.height = height;
  nft.referral_counts.assign(static_cast<std::size_t>(nft.derived.d), 0.0);
  nft.id = static_cast<NftId>(nfts_.size());

  for (const ThetaRef& ref : nft.theta) {
    RNft& target = nfts_[ref.id];
    const long j = height - target.height;
    if (j >= 1 && j <= target.derived.d)
      target.referral_counts[static_cast<std::size_t>(j - 1)] += 1.0;
  }

  nfts_.push_back(std::move(nft));
  return nfts_.back().id;
}

std::vector<SettlementEvent> DagLedger::advance_round(long new_height) {
  if (new_height != open_round_) {
    std::ostringstream os;
    os << "advance_round: expected height " << open_round_ << ", got " << new_height;
    throw std::runtime_error(os.str());
  }

  std::vector<SettlementEvent> events;
  for (RNft& nft : nfts_) {
    if (nft.settled) continue;
    if (!(nft.height < new_height && new_height <= nft.height + nft.derived.d)) continue;
    const int j = static_cast<int>(new_height - nft.height);

    if (nft.lambda < 1.0) {
      const double slice =
          nft.outcome_ledger.p0_total * (1.0 - nft.lambda) / static_cast<double>(nft.derived.d);
      const double amount =
          std::pow(nft.derived.growth, static_cast<double>(j) - nft.quality) * slice;
      nft.outcome_ledger.installments.emplace_back(j, amount);
      nft.outcome_ledger.total += amount;
    }

    const double count = nft.referral_counts[static_cast<std::size_t>(j - 1)];
    const double amount = params_.k *
                          std::pow(nft.derived.sigma, -static_cast<double>(j)) * count *
                          nft.quality;
    nft.income_ledger.per_round.push_back({j, count, amount});
    nft.income_ledger.total += amount;

    if (new_height == nft.height + nft.derived.d) {
      if (nft.bonus_awarded) {
        nft.income_ledger.bonus = params_.fixed_reward;
        nft.income_ledger.total += nft.income_ledger.bonus;
      }
      nft.settled = true;
      events.push_back({nft.id, nft.publisher, new_height, nft.income_ledger.total,
                        nft.outcome_ledger.total,
                        payoff(nft.income_ledger.total, nft.outcome_ledger.total),
                        nft.bonus_awarded});
    }
  }
  ++open_round_;
  return events;
}

CandidateSet DagLedger::candidate_set(long height, long window, int size,
                                      RandomEngine& rng) const {
  if (size < 1) throw std::invalid_argument("candidate_set: size must be >= 1");
  std::vector<const RNft*> pool;
  for (const RNft& nft : nfts_) {
    if (nft.settled) continue;
    if (nft.height > height - window && nft.height <= height) pool.push_back(&nft);
  }

  CandidateSet out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  while (!pool.empty() && static_cast<int>(out.entries.size()) < size) {
    double total = 0.0;
    for (const RNft* n : pool) total += n->quality;
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(unit(rng) * static_cast<double>(pool.size()));
      if (pick >= pool.size()) pick = pool.size() - 1;
    } else {
      double u = unit(rng) * total;
      for (; pick + 1 < pool.size(); ++pick) {
        u -= pool[pick]->quality;
        if (u < 0.0) break;
      }
    }
    const RNft* chosen = pool[pick];
    out.entries.push_back({chosen->id, chosen->quality, chosen->price, chosen->pi_r,
                           chosen->weights, height - chosen->height, chosen->kind});
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

double DagLedger::referral_count(NftId id, int j) const {
  const RNft& nft = get(id);
  if (j < 1 || j > nft.derived.d)
    throw std::out_of_range("referral_count: round offset outside 1..d");
  return nft.referral_counts[static_cast<std::size_t>(j - 1)];
}

const RNft& DagLedger::get(NftId id) const {
  if (id >= nfts_.size()) {
    std::ostringstream os;
    os << "unknown NFT id " << id;
    throw std::out_of_range(os.str());
  }
  return nfts_[id];
}

int DagLedger::live_count(int publisher) const {
  int n = 0;
  for (const RNft& nft : nfts_)
    if (!nft.settled && nft.publisher == publisher) ++n;
  return n;
}

void DagLedger::dump(std::ostream& os) const {
  for (const RNft& nft : nfts_) {
    os << nft.id << '\t' << nft.publisher << '\t' << nft.height << '\t';
    if (nft.theta.empty()) {
      os << '-';
    } else {
      for (std::size_t i = 0; i < nft.theta.size(); ++i) {
        if (i) os << ',';
        os << nft.theta[i].id << ':' << to_string(nft.theta[i].kind);
      }
    }
    os << '\t' << nft.weights.self_weight();
    for (double w : nft.weights.refs()) os << ';' << w;
    os << '\t' << nft.quality << '\t' << nft.price << '\t' << nft.pi_r << '\t' << nft.lambda
       << '\t' << nft.derived.d << '\t' << (nft.settled ? 1 : 0) << '\t';
    if (nft.settled)
      os << payoff(nft.income_ledger.total, nft.outcome_ledger.total);
    else
      os << '-';
    os << '\n';
  }
}

}  // namespace refmarket
