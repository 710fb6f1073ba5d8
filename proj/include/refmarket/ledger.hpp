#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include "refmarket/market.hpp"
#include "refmarket/types.hpp"

namespace refmarket {

enum class NftKind { dataset, model, composite };

const char* to_string(NftKind kind);

struct ThetaRef {
  NftId id = 0;
  NftKind kind = NftKind::dataset;  // the role the reference plays for the new NFT
};

// One referable NFT and its running ledgers. Income and outcome entries are
// appended round by round until settlement at height h + d.
struct RNft {
  NftId id = 0;
  int publisher = 0;
  long height = 0;  // mint round h
  std::vector<ThetaRef> theta;
  WeightVector weights;
  double quality = 0.0;  // epsilon
  double price = 0.0;    // psi
  double pi_r = 0.0;
  double lambda = 0.0;
  DerivedTerms derived;
  NftKind kind = NftKind::composite;
  CostBreakdown outcome_ledger;
  IncomeBreakdown income_ledger;
  bool settled = false;
  bool bonus_awarded = false;
  // Referrers per round offset, index j-1 for j in 1..derived.d.
  std::vector<double> referral_counts;
  // (recipient publisher, amount); entry 0 is the minting publisher's own share.
  std::vector<std::pair<int, double>> base_price_shares;
};

struct CandidateEntry {
  NftId id = 0;
  double quality = 0.0;
  double price = 0.0;
  double pi_r = 0.0;
  WeightVector weights;
  long age = 0;  // rounds since mint
  NftKind kind = NftKind::composite;
};

struct CandidateSet {
  std::vector<CandidateEntry> entries;
};

struct SettlementEvent {
  NftId id = 0;
  int publisher = 0;
  long height = 0;  // settlement round, = mint height + d
  double income_total = 0.0;
  double outcome_total = 0.0;
  double payoff = 0.0;
  bool bonus_awarded = false;
};

// Append-only reference DAG across block heights. height() is the last closed
// round (-1 for a fresh ledger); mints land at height()+1 and
// advance_round(height()+1) closes that round after its mints are in.
// Single writer: one actor mutates per round; const queries are safe between
// mutations.
class DagLedger {
 public:
  explicit DagLedger(MarketParams params);

  long height() const { return open_round_ - 1; }
  long open_round() const { return open_round_; }

  // Validates references, weights and derived terms, charges the down payment
  // and pi_r, records base-price shares, and decides the performance bonus
  // against the candidate set the references were drawn from.
  NftId mint(RNft nft, long height, const CandidateSet& drawn_from);

  // Closes round new_height: appends installment and income entries with
  // offset j = new_height - h for every live NFT, settles NFTs reaching
  // h + d, and returns their settlement events.
  std::vector<SettlementEvent> advance_round(long new_height);

  // Samples up to `size` live NFTs minted in (height - window, height],
  // without replacement, with probability proportional to quality
  // (uniform when all sampled qualities are zero).
  CandidateSet candidate_set(long height, long window, int size, RandomEngine& rng) const;

  // Number of NFTs minted at h + j referencing `id`, for 1 <= j <= d.
  double referral_count(NftId id, int j) const;

  const RNft& get(NftId id) const;
  bool contains(NftId id) const { return id < nfts_.size(); }
  std::size_t size() const { return nfts_.size(); }
  const std::vector<RNft>& all() const { return nfts_; }
  int live_count(int publisher) const;

  const MarketParams& params() const { return params_; }

  // One line per NFT, tab-separated:
  //   id  publisher  height  theta(id:kind,...)  weights(w0;w1;...)
  //   quality  price  pi_r  lambda  d  settled  payoff
  // theta is "-" when empty; payoff is "-" until settled.
  void dump(std::ostream& os) const;

 private:
  MarketParams params_;
  std::vector<RNft> nfts_;
  long open_round_ = 0;
};

}  // namespace refmarket
