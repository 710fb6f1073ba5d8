#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "refmarket/ledger.hpp"
#include "refmarket/market.hpp"
#include "refmarket/types.hpp"

namespace refmarket {

enum class QualityDistKind { uniform, normal, pareto, poisson };

struct QualityDist {
  QualityDistKind kind = QualityDistKind::uniform;
  double mu = 0.5;       // normal mean
  double s = 0.15;       // normal stddev
  double alpha = 1.16;   // pareto shape
  double lambda_p = 3.0; // poisson rate
};

QualityDistKind quality_dist_kind_from_string(const std::string& name);
const char* to_string(QualityDistKind kind);

// Draws qualities in [0, 1]. Poisson draws are divided by the running
// observed maximum, so the sampler is stateful.
class QualitySampler {
 public:
  explicit QualitySampler(QualityDist dist) : dist_(dist) {}
  double draw(RandomEngine& rng);

 private:
  QualityDist dist_;
  double poisson_max_ = 1.0;
};

struct EnvConfig {
  MarketParams params;
  QualityDist quality_dist;
  long window = 0;             // candidate window in rounds; 0 means d_hat
  double ref_score_gamma = 1.0;  // reference pick maximizes quality - gamma * price
  double psi_min = 1e-3;       // floor applied when mapping raw prices
  long max_height_hint = 100;  // scale for the height feature
  double pending_scale = 32.0; // scale for the pending-NFT-count feature

  long effective_window() const { return window > 0 ? window : params.d_hat; }
};

// One publisher decision. Weights here are the raw (w_dataset, w_model) pair;
// the environment normalizes them onto the simplex before minting.
struct ActionTuple {
  bool trigger = false;
  double lambda = 0.0;
  double pi_r = 0.0;
  double w_dataset = 0.0;
  double w_model = 0.0;
  double price = 0.0;
};

// Maps a squashed policy sample in (0,1)^6 onto the action bounds:
// trigger = a0 > 0.5, lambda = a1, pi_r = a2 * pi_max,
// (w_d, w_m) = (1 - w0) * normalize(a3, a4), psi = max(psi_min, a5 * psi_max).
ActionTuple map_raw_action(const Vector& squashed, const MarketParams& params, double psi_min);

// Fixed-length candidate-set encoding plus own-publisher scalars. Layout:
//   slots * [price, quality, pi_r, w0, w_ref1, w_ref2, age] ++ slots * [mask]
//   ++ [pending_scaled, height_scaled]
struct ObservationLayout {
  int slots = 0;
  static constexpr int kFeaturesPerSlot = 7;
  int size() const { return slots * (kFeaturesPerSlot + 1) + 2; }
  int slot_offset(int slot) const { return slot * kFeaturesPerSlot; }
  int mask_offset() const { return slots * kFeaturesPerSlot; }
  int own_offset() const { return mask_offset() + slots; }
};

struct Observation {
  Vector features;
  int candidate_count = 0;
};

struct DecodedSlot {
  bool valid = false;
  double price = 0.0;
  double quality = 0.0;
  double pi_r = 0.0;
  double w0 = 0.0, w1 = 0.0, w2 = 0.0;
  long age = 0;
};

struct DecodedObservation {
  std::vector<DecodedSlot> slots;
  double pending = 0.0;
  long height = 0;
};

struct MintEvent {
  int publisher = 0;
  NftId id = 0;
};

struct RejectionEvent {
  int publisher = 0;
  std::string reason;
};

struct StepEvents {
  std::vector<MintEvent> mints;
  std::vector<SettlementEvent> settlements;
  std::vector<RejectionEvent> rejections;
};

inline double reward(const SettlementEvent& event) {
  return payoff(event.income_total, event.outcome_total);
}

// Repeated pricing game: every publisher acts once per epoch, mints execute
// simultaneously at the open round, then the round closes and settlements
// become rewards. step() is the synchronization barrier; action selection may
// read the pre-step observations in parallel, mutation is serialized here.
class GameEnv {
 public:
  GameEnv(EnvConfig config, std::uint64_t seed);

  // Seeds the ledger with 2 * candidate_size genesis NFTs (half datasets,
  // half models) at round 0 and opens round 1.
  void bootstrap();

  long current_epoch() const { return ledger_.open_round(); }
  int n_publishers() const { return config_.params.n_publishers; }
  ObservationLayout layout() const { return layout_; }

  const Observation& observe(int publisher);
  StepEvents step(std::span<const ActionTuple> actions);

  const DagLedger& ledger() const { return ledger_; }
  const EnvConfig& config() const { return config_; }

  Observation encode(const CandidateSet& candidates, int pending, long height) const;
  DecodedObservation decode(const Observation& obs) const;

 private:
  struct PublisherView {
    Observation obs;
    CandidateSet candidates;
  };
  const PublisherView& view(int publisher);

  EnvConfig config_;
  ObservationLayout layout_;
  DagLedger ledger_;
  QualitySampler quality_sampler_;
  RandomEngine rng_;
  std::unordered_map<int, PublisherView> epoch_views_;
};

}  // namespace refmarket
