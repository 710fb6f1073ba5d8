#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refmarket/env.hpp"
#include "refmarket/learner.hpp"
#include "refmarket/market.hpp"

namespace refmarket {

struct ExperimentConfig {
  MarketParams params;
  QualityDist quality_dist;
  int epochs = 100;
  std::vector<std::uint64_t> seeds = {11, 12, 13, 14, 15};
  long window = 0;  // 0 means d_hat
  double ref_score_gamma = 1.0;
  double psi_min = 1e-3;
  LearnerConfig learner;  // obs_dim is derived from the market layout at run time
  // Scale training rewards by the run's running max-abs realized reward.
  bool train_reward_running_norm = true;

  void validate() const;  // throws naming the offending field
};

// One cell per publisher-epoch decision. A publisher that does not publish
// records an exact zero; a mint records its realized payoff at the settlement
// epoch, or null at the mint epoch when still unsettled at the horizon.
enum class CellKind { value, zero, null };

struct RewardCell {
  std::uint64_t seed = 0;
  int publisher = 0;
  int epoch = 0;  // 1-based
  CellKind kind = CellKind::zero;
  double raw = 0.0;
  double norm = 0.0;
};

class RewardSeries {
 public:
  void add(RewardCell cell) { cells_.push_back(cell); }
  const std::vector<RewardCell>& cells() const { return cells_; }
  std::vector<RewardCell>& cells() { return cells_; }
  bool normalized() const { return normalized_; }
  void mark_normalized() { normalized_ = true; }
  std::size_t null_count() const;
  std::size_t zero_count() const;

 private:
  std::vector<RewardCell> cells_;
  bool normalized_ = false;
};

// Executes the configured number of epochs with one learner per publisher,
// for every seed in the config. Deterministic per seed. When ledger_dumps is
// given it receives one (seed, dump text) pair per seed.
RewardSeries run(const ExperimentConfig& config,
                 std::vector<std::pair<std::uint64_t, std::string>>* ledger_dumps = nullptr);

// Per-seed max-abs normalization: every non-null value is divided by that
// run's largest absolute value (zero stays zero when the maximum is zero);
// nulls are untouched. Idempotent.
RewardSeries normalize(RewardSeries series);

struct SweepPoint {
  double axis_value = 0.0;
  double final_median = 0.0;  // over the last 10 epochs, publishers and seeds pooled
  double final_iqr = 0.0;
  std::size_t nulls = 0;
};

struct SweepResult {
  std::string axis;
  std::vector<double> values;
  std::vector<RewardSeries> series;  // normalized, one per axis value
  std::vector<SweepPoint> summary;
};

SweepResult sweep(const ExperimentConfig& base, const std::string& axis,
                  std::span<const double> values);

// Numeric config fields addressable by sweep and the key-value config format.
std::vector<std::string> sweep_axes();
void apply_axis(ExperimentConfig& config, const std::string& axis, double value);

// Pooled statistics helpers over normalized non-null cells.
double final_window_median(const RewardSeries& series, int epochs, int window = 10);
double final_window_iqr(const RewardSeries& series, int epochs, int window = 10,
                        std::optional<std::uint64_t> seed = std::nullopt);
double final_window_zero_fraction(const RewardSeries& series, int epochs, int window = 10);

// CSV schema: run_id,axis_value,seed,epoch,publisher,reward_raw,reward_norm
// with nulls rendered as empty fields.
void write_csv(std::ostream& os, const RewardSeries& series, const std::string& run_id,
               double axis_value);

// Flat key = value echo of every effective parameter; parses back losslessly.
void write_config_echo(std::ostream& os, const ExperimentConfig& config);

// Key-value configuration with '#' comments. Unknown keys are errors.
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig default_config();

}  // namespace refmarket
