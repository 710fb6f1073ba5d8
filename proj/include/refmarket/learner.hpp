#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "refmarket/env.hpp"
#include "refmarket/types.hpp"

namespace refmarket {

struct LearnerConfig {
  int obs_dim = 1;
  int action_dim = 6;
  int hidden = 64;          // width of both hidden layers
  int batch = 64;           // B
  int capacity = 4096;      // replay ring capacity C
  double clip = 0.2;        // surrogate ratio clip c
  int update_epochs = 4;    // E gradient steps per update call
  double step_size = 3e-4;
  double entropy_bonus = 1e-3;
  double value_coef = 0.5;
  double sigma_min = 1e-4;
  double sigma_max = 10.0;
};

// Differentiable pieces shared by the model and the gradient-check tests.
namespace blocks {

// Y = W * X + b (the n x 1 bias broadcast over columns).
Matrix dense_forward(const Matrix& W, const Matrix& b, const Matrix& X);
// Accumulates dW, db, dX given dY. Y need not be retained.
void dense_backward(const Matrix& W, const Matrix& X, const Matrix& dY, Matrix& dW,
                    Matrix& db, Matrix& dX);

Matrix tanh_forward(const Matrix& X);
// dX given the forward output Y = tanh(X).
Matrix tanh_backward(const Matrix& Y, const Matrix& dY);

// Diagonal Gaussian log density of u under (mu, sigma).
double gaussian_log_prob(const Vector& u, const Vector& mu, const Vector& sigma);
// d(logp)/dmu and d(logp)/d(log sigma), scaled by dlogp.
void gaussian_log_prob_backward(const Vector& u, const Vector& mu, const Vector& sigma,
                                double dlogp, Vector& dmu, Vector& dlog_sigma);

// min(ratio * adv, clamp(ratio, 1-clip, 1+clip) * adv)
double clip_surrogate(double ratio, double adv, double clip);
double clip_surrogate_dratio(double ratio, double adv, double clip);

}  // namespace blocks

// Two-hidden-layer tanh actor-critic. The actor emits per-dimension Gaussian
// location; the per-dimension log scales are free parameters clamped to
// [log sigma_min, log sigma_max]. The critic shares the shape with a scalar
// head. All gradients are computed by hand.
class PolicyModel {
 public:
  PolicyModel(const LearnerConfig& cfg, std::uint64_t seed);

  struct ActorForward {
    Matrix x, h1, h2, mu;
    Vector sigma;
  };
  ActorForward actor_forward(const Matrix& states) const;
  Vector critic_forward(const Matrix& states) const;

  struct Batch {
    Matrix states;       // obs_dim x B
    Matrix raw_actions;  // action_dim x B, the pre-squash samples
    Vector old_log_probs;
    Vector rewards;      // training-scale rewards
    Vector advantages;   // reward - critic(state), fixed before the step
  };
  // Fills batch.advantages from the current critic.
  void compute_advantages(Batch& batch) const;
  struct LossStats {
    double total_loss = 0.0;
    double actor_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
  };

  // Evaluates the clipped-surrogate loss on the batch and fills the gradient
  // buffers. batch.advantages enter as constants.
  LossStats loss_and_gradients(const Batch& batch, const LearnerConfig& cfg);

  void adam_step(double lr);

  Vector sigma() const;

  int obs_dim() const { return obs_dim_; }
  int action_dim() const { return action_dim_; }
  std::size_t parameter_count() const;
  std::vector<double> flatten_parameters() const;
  void set_parameters(const std::vector<double>& theta);
  std::vector<double> flatten_gradients() const;

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  friend class PpoLearner;
  struct Tensor {
    Matrix value, grad, m, v;
  };
  Tensor make_tensor(int rows, int cols, double scale, RandomEngine& rng);
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  void zero_gradients();
  void clamp_log_sigma(const LearnerConfig& cfg);

  int obs_dim_, action_dim_, hidden_;
  double sigma_min_, sigma_max_;
  Tensor w1_, b1_, w2_, b2_, wm_, bm_, log_sigma_;
  Tensor v1_, c1_, v2_, c2_, wv_, cv_;
  long adam_t_ = 0;
};

// (TX_id, s, s', a, O, I) record; the reward is income minus outcome.
struct Transition {
  std::uint64_t tx_id = 0;
  Vector state;
  Vector next_state;
  Vector raw_action;
  double log_prob = 0.0;
  double outcome_total = 0.0;
  double income_total = 0.0;
  double reward() const { return income_total - outcome_total; }
};

class RolloutBuffer {
 public:
  explicit RolloutBuffer(int capacity);
  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  int capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return data_[i]; }

 private:
  int capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

struct ActionSample {
  ActionTuple action;
  Vector raw;       // pre-squash Gaussian sample
  Vector squashed;  // sigmoid(raw) in (0,1)^action_dim
  double log_prob = 0.0;
};

struct UpdateStats {
  bool updated = false;
  std::string diagnostic;
  double mean_loss = 0.0;
  double actor_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  int samples = 0;
};

// Per-publisher agent: owns its model, replay ring and rng exclusively.
class PpoLearner {
 public:
  PpoLearner(LearnerConfig cfg, MarketParams market, double psi_min, std::uint64_t seed);

  ActionSample choose_action(const Vector& observation);
  ActionSample choose_action(const Observation& observation) {
    return choose_action(observation.features);
  }

  void memorize(Transition t) { buffer_.push(std::move(t)); }

  // E clipped-surrogate steps on sampled minibatches. reward_scale multiplies
  // stored rewards before the advantage is formed. No-op with a diagnostic
  // when fewer than `batch` transitions are stored.
  UpdateStats update(double reward_scale = 1.0);

  // Monte-Carlo estimate of the mean squashed action for one dimension.
  double mean_action(const Vector& observation, int dim, int samples = 256);

  const RolloutBuffer& buffer() const { return buffer_; }
  PolicyModel& model() { return model_; }
  const LearnerConfig& config() const { return cfg_; }

  // Versioned binary blob: "RMK1", version, dims, every tensor (value, adam
  // moments) in declaration order, adam step count, then the serialized rng.
  void save(std::ostream& os) const;
  void load(std::istream& is);
  void save_file(const std::string& path) const;
  void load_file(const std::string& path);

 private:
  LearnerConfig cfg_;
  MarketParams market_;
  double psi_min_;
  PolicyModel model_;
  RolloutBuffer buffer_;
  RandomEngine rng_;
};

}  // namespace refmarket
