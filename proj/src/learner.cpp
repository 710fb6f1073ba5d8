#include "refmarket/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace refmarket {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

namespace blocks {

Matrix dense_forward(const Matrix& W, const Matrix& b, const Matrix& X) {
  return (W * X).colwise() + b.col(0);
}

void dense_backward(const Matrix& W, const Matrix& X, const Matrix& dY, Matrix& dW,
                    Matrix& db, Matrix& dX) {
  dW.noalias() += dY * X.transpose();
  db.col(0).noalias() += dY.rowwise().sum();
  dX.noalias() += W.transpose() * dY;
}

Matrix tanh_forward(const Matrix& X) { return X.array().tanh().matrix(); }

Matrix tanh_backward(const Matrix& Y, const Matrix& dY) {
  return (dY.array() * (1.0 - Y.array().square())).matrix();
}

double gaussian_log_prob(const Vector& u, const Vector& mu, const Vector& sigma) {
  const Eigen::ArrayXd z = (u - mu).array() / sigma.array();
  return -0.5 * z.square().sum() - sigma.array().log().sum() -
         0.5 * kLog2Pi * static_cast<double>(u.size());
}

void gaussian_log_prob_backward(const Vector& u, const Vector& mu, const Vector& sigma,
                                double dlogp, Vector& dmu, Vector& dlog_sigma) {
  const Eigen::ArrayXd z = (u - mu).array() / sigma.array();
  dmu.array() += dlogp * z / sigma.array();
  dlog_sigma.array() += dlogp * (z.square() - 1.0);
}

double clip_surrogate(double ratio, double adv, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
  return std::min(ratio * adv, clipped);
}

double clip_surrogate_dratio(double ratio, double adv, double clip) {
  const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * adv;
  if (ratio * adv <= clipped) return adv;
  return (ratio > 1.0 - clip && ratio < 1.0 + clip) ? adv : 0.0;
}

}  // namespace blocks

PolicyModel::Tensor PolicyModel::make_tensor(int rows, int cols, double scale,
                                             RandomEngine& rng) {
  Tensor t;
  t.value = Matrix::Zero(rows, cols);
  if (scale > 0.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r) t.value(r, c) = u(rng);
  }
  t.grad = Matrix::Zero(rows, cols);
  t.m = Matrix::Zero(rows, cols);
  t.v = Matrix::Zero(rows, cols);
  return t;
}

PolicyModel::PolicyModel(const LearnerConfig& cfg, std::uint64_t seed)
    : obs_dim_(cfg.obs_dim),
      action_dim_(cfg.action_dim),
      hidden_(cfg.hidden),
      sigma_min_(cfg.sigma_min),
      sigma_max_(cfg.sigma_max) {
  RandomEngine rng(seed);
  const auto glorot = [](int in, int out) { return std::sqrt(6.0 / (in + out)); };
  w1_ = make_tensor(hidden_, obs_dim_, glorot(obs_dim_, hidden_), rng);
  b1_ = make_tensor(hidden_, 1, 0.0, rng);
  w2_ = make_tensor(hidden_, hidden_, glorot(hidden_, hidden_), rng);
  b2_ = make_tensor(hidden_, 1, 0.0, rng);
  // Zero heads keep the initial policy centered and the initial value exactly 0.
  wm_ = make_tensor(action_dim_, hidden_, 0.0, rng);
  bm_ = make_tensor(action_dim_, 1, 0.0, rng);
  log_sigma_ = make_tensor(action_dim_, 1, 0.0, rng);
  v1_ = make_tensor(hidden_, obs_dim_, glorot(obs_dim_, hidden_), rng);
  c1_ = make_tensor(hidden_, 1, 0.0, rng);
  v2_ = make_tensor(hidden_, hidden_, glorot(hidden_, hidden_), rng);
  c2_ = make_tensor(hidden_, 1, 0.0, rng);
  wv_ = make_tensor(1, hidden_, 0.0, rng);
  cv_ = make_tensor(1, 1, 0.0, rng);
}

std::vector<PolicyModel::Tensor*> PolicyModel::tensors() {
  return {&w1_, &b1_, &w2_, &b2_, &wm_, &bm_, &log_sigma_,
          &v1_, &c1_, &v2_, &c2_, &wv_, &cv_};
}

std::vector<const PolicyModel::Tensor*> PolicyModel::tensors() const {
  return {&w1_, &b1_, &w2_, &b2_, &wm_, &bm_, &log_sigma_,
          &v1_, &c1_, &v2_, &c2_, &wv_, &cv_};
}

void PolicyModel::zero_gradients() {
  for (Tensor* t : tensors()) t->grad.setZero();
}

Vector PolicyModel::sigma() const {
  return log_sigma_.value.col(0).array().exp().min(sigma_max_).max(sigma_min_).matrix();
}

PolicyModel::ActorForward PolicyModel::actor_forward(const Matrix& states) const {
  ActorForward f;
  f.x = states;
  f.h1 = blocks::tanh_forward(blocks::dense_forward(w1_.value, b1_.value, states));
  f.h2 = blocks::tanh_forward(blocks::dense_forward(w2_.value, b2_.value, f.h1));
  f.mu = blocks::dense_forward(wm_.value, bm_.value, f.h2);
  f.sigma = sigma();
  return f;
}

Vector PolicyModel::critic_forward(const Matrix& states) const {
  const Matrix g1 = blocks::tanh_forward(blocks::dense_forward(v1_.value, c1_.value, states));
  const Matrix g2 = blocks::tanh_forward(blocks::dense_forward(v2_.value, c2_.value, g1));
  return blocks::dense_forward(wv_.value, cv_.value, g2).row(0).transpose();
}

void PolicyModel::compute_advantages(Batch& batch) const {
  batch.advantages = batch.rewards - critic_forward(batch.states);
}

PolicyModel::LossStats PolicyModel::loss_and_gradients(const Batch& batch,
                                                       const LearnerConfig& cfg) {
  const int b_count = static_cast<int>(batch.states.cols());
  if (b_count == 0) throw std::invalid_argument("loss_and_gradients: empty batch");
  if (batch.advantages.size() != b_count)
    throw std::invalid_argument("loss_and_gradients: advantages not computed");
  zero_gradients();

  const Matrix g1 = blocks::tanh_forward(blocks::dense_forward(v1_.value, c1_.value, batch.states));
  const Matrix g2 = blocks::tanh_forward(blocks::dense_forward(v2_.value, c2_.value, g1));
  const Vector values = blocks::dense_forward(wv_.value, cv_.value, g2).row(0).transpose();

  const ActorForward f = actor_forward(batch.states);

  LossStats stats;
  const double inv_b = 1.0 / static_cast<double>(b_count);

  Matrix d_mu = Matrix::Zero(action_dim_, b_count);
  Vector d_log_sigma = Vector::Zero(action_dim_);
  Vector d_values = Vector::Zero(b_count);

  int clipped_count = 0;
  for (int i = 0; i < b_count; ++i) {
    const Vector u = batch.raw_actions.col(i);
    const Vector mu = f.mu.col(i);
    const double logp = blocks::gaussian_log_prob(u, mu, f.sigma);
    const double ratio = std::exp(logp - batch.old_log_probs[i]);
    const double adv = batch.advantages[i];

    stats.actor_loss -= blocks::clip_surrogate(ratio, adv, cfg.clip) * inv_b;
    const double d_ratio = -blocks::clip_surrogate_dratio(ratio, adv, cfg.clip) * inv_b;
    const double d_logp = d_ratio * ratio;
    if (std::abs(ratio - 1.0) > cfg.clip) ++clipped_count;

    Vector dmu_i = Vector::Zero(action_dim_);
    Vector dls_i = Vector::Zero(action_dim_);
    blocks::gaussian_log_prob_backward(u, mu, f.sigma, d_logp, dmu_i, dls_i);
    d_mu.col(i) = dmu_i;
    d_log_sigma += dls_i;

    const double err = values[i] - batch.rewards[i];
    stats.value_loss += 0.5 * err * err * inv_b;
    d_values[i] = cfg.value_coef * err * inv_b;
  }

  stats.entropy = (f.sigma.array().log() + 0.5 * (1.0 + kLog2Pi)).sum();
  d_log_sigma.array() -= cfg.entropy_bonus;  // from the -beta * entropy term

  // No scale gradient where the clamp is active.
  for (int a = 0; a < action_dim_; ++a) {
    const double raw = std::exp(log_sigma_.value(a, 0));
    if (raw <= sigma_min_ || raw >= sigma_max_) d_log_sigma[a] = 0.0;
  }
  log_sigma_.grad.col(0) += d_log_sigma;

  stats.clip_fraction = static_cast<double>(clipped_count) * inv_b;
  stats.total_loss = stats.actor_loss + cfg.value_coef * stats.value_loss -
                     cfg.entropy_bonus * stats.entropy;

  // Actor backprop.
  Matrix d_h2 = Matrix::Zero(hidden_, b_count);
  blocks::dense_backward(wm_.value, f.h2, d_mu, wm_.grad, bm_.grad, d_h2);
  const Matrix d_z2 = blocks::tanh_backward(f.h2, d_h2);
  Matrix d_h1 = Matrix::Zero(hidden_, b_count);
  blocks::dense_backward(w2_.value, f.h1, d_z2, w2_.grad, b2_.grad, d_h1);
  const Matrix d_z1 = blocks::tanh_backward(f.h1, d_h1);
  Matrix d_x = Matrix::Zero(obs_dim_, b_count);
  blocks::dense_backward(w1_.value, f.x, d_z1, w1_.grad, b1_.grad, d_x);

  // Critic backprop.
  const Matrix d_v_row = d_values.transpose();
  Matrix d_g2 = Matrix::Zero(hidden_, b_count);
  blocks::dense_backward(wv_.value, g2, d_v_row, wv_.grad, cv_.grad, d_g2);
  const Matrix d_zv2 = blocks::tanh_backward(g2, d_g2);
  Matrix d_g1 = Matrix::Zero(hidden_, b_count);
  blocks::dense_backward(v2_.value, g1, d_zv2, v2_.grad, c2_.grad, d_g1);
  const Matrix d_zv1 = blocks::tanh_backward(g1, d_g1);
  Matrix d_xv = Matrix::Zero(obs_dim_, b_count);
  blocks::dense_backward(v1_.value, batch.states, d_zv1, v1_.grad, c1_.grad, d_xv);

  return stats;
}

void PolicyModel::adam_step(double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++adam_t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
  for (Tensor* t : tensors()) {
    t->m = beta1 * t->m + (1.0 - beta1) * t->grad;
    t->v = beta2 * t->v + (1.0 - beta2) * t->grad.cwiseProduct(t->grad);
    t->value.array() -= lr * (t->m.array() / bc1) / ((t->v.array() / bc2).sqrt() + eps);
  }
  log_sigma_.value = log_sigma_.value.array()
                         .min(std::log(sigma_max_))
                         .max(std::log(sigma_min_))
                         .matrix();
}

std::size_t PolicyModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += static_cast<std::size_t>(t->value.size());
  return n;
}

std::vector<double> PolicyModel::flatten_parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Tensor* t : tensors())
    out.insert(out.end(), t->value.data(), t->value.data() + t->value.size());
  return out;
}

void PolicyModel::set_parameters(const std::vector<double>& theta) {
  if (theta.size() != parameter_count())
    throw std::invalid_argument("set_parameters: wrong parameter count");
  std::size_t off = 0;
  for (Tensor* t : tensors()) {
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(off),
              theta.begin() + static_cast<std::ptrdiff_t>(off + t->value.size()),
              t->value.data());
    off += static_cast<std::size_t>(t->value.size());
  }
}

std::vector<double> PolicyModel::flatten_gradients() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const Tensor* t : tensors())
    out.insert(out.end(), t->grad.data(), t->grad.data() + t->grad.size());
  return out;
}

namespace {

void write_matrix(std::ostream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

void read_matrix(std::istream& is, Matrix& m) {
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(m.size())));
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void PolicyModel::save(std::ostream& os) const {
  os.write("RMK1", 4);
  write_pod<std::uint32_t>(os, 1);
  write_pod<std::int32_t>(os, obs_dim_);
  write_pod<std::int32_t>(os, action_dim_);
  write_pod<std::int32_t>(os, hidden_);
  write_pod<std::int64_t>(os, adam_t_);
  for (const Tensor* t : tensors()) {
    write_matrix(os, t->value);
    write_matrix(os, t->m);
    write_matrix(os, t->v);
  }
}

void PolicyModel::load(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "RMK1")
    throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  std::int32_t obs = 0, act = 0, hid = 0;
  read_pod(is, obs);
  read_pod(is, act);
  read_pod(is, hid);
  if (obs != obs_dim_ || act != action_dim_ || hid != hidden_)
    throw std::runtime_error("checkpoint: shape mismatch");
  std::int64_t t = 0;
  read_pod(is, t);
  adam_t_ = t;
  for (Tensor* tensor : tensors()) {
    read_matrix(is, tensor->value);
    read_matrix(is, tensor->m);
    read_matrix(is, tensor->v);
  }
  if (!is) throw std::runtime_error("checkpoint: truncated");
}

RolloutBuffer::RolloutBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw std::invalid_argument("RolloutBuffer: capacity must be >= 1");
}

void RolloutBuffer::push(Transition t) {
  if (data_.size() < static_cast<std::size_t>(capacity_)) {
    data_.push_back(std::move(t));
  } else {
    data_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % static_cast<std::size_t>(capacity_);
}

PpoLearner::PpoLearner(LearnerConfig cfg, MarketParams market, double psi_min,
                       std::uint64_t seed)
    : cfg_(cfg),
      market_(std::move(market)),
      psi_min_(psi_min),
      model_(cfg, seed),
      buffer_(cfg.capacity),
      rng_(seed ^ 0x9e3779b97f4a7c15ull) {}

ActionSample PpoLearner::choose_action(const Vector& observation) {
  if (observation.size() != cfg_.obs_dim)
    throw std::invalid_argument("choose_action: observation length mismatch");
  const PolicyModel::ActorForward f = model_.actor_forward(observation);
  std::normal_distribution<double> normal(0.0, 1.0);

  ActionSample s;
  s.raw = Vector(cfg_.action_dim);
  for (int a = 0; a < cfg_.action_dim; ++a)
    s.raw[a] = f.mu(a, 0) + f.sigma[a] * normal(rng_);
  s.log_prob = blocks::gaussian_log_prob(s.raw, f.mu.col(0), f.sigma);
  s.squashed = (1.0 / (1.0 + (-s.raw.array()).exp())).matrix();
  if (cfg_.action_dim == 6) s.action = map_raw_action(s.squashed, market_, psi_min_);
  return s;
}

UpdateStats PpoLearner::update(double reward_scale) {
  UpdateStats stats;
  if (buffer_.size() < static_cast<std::size_t>(cfg_.batch)) {
    std::ostringstream os;
    os << "buffer holds " << buffer_.size() << " of " << cfg_.batch
       << " transitions required for an update";
    stats.diagnostic = os.str();
    return stats;
  }

  std::vector<std::size_t> indices(buffer_.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (int epoch = 0; epoch < cfg_.update_epochs; ++epoch) {
    for (int i = 0; i < cfg_.batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                      indices.size() - 1);
      std::swap(indices[static_cast<std::size_t>(i)], indices[pick(rng_)]);
    }

    PolicyModel::Batch batch;
    batch.states = Matrix(cfg_.obs_dim, cfg_.batch);
    batch.raw_actions = Matrix(cfg_.action_dim, cfg_.batch);
    batch.old_log_probs = Vector(cfg_.batch);
    batch.rewards = Vector(cfg_.batch);
    for (int i = 0; i < cfg_.batch; ++i) {
      const Transition& t = buffer_.at(indices[static_cast<std::size_t>(i)]);
      batch.states.col(i) = t.state;
      batch.raw_actions.col(i) = t.raw_action;
      batch.old_log_probs[i] = t.log_prob;
      batch.rewards[i] = t.reward() * reward_scale;
    }
    model_.compute_advantages(batch);

    const PolicyModel::LossStats loss = model_.loss_and_gradients(batch, cfg_);
    model_.adam_step(cfg_.step_size);

    stats.mean_loss += loss.total_loss;
    stats.actor_loss += loss.actor_loss;
    stats.value_loss += loss.value_loss;
    stats.entropy += loss.entropy;
    stats.clip_fraction += loss.clip_fraction;
  }

  const double e = static_cast<double>(cfg_.update_epochs);
  stats.mean_loss /= e;
  stats.actor_loss /= e;
  stats.value_loss /= e;
  stats.entropy /= e;
  stats.clip_fraction /= e;
  stats.updated = true;
  stats.samples = cfg_.batch * cfg_.update_epochs;
  return stats;
}

double PpoLearner::mean_action(const Vector& observation, int dim, int samples) {
  const PolicyModel::ActorForward f = model_.actor_forward(observation);
  std::normal_distribution<double> normal(0.0, 1.0);
  double acc = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double u = f.mu(dim, 0) + f.sigma[dim] * normal(rng_);
    acc += 1.0 / (1.0 + std::exp(-u));
  }
  return acc / static_cast<double>(samples);
}

void PpoLearner::save(std::ostream& os) const {
  model_.save(os);
  std::ostringstream state;
  state << rng_;
  const std::string s = state.str();
  const std::uint64_t len = s.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void PpoLearner::load(std::istream& is) {
  model_.load(is);
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw std::runtime_error("checkpoint: truncated rng state");
  std::istringstream state(s);
  state >> rng_;
}

void PpoLearner::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  save(os);
}

void PpoLearner::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  load(is);
}

}  // namespace refmarket
