#include "refmarket/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace refmarket {

QualityDistKind quality_dist_kind_from_string(const std::string& name) {
  if (name == "uniform") return QualityDistKind::uniform;
  if (name == "normal") return QualityDistKind::normal;
  if (name == "pareto") return QualityDistKind::pareto;
  if (name == "poisson") return QualityDistKind::poisson;
  throw std::invalid_argument("unknown quality distribution: " + name);
}

const char* to_string(QualityDistKind kind) {
  switch (kind) {
    case QualityDistKind::uniform: return "uniform";
    case QualityDistKind::normal: return "normal";
    case QualityDistKind::pareto: return "pareto";
    case QualityDistKind::poisson: return "poisson";
  }
  return "?";
}

double QualitySampler::draw(RandomEngine& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double q = 0.0;
  switch (dist_.kind) {
    case QualityDistKind::uniform:
      q = unit(rng);
      break;
    case QualityDistKind::normal: {
      std::normal_distribution<double> normal(dist_.mu, dist_.s);
      q = normal(rng);
      break;
    }
    case QualityDistKind::pareto: {
      // Scale 0.1 keeps the bulk below the clamp while preserving the tail.
      const double u = std::max(unit(rng), 1e-12);
      q = 0.1 * std::pow(u, -1.0 / dist_.alpha);
      break;
    }
    case QualityDistKind::poisson: {
      std::poisson_distribution<int> poisson(dist_.lambda_p);
      const double x = static_cast<double>(poisson(rng));
      poisson_max_ = std::max(poisson_max_, x);
      q = x / poisson_max_;
      break;
    }
  }
  return std::clamp(q, 0.0, 1.0);
}

ActionTuple map_raw_action(const Vector& squashed, const MarketParams& params, double psi_min) {
  if (squashed.size() != 6)
    throw std::invalid_argument("raw action must have 6 dimensions");
  ActionTuple a;
  a.trigger = squashed[0] > 0.5;
  a.lambda = squashed[1];
  a.pi_r = squashed[2] * params.pi_max;
  const double mass = 1.0 - params.w0;
  const double sum = squashed[3] + squashed[4];
  if (sum > 0.0) {
    a.w_dataset = mass * squashed[3] / sum;
    a.w_model = mass * squashed[4] / sum;
  } else {
    a.w_dataset = a.w_model = mass / 2.0;
  }
  a.price = std::max(psi_min, squashed[5] * params.psi_max);
  return a;
}

GameEnv::GameEnv(EnvConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      layout_{config_.params.candidate_size},
      ledger_(config_.params),
      quality_sampler_(config_.quality_dist),
      rng_(seed) {}

void GameEnv::bootstrap() {
  if (ledger_.height() >= 0 || ledger_.size() > 0)
    throw std::runtime_error("bootstrap: environment already started");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int pairs = config_.params.candidate_size;
  for (int i = 0; i < 2 * pairs; ++i) {
    RNft nft;
    nft.publisher = i % config_.params.n_publishers;
    nft.kind = (i < pairs) ? NftKind::dataset : NftKind::model;
    nft.weights = WeightVector(1.0, {});
    nft.quality = quality_sampler_.draw(rng_);
    nft.price = std::max(config_.psi_min, unit(rng_) * config_.params.psi_max);
    nft.pi_r = 0.0;
    nft.lambda = 1.0;  // genesis pays its flat fee up front
    nft.derived = map_params(config_.params, 0.0);
    ledger_.mint(std::move(nft), 0, CandidateSet{});
  }
  ledger_.advance_round(0);
}

const GameEnv::PublisherView& GameEnv::view(int publisher) {
  auto it = epoch_views_.find(publisher);
  if (it != epoch_views_.end()) return it->second;

  PublisherView v;
  v.candidates = ledger_.candidate_set(current_epoch(), config_.effective_window(),
                                       config_.params.candidate_size, rng_);
  v.obs = encode(v.candidates, ledger_.live_count(publisher), current_epoch());
  return epoch_views_.emplace(publisher, std::move(v)).first->second;
}

const Observation& GameEnv::observe(int publisher) {
  if (publisher < 0 || publisher >= n_publishers())
    throw std::invalid_argument("observe: publisher index out of range");
  return view(publisher).obs;
}

Observation GameEnv::encode(const CandidateSet& candidates, int pending, long height) const {
  Observation obs;
  obs.features = Vector::Zero(layout_.size());
  obs.candidate_count = static_cast<int>(candidates.entries.size());
  const MarketParams& p = config_.params;
  const double window = static_cast<double>(config_.effective_window());

  for (int slot = 0; slot < layout_.slots; ++slot) {
    if (slot >= obs.candidate_count) break;
    const CandidateEntry& c = candidates.entries[static_cast<std::size_t>(slot)];
    const int base = layout_.slot_offset(slot);
    obs.features[base + 0] = c.price / p.psi_max;
    obs.features[base + 1] = c.quality;
    obs.features[base + 2] = p.pi_max > 0.0 ? c.pi_r / p.pi_max : 0.0;
    obs.features[base + 3] = c.weights.self_weight();
    obs.features[base + 4] = c.weights.ref_count() > 0 ? c.weights.refs()[0] : 0.0;
    obs.features[base + 5] = c.weights.ref_count() > 1 ? c.weights.refs()[1] : 0.0;
    obs.features[base + 6] = std::clamp(static_cast<double>(c.age) / window, 0.0, 1.0);
    obs.features[layout_.mask_offset() + slot] = 1.0;
  }
  obs.features[layout_.own_offset() + 0] =
      std::clamp(static_cast<double>(pending) / config_.pending_scale, 0.0, 1.0);
  obs.features[layout_.own_offset() + 1] = std::clamp(
      static_cast<double>(height) / static_cast<double>(config_.max_height_hint), 0.0, 1.0);
  return obs;
}

DecodedObservation GameEnv::decode(const Observation& obs) const {
  if (obs.features.size() != layout_.size())
    throw std::invalid_argument("decode: feature length does not match layout");
  DecodedObservation out;
  const MarketParams& p = config_.params;
  const double window = static_cast<double>(config_.effective_window());
  out.slots.resize(static_cast<std::size_t>(layout_.slots));
  for (int slot = 0; slot < layout_.slots; ++slot) {
    DecodedSlot& d = out.slots[static_cast<std::size_t>(slot)];
    d.valid = obs.features[layout_.mask_offset() + slot] > 0.5;
    if (!d.valid) continue;
    const int base = layout_.slot_offset(slot);
    d.price = obs.features[base + 0] * p.psi_max;
    d.quality = obs.features[base + 1];
    d.pi_r = obs.features[base + 2] * p.pi_max;
    d.w0 = obs.features[base + 3];
    d.w1 = obs.features[base + 4];
    d.w2 = obs.features[base + 5];
    d.age = std::lround(obs.features[base + 6] * window);
  }
  out.pending = obs.features[layout_.own_offset() + 0] * config_.pending_scale;
  out.height = std::lround(obs.features[layout_.own_offset() + 1] *
                           static_cast<double>(config_.max_height_hint));
  return out;
}

namespace {

// Best candidate for a slot by quality - gamma * price; ties go to the lowest id.
const CandidateEntry* pick_reference(const CandidateSet& candidates, NftKind wanted,
                                     double gamma, const CandidateEntry* exclude) {
  const CandidateEntry* best = nullptr;
  double best_score = 0.0;
  for (const CandidateEntry& c : candidates.entries) {
    if (&c == exclude) continue;
    const bool eligible = c.kind == wanted || c.kind == NftKind::composite;
    if (!eligible) continue;
    const double score = c.quality - gamma * c.price;
    if (!best || score > best_score || (score == best_score && c.id < best->id)) {
      best = &c;
      best_score = score;
    }
  }
  return best;
}

bool validate_action(const ActionTuple& a, const MarketParams& p, std::string& reason) {
  const auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(a.lambda) || !finite(a.pi_r) || !finite(a.w_dataset) || !finite(a.w_model) ||
      !finite(a.price)) {
    reason = "non-finite action component";
    return false;
  }
  if (a.lambda < 0.0 || a.lambda > 1.0) {
    reason = "lambda outside [0, 1]";
    return false;
  }
  if (a.pi_r < 0.0 || a.pi_r > p.pi_max) {
    reason = "pi_r outside [0, pi_max]";
    return false;
  }
  if (!(a.price > 0.0) || a.price > p.psi_max) {
    reason = "price outside (0, psi_max]";
    return false;
  }
  if (a.w_dataset < 0.0 || a.w_model < 0.0) {
    reason = "negative reference weight";
    return false;
  }
  if (a.lambda == 1.0 && a.pi_r > 0.0) {
    reason = "pi_r > 0 with lambda = 1";
    return false;
  }
  return true;
}

}  // namespace

StepEvents GameEnv::step(std::span<const ActionTuple> actions) {
  const int n = n_publishers();
  if (static_cast<int>(actions.size()) != n) {
    std::ostringstream os;
    os << "step: expected " << n << " actions, got " << actions.size();
    throw std::invalid_argument(os.str());
  }

  StepEvents events;

  // Materialize every publisher's view in index order so rng consumption does
  // not depend on which observations were already requested.
  for (int j = 0; j < n; ++j) view(j);

  std::vector<int> order;
  for (int j = 0; j < n; ++j) {
    if (!actions[j].trigger) continue;
    std::string reason;
    if (!validate_action(actions[j], config_.params, reason)) {
      events.rejections.push_back({j, reason});
      continue;
    }
    order.push_back(j);
  }
  std::shuffle(order.begin(), order.end(), rng_);

  const long epoch = current_epoch();
  for (int j : order) {
    const ActionTuple& a = actions[j];
    const PublisherView& v = epoch_views_.at(j);

    const CandidateEntry* dataset =
        pick_reference(v.candidates, NftKind::dataset, config_.ref_score_gamma, nullptr);
    const CandidateEntry* model =
        pick_reference(v.candidates, NftKind::model, config_.ref_score_gamma, dataset);

    RNft nft;
    nft.publisher = j;
    nft.kind = NftKind::composite;
    std::vector<double> raw_weights;
    std::vector<double> ref_qualities;
    if (dataset) {
      nft.theta.push_back({dataset->id, NftKind::dataset});
      raw_weights.push_back(a.w_dataset);
      ref_qualities.push_back(dataset->quality);
    }
    if (model) {
      nft.theta.push_back({model->id, NftKind::model});
      raw_weights.push_back(a.w_model);
      ref_qualities.push_back(model->quality);
    }
    nft.weights = WeightVector::normalized(nft.theta.empty() ? 1.0 : config_.params.w0,
                                           std::move(raw_weights));
    const double base_quality = quality_sampler_.draw(rng_);
    nft.quality = quality(nft.weights, ref_qualities, base_quality);
    nft.price = a.price;
    nft.pi_r = a.pi_r;
    nft.lambda = a.lambda;
    nft.derived = map_params(config_.params, a.pi_r, a.lambda);

    const NftId id = ledger_.mint(std::move(nft), epoch, v.candidates);
    events.mints.push_back({j, id});
  }

  events.settlements = ledger_.advance_round(epoch);
  epoch_views_.clear();
  return events;
}

}  // namespace refmarket
