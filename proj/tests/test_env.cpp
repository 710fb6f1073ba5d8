#include "refmarket/env.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <doctest.h>

using namespace refmarket;

namespace {

EnvConfig small_env_config() {
  EnvConfig cfg;
  cfg.params.n_publishers = 3;
  cfg.params.candidate_size = 4;
  cfg.params.d_hat = 3;
  cfg.max_height_hint = 50;
  return cfg;
}

ActionTuple publish_action(double lambda = 0.5, double pi_r = 0.1, double price = 0.5) {
  ActionTuple a;
  a.trigger = true;
  a.lambda = lambda;
  a.pi_r = pi_r;
  a.w_dataset = 0.5;
  a.w_model = 0.5;
  a.price = price;
  return a;
}

std::string dump_ledger(const GameEnv& env) {
  std::ostringstream os;
  env.ledger().dump(os);
  return os.str();
}

}  // namespace

TEST_CASE("fresh environment observes all padding") {
  GameEnv env(small_env_config(), 1);
  const Observation& obs = env.observe(0);
  const ObservationLayout layout = env.layout();
  CHECK(obs.features.size() == layout.size());
  CHECK(obs.candidate_count == 0);
  for (int s = 0; s < layout.slots; ++s) CHECK(obs.features[layout.mask_offset() + s] == 0.0);
  const DecodedObservation decoded = env.decode(obs);
  for (const DecodedSlot& slot : decoded.slots) CHECK_FALSE(slot.valid);
}

TEST_CASE("bootstrap seeds two candidate-size halves and opens round 1") {
  GameEnv env(small_env_config(), 1);
  env.bootstrap();
  CHECK(env.current_epoch() == 1);
  CHECK(env.ledger().size() == 8);  // 2 * candidate_size
  int datasets = 0, models = 0;
  for (const RNft& nft : env.ledger().all()) {
    if (nft.kind == NftKind::dataset) ++datasets;
    if (nft.kind == NftKind::model) ++models;
    CHECK(nft.height == 0);
    CHECK(nft.quality >= 0.0);
    CHECK(nft.quality <= 1.0);
  }
  CHECK(datasets == 4);
  CHECK(models == 4);
  CHECK_THROWS_AS(env.bootstrap(), std::runtime_error);
}

TEST_CASE("price at the cap scales to feature 1") {
  GameEnv env(small_env_config(), 1);
  CandidateSet omega;
  omega.entries.push_back({0, 0.7, env.config().params.psi_max, 0.0, WeightVector(1.0, {}),
                           1, NftKind::dataset});
  const Observation obs = env.encode(omega, 0, 0);
  CHECK(obs.features[0] == 1.0);
}

TEST_CASE("observation encoding round-trips through decode") {
  GameEnv env(small_env_config(), 1);
  CandidateSet omega;
  omega.entries.push_back(
      {3, 0.7, 0.25, 0.05, WeightVector::normalized(0.2, {0.6, 0.4}), 2, NftKind::dataset});
  omega.entries.push_back({9, 0.4, 0.5, 0.0, WeightVector(1.0, {}), 1, NftKind::model});

  const Observation obs = env.encode(omega, 2, 7);
  const DecodedObservation decoded = env.decode(obs);

  REQUIRE(decoded.slots.size() == static_cast<std::size_t>(env.layout().slots));
  CHECK(decoded.slots[0].valid);
  CHECK(decoded.slots[0].price == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(decoded.slots[0].quality == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(decoded.slots[0].pi_r == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(decoded.slots[0].w0 == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(decoded.slots[0].age == 2);
  CHECK(decoded.slots[1].valid);
  CHECK(decoded.slots[1].w0 == doctest::Approx(1.0));
  CHECK_FALSE(decoded.slots[2].valid);
  CHECK(decoded.pending == doctest::Approx(2.0));
  CHECK(decoded.height == 7);
}

TEST_CASE("raw action mapping honors thresholds and bounds") {
  const MarketParams p;
  Vector raw(6);

  raw << 0.4, 0.3, 0.5, 0.25, 0.25, 0.9;
  ActionTuple a = map_raw_action(raw, p, 1e-3);
  CHECK_FALSE(a.trigger);  // a0 below the threshold
  CHECK(a.lambda == doctest::Approx(0.3));
  CHECK(a.pi_r == doctest::Approx(0.5 * p.pi_max));
  CHECK(a.w_dataset == doctest::Approx(a.w_model));  // symmetric split
  CHECK(a.w_dataset + a.w_model == doctest::Approx(1.0 - p.w0));
  CHECK(a.price == doctest::Approx(0.9 * p.psi_max));

  raw << 0.6, 0.3, 0.0, 0.0, 0.0, 1e-9;
  a = map_raw_action(raw, p, 1e-3);
  CHECK(a.trigger);
  CHECK(a.w_dataset == doctest::Approx((1.0 - p.w0) / 2.0));  // zero raw mass splits evenly
  CHECK(a.price == 1e-3);  // floored away from zero
}

TEST_CASE("step with no triggers advances the epoch without mints") {
  GameEnv env(small_env_config(), 3);
  env.bootstrap();
  const std::vector<ActionTuple> idle(3);
  const StepEvents events = env.step(idle);
  CHECK(events.mints.empty());
  CHECK(events.rejections.empty());
  CHECK(events.settlements.empty());  // genesis settles later
  CHECK(env.current_epoch() == 2);
  CHECK(env.ledger().size() == 8);
}

TEST_CASE("step rejects the wrong action count") {
  GameEnv env(small_env_config(), 3);
  env.bootstrap();
  const std::vector<ActionTuple> wrong(2);
  CHECK_THROWS_AS(env.step(wrong), std::invalid_argument);
}

TEST_CASE("malformed actions degrade to no-ops with a rejection event") {
  GameEnv env(small_env_config(), 3);
  env.bootstrap();
  std::vector<ActionTuple> actions(3);
  actions[0] = publish_action();
  actions[1] = publish_action();
  actions[1].lambda = 2.0;  // invalid
  actions[2] = publish_action(1.0, 0.2);  // pi_r with full down payment

  const StepEvents events = env.step(actions);
  CHECK(events.mints.size() == 1);
  CHECK(events.mints[0].publisher == 0);
  REQUIRE(events.rejections.size() == 2);
  CHECK(events.rejections[0].publisher == 1);
  CHECK(events.rejections[1].publisher == 2);
}

TEST_CASE("minted NFTs reference one dataset and one model from the candidates") {
  GameEnv env(small_env_config(), 7);
  env.bootstrap();
  std::vector<ActionTuple> actions(3, publish_action());
  const StepEvents events = env.step(actions);
  REQUIRE(events.mints.size() == 3);
  for (const MintEvent& m : events.mints) {
    const RNft& nft = env.ledger().get(m.id);
    REQUIRE(nft.theta.size() == 2);
    CHECK(nft.theta[0].kind == NftKind::dataset);
    CHECK(nft.theta[1].kind == NftKind::model);
    CHECK(nft.kind == NftKind::composite);
    // Simplex after normalization.
    double sum = nft.weights.self_weight();
    for (double w : nft.weights.refs()) sum += w;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("market stays referenced after the genesis stock expires") {
  EnvConfig cfg = small_env_config();
  cfg.params.d_hat = 2;
  GameEnv env(cfg, 11);
  env.bootstrap();
  const std::vector<ActionTuple> actions(3, publish_action(0.5, 0.0));
  for (int epoch = 0; epoch < 10; ++epoch) env.step(actions);

  // Genesis (height 0, d=2) is long settled; late mints must still reference.
  bool saw_composite_reference = false;
  for (const RNft& nft : env.ledger().all()) {
    if (nft.height < 5 || nft.theta.empty()) continue;
    for (const ThetaRef& ref : nft.theta) {
      if (env.ledger().get(ref.id).kind == NftKind::composite) saw_composite_reference = true;
      CHECK(env.ledger().get(ref.id).height < nft.height);
    }
  }
  CHECK(saw_composite_reference);
}

TEST_CASE("settlement rewards equal the income-outcome gap") {
  GameEnv env(small_env_config(), 23);
  env.bootstrap();
  const std::vector<ActionTuple> actions(3, publish_action());
  int checked = 0;
  for (int epoch = 0; epoch < 12; ++epoch) {
    const StepEvents events = env.step(actions);
    for (const SettlementEvent& ev : events.settlements) {
      CHECK(reward(ev) == doctest::Approx(ev.payoff).epsilon(1e-12));
      const RNft& nft = env.ledger().get(ev.id);
      CHECK(ev.payoff ==
            doctest::Approx(nft.income_ledger.total - nft.outcome_ledger.total).epsilon(1e-9));
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("full down payment settles at income minus p0") {
  GameEnv env(small_env_config(), 29);
  env.bootstrap();
  std::vector<ActionTuple> actions(3);
  actions[0] = publish_action(1.0, 0.0);  // lambda = 1, no optional payment

  const StepEvents first = env.step(actions);
  REQUIRE(first.mints.size() == 1);
  const NftId id = first.mints[0].id;
  const double p0 = env.ledger().get(id).outcome_ledger.p0_total;

  std::vector<ActionTuple> idle(3);
  for (int epoch = 0; epoch < 10; ++epoch) {
    const StepEvents events = env.step(idle);
    for (const SettlementEvent& ev : events.settlements) {
      if (ev.id != id) continue;
      CHECK(ev.outcome_total == p0);  // exact
      CHECK(ev.payoff == doctest::Approx(ev.income_total - p0).epsilon(1e-12));
      return;
    }
  }
  FAIL("the lambda = 1 NFT never settled");
}

TEST_CASE("identical seeds and actions build identical ledgers") {
  const auto run_once = [](std::uint64_t seed) {
    GameEnv env(small_env_config(), seed);
    env.bootstrap();
    std::vector<ActionTuple> actions(3);
    for (int epoch = 0; epoch < 15; ++epoch) {
      actions[0] = publish_action(0.5, 0.1, 0.4);
      actions[1] = publish_action(0.25, 0.0, 0.8);
      actions[2] = (epoch % 2 == 0) ? publish_action(1.0, 0.0) : ActionTuple{};
      env.step(actions);
    }
    return dump_ledger(env);
  };

  CHECK(run_once(77) == run_once(77));
  CHECK(run_once(77) != run_once(78));
}

TEST_CASE("observations are cached within an epoch") {
  GameEnv env(small_env_config(), 41);
  env.bootstrap();
  const Vector first = env.observe(1).features;
  const Vector second = env.observe(1).features;
  CHECK(first == second);
}
