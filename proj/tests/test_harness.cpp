#include "refmarket/harness.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <doctest.h>

using namespace refmarket;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig config;
  config.params.n_publishers = 3;
  config.params.candidate_size = 4;
  config.params.d_hat = 3;
  config.epochs = 8;
  config.seeds = {1};
  return config;
}

RewardCell value_cell(std::uint64_t seed, double raw, int epoch = 1, int publisher = 0) {
  return {seed, publisher, epoch, CellKind::value, raw, 0.0};
}

}  // namespace

TEST_CASE("normalize divides by the run's max-abs and keeps nulls") {
  RewardSeries series;
  series.add(value_cell(1, 2.0, 1));
  series.add(value_cell(1, -1.0, 2));
  series.add({1, 0, 3, CellKind::null, 0.0, 0.0});

  const RewardSeries out = normalize(series);
  CHECK(out.cells()[0].norm == doctest::Approx(1.0));
  CHECK(out.cells()[1].norm == doctest::Approx(-0.5));
  CHECK(out.cells()[2].kind == CellKind::null);
  CHECK(out.normalized());
}

TEST_CASE("normalization is per seed") {
  RewardSeries series;
  series.add(value_cell(1, 2.0));
  series.add(value_cell(1, -1.0, 2));
  series.add(value_cell(2, 4.0));
  const RewardSeries out = normalize(series);
  CHECK(out.cells()[0].norm == doctest::Approx(1.0));
  CHECK(out.cells()[1].norm == doctest::Approx(-0.5));
  CHECK(out.cells()[2].norm == doctest::Approx(1.0));
}

TEST_CASE("all-zero series normalizes to zero") {
  RewardSeries series;
  series.add({1, 0, 1, CellKind::zero, 0.0, 0.0});
  series.add(value_cell(1, 0.0, 2));
  const RewardSeries out = normalize(series);
  for (const RewardCell& c : out.cells()) CHECK(c.norm == 0.0);
}

TEST_CASE("normalization is idempotent and lands in the unit band") {
  RewardSeries series;
  series.add(value_cell(1, 3.7, 1));
  series.add(value_cell(1, -12.9, 2));
  series.add(value_cell(1, 0.4, 3));
  series.add({1, 1, 3, CellKind::zero, 0.0, 0.0});

  const RewardSeries once = normalize(series);
  for (const RewardCell& c : once.cells())
    if (c.kind != CellKind::null) {
      CHECK(c.norm >= -1.0);
      CHECK(c.norm <= 1.0);
    }
  const RewardSeries twice = normalize(once);
  for (std::size_t i = 0; i < once.cells().size(); ++i)
    CHECK(twice.cells()[i].norm == doctest::Approx(once.cells()[i].norm).epsilon(1e-15));
}

TEST_CASE("a one-epoch horizon cannot settle anything") {
  ExperimentConfig config = tiny_config();
  config.epochs = 1;
  const RewardSeries series = run(config);
  for (const RewardCell& c : series.cells()) CHECK(c.kind != CellKind::value);
  CHECK(series.cells().size() == 3);  // one decision per publisher
}

TEST_CASE("every publisher-epoch decision yields exactly one cell") {
  const ExperimentConfig config = tiny_config();
  const RewardSeries series = run(config);
  CHECK(series.cells().size() ==
        static_cast<std::size_t>(config.params.n_publishers * config.epochs));
}

TEST_CASE("null cells equal the minted-but-unsettled count") {
  ExperimentConfig config = tiny_config();
  config.epochs = 10;
  std::vector<std::pair<std::uint64_t, std::string>> dumps;
  const RewardSeries series = run(config, &dumps);

  REQUIRE(dumps.size() == 1);
  std::istringstream is(dumps[0].second);
  std::string line;
  std::size_t unsettled_mints = 0;
  while (std::getline(is, line)) {
    std::istringstream fields(line);
    std::string id, publisher, height, theta, weights, quality, price, pi_r, lambda, d,
        settled;
    std::getline(fields, id, '\t');
    std::getline(fields, publisher, '\t');
    std::getline(fields, height, '\t');
    std::getline(fields, theta, '\t');
    std::getline(fields, weights, '\t');
    std::getline(fields, quality, '\t');
    std::getline(fields, price, '\t');
    std::getline(fields, pi_r, '\t');
    std::getline(fields, lambda, '\t');
    std::getline(fields, d, '\t');
    std::getline(fields, settled, '\t');
    if (std::stol(height) >= 1 && settled == "0") ++unsettled_mints;
  }
  CHECK(series.null_count() == unsettled_mints);
}

TEST_CASE("identical configs produce byte-identical CSV") {
  const ExperimentConfig config = tiny_config();
  const auto render = [&]() {
    std::ostringstream os;
    write_csv(os, normalize(run(config)), "sim", std::nan(""));
    return os.str();
  };
  const std::string a = render();
  CHECK(a == render());
  CHECK(a.rfind("run_id,axis_value,seed,epoch,publisher,reward_raw,reward_norm\n", 0) == 0);
  // Null cells render as two empty fields.
  std::istringstream is(a);
  std::string line;
  while (std::getline(is, line)) {
    int commas = 0;
    for (char c : line)
      if (c == ',') ++commas;
    CHECK(commas == 6);
  }
}

TEST_CASE("changing the seed never changes the configuration echo") {
  ExperimentConfig a = tiny_config();
  ExperimentConfig b = tiny_config();
  b.seeds = {2};

  const auto echo_without_seeds = [](const ExperimentConfig& c) {
    std::ostringstream os;
    write_config_echo(os, c);
    std::string text = os.str(), out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
      if (line.rfind("seeds", 0) != 0) out += line + "\n";
    return out;
  };
  CHECK(echo_without_seeds(a) == echo_without_seeds(b));
}

TEST_CASE("sweep validates the axis and summarizes each value") {
  ExperimentConfig config = tiny_config();
  config.epochs = 6;
  config.seeds = {1, 2};

  const std::vector<double> values{0.01, 0.5};
  const SweepResult result = sweep(config, "q_hat", values);
  CHECK(result.series.size() == 2);
  REQUIRE(result.summary.size() == 2);
  CHECK(result.summary[0].axis_value == doctest::Approx(0.01));
  CHECK(result.summary[1].axis_value == doctest::Approx(0.5));
  for (const RewardSeries& s : result.series) CHECK(s.normalized());

  CHECK_THROWS_WITH_AS(sweep(config, "nope", values), doctest::Contains("unknown sweep axis"),
                       std::invalid_argument);
}

TEST_CASE("config echo parses back losslessly") {
  ExperimentConfig config = tiny_config();
  config.params.q_hat = 0.05;
  config.quality_dist.kind = QualityDistKind::pareto;
  config.seeds = {7, 8, 9};
  config.train_reward_running_norm = false;

  std::ostringstream os;
  write_config_echo(os, config);
  std::istringstream is(os.str());
  const ExperimentConfig parsed = parse_config(is);

  std::ostringstream os2;
  write_config_echo(os2, parsed);
  CHECK(os.str() == os2.str());
}

TEST_CASE("config parsing reports bad keys and values") {
  {
    std::istringstream is("unknown_thing = 3\n");
    CHECK_THROWS_WITH_AS(parse_config(is), doctest::Contains("unknown config key"),
                         std::invalid_argument);
  }
  {
    std::istringstream is("q_hat = banana\n");
    CHECK_THROWS_WITH_AS(parse_config(is), doctest::Contains("q_hat"), std::invalid_argument);
  }
  {
    std::istringstream is("# comment only\n\n  d_hat = 4  # trailing comment\n");
    const ExperimentConfig parsed = parse_config(is);
    CHECK(parsed.params.d_hat == 4);
  }
  {
    std::istringstream is("epochs 12\n");
    CHECK_THROWS_AS(parse_config(is), std::invalid_argument);
  }
}

TEST_CASE("every advertised sweep axis applies cleanly") {
  const std::vector<std::string> axes = sweep_axes();
  CHECK(std::find(axes.begin(), axes.end(), "q_hat") != axes.end());
  CHECK(std::find(axes.begin(), axes.end(), "candidate_size") != axes.end());
  for (const std::string& axis : axes) {
    ExperimentConfig config = tiny_config();
    CHECK_NOTHROW(apply_axis(config, axis, 1.0));
  }
}

TEST_CASE("validation names the offending field") {
  ExperimentConfig config = tiny_config();
  config.epochs = 0;
  CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("epochs"), std::invalid_argument);
  config = tiny_config();
  config.seeds.clear();
  CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("seeds"), std::invalid_argument);
  config = tiny_config();
  config.params.q_hat = -1.0;
  CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("q_hat"), std::invalid_argument);
}

TEST_CASE("final-window statistics pool normalized non-null cells") {
  RewardSeries series;
  for (int epoch = 1; epoch <= 10; ++epoch)
    series.add(value_cell(1, epoch <= 5 ? 10.0 : static_cast<double>(epoch), epoch));
  series.add({1, 0, 10, CellKind::null, 0.0, 0.0});
  const RewardSeries out = normalize(series);

  // Window of the last 5 epochs holds 6..10 scaled by 1/10.
  const double med = final_window_median(out, 10, 5);
  CHECK(med == doctest::Approx(0.8));
  CHECK(final_window_iqr(out, 10, 5) == doctest::Approx(0.2));
}

TEST_CASE("zero fraction counts inactivity against all decisions in the window") {
  RewardSeries series;
  series.add({1, 0, 9, CellKind::zero, 0.0, 0.0});
  series.add({1, 1, 9, CellKind::value, 1.0, 0.0});
  series.add({1, 0, 10, CellKind::zero, 0.0, 0.0});
  series.add({1, 1, 10, CellKind::zero, 0.0, 0.0});
  // 3 zeros over (1 seed) * (2 publishers) * (window 2) = 4 decisions
  CHECK(final_window_zero_fraction(series, 10, 2) == doctest::Approx(0.75));
}
