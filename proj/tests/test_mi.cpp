#include <cmath>
#include <sstream>
#include <string>

#include "doctest.h"
#include "lingagg/error.hpp"
#include "lingagg/mi.hpp"
#include "lingagg/synth.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lingagg;

namespace {

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.hidden = {32, 32};
  cfg.seed = 3;
  return cfg;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("empirical entropy") {
  const std::vector<std::uint32_t> uniform{0, 1, 2, 3, 0, 1, 2, 3};
  CHECK(empirical_entropy(uniform) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  const std::vector<std::uint32_t> single{2, 2, 2};
  CHECK(empirical_entropy(single) == 0.0);
  const std::vector<std::uint32_t> skew{0, 0, 0, 1};
  CHECK(empirical_entropy(skew) == doctest::Approx(oracle::binary_entropy(0.25)).epsilon(1e-14));
  CHECK_THROWS_AS(empirical_entropy(std::vector<std::uint32_t>{}), InputError);
}

TEST_CASE("bound never exceeds label entropy") {
  auto ds = support::random_dataset(600, 3, 4, 5, 2);
  const auto report = layerwise_analysis(ds, quick_config());
  REQUIRE(report.entries.size() == 3);
  for (const auto& e : report.entries) {
    CHECK(e.context == "layer");
    CHECK(e.bound <= e.h_y);
    CHECK(e.bound == e.h_y - e.ce);
    CHECK(e.n_eval == 120);
  }
  // Unrelated features: the bound should sit near or below zero.
  for (double b : report.layer_bounds()) CHECK(b < 0.1);
}

TEST_CASE("mi_bound refuses the probe's own training frames") {
  auto probe = make_probe<float>({3, {}, 2, 0.0}, 1);
  probe.layers[0].weight.fill(0.0f);
  probe.train_split = 42;
  Matrix<float> x(4, 3, 0.5f);
  const std::vector<std::uint32_t> y{0, 1, 0, 1};
  CHECK_THROWS_AS(mi_bound(probe, x, y, 42), InputError);
  const auto e = mi_bound(probe, x, y, 43);
  CHECK(e.ce == doctest::Approx(std::log(2.0)));
  CHECK(e.bound == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("report CSV with and without bits") {
  auto ds = support::random_dataset(300, 2, 3, 3, 4, true);
  const auto report = full_analysis(ds, std::vector<double>{-5, 0, 5, 10}, quick_config());

  std::ostringstream plain, bits;
  write_report_csv(report, plain, false);
  write_report_csv(report, bits, true);
  const auto p = lines_of(plain.str());
  const auto b = lines_of(bits.str());
  CHECK(p[0] == "context,layer,snr_bin,h_y_nats,ce_nats,mi_nats,n_eval");
  CHECK(b[0] == "context,layer,snr_bin,h_y_nats,ce_nats,mi_nats,mi_bits,n_eval");
  CHECK(p.size() == b.size());

  // Level 10 has no frames: its rows remain, with empty value fields.
  const auto* absent = report.find("snr", 0, 10.0);
  REQUIRE(absent != nullptr);
  CHECK_FALSE(absent->present);
  CHECK(estimate_csv_row(*absent, false) == "snr,0,10,,,,0");

  const auto* layer = report.find("layer", 1);
  REQUIRE(layer != nullptr);
  CHECK(layer->bits() == doctest::Approx(layer->bound / std::log(2.0)));

  // layer_avg is the unweighted mean over non-empty bins.
  const auto* avg = report.find("layer_avg", 0);
  REQUIRE(avg != nullptr);
  double ce = 0.0;
  int n = 0;
  for (double level : {-5.0, 0.0, 5.0}) {
    const auto* e = report.find("snr", 0, level);
    REQUIRE(e != nullptr);
    CHECK(e->present);
    CHECK(e->bound <= e->h_y);
    ce += e->ce;
    ++n;
  }
  CHECK(avg->ce == doctest::Approx(ce / n));

  // The per-layer rows match a plain layerwise run with the same seed.
  const auto lw = layerwise_analysis(ds, quick_config());
  CHECK(lw.find("layer", 1)->bound == layer->bound);
}

TEST_CASE("analysis input errors") {
  auto one_class = support::random_dataset(100, 2, 3, 2, 1);
  std::fill(one_class.labels.begin(), one_class.labels.end(), 1u);
  CHECK_THROWS_AS(layerwise_analysis(one_class, quick_config()), InputError);

  auto ds = support::random_dataset(100, 2, 3, 2, 1);
  CHECK_THROWS_AS(snr_analysis(ds, std::vector<double>{0}, quick_config()), InputError);

  TrainConfig bad = quick_config();
  bad.eval_fraction = 1.0;
  CHECK_THROWS_AS(layerwise_analysis(ds, bad), InputError);
  bad = quick_config();
  bad.epochs = 0;
  CHECK_THROWS_AS(layerwise_analysis(ds, bad), InputError);
}

TEST_CASE("divergence is reported with its epoch") {
  auto ds = support::random_dataset(200, 1, 4, 3, 1);
  for (auto& v : ds.features) v *= 1e30f;
  TrainConfig cfg = quick_config();
  cfg.lr = 1e30;
  try {
    layerwise_analysis(ds, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("thread count does not change results") {
  auto ds = support::random_dataset(400, 4, 3, 3, 5);
  TrainConfig cfg = quick_config();
  cfg.threads = 1;
  const auto a = layerwise_analysis(ds, cfg);
  cfg.threads = 3;
  const auto b = layerwise_analysis(ds, cfg);
  CHECK(a.layer_bounds() == b.layer_bounds());
}

TEST_CASE("precision f64 runs and stays bounded") {
  auto ds = support::random_dataset(300, 2, 3, 2, 6);
  TrainConfig cfg = quick_config();
  cfg.precision = Precision::f64;
  cfg.linear_probe = true;
  for (const auto& e : layerwise_analysis(ds, cfg).entries) CHECK(e.bound <= e.h_y);
}

TEST_CASE("binary channel estimate lands near the exact value") {
  SynthSpec spec;
  spec.family = Family::binary_channel;
  spec.classes = 2;
  spec.n = 6000;
  spec.layers = 1;
  spec.dim = 4;
  spec.informative = {0};
  spec.flip_p = 0.1;
  spec.seed = 1;
  const auto ds = generate(spec);
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.hidden = {64, 64};
  const double estimate = layerwise_analysis(ds, cfg).layer_bounds()[0];
  CHECK(std::abs(estimate - oracle::binary_channel_mi(0.1)) < 0.06);
}
