#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "lingagg/aggregation.hpp"
#include "lingagg/error.hpp"
#include "lingagg/synth.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lingagg;

namespace {

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.hidden = {16, 16};
  cfg.seed = 4;
  return cfg;
}

LayeredDataset tiny(std::uint32_t layers, std::uint32_t dim, std::vector<float> features) {
  LayeredDataset ds;
  ds.n_layers = layers;
  ds.dim = dim;
  ds.n_frames = static_cast<std::uint32_t>(features.size() / (layers * dim));
  ds.features = std::move(features);
  ds.labels.assign(ds.n_frames, 0);
  ds.vocab = {"a", "b"};
  return ds;
}

WSAggregator ws_with_logits(std::vector<double> logits, std::size_t dim) {
  WSAggregator agg = WSAggregator::uniform(logits.size(), dim);
  agg.logits = std::move(logits);
  freeze(agg);
  return agg;
}

WSAggregator acoustic(std::vector<double> raw) {
  WSAggregator agg;
  agg.n_layers = raw.size();
  agg.raw_weights = std::move(raw);
  agg.mode = AggMode::acoustic;
  agg.trainable.assign(agg.n_layers, false);
  agg.frozen = true;
  return agg;
}

LayeredDataset planted(std::uint32_t n, std::uint32_t layers, std::uint32_t informative, std::uint64_t seed) {
  SynthSpec spec;
  spec.family = Family::deterministic;
  spec.n = n;
  spec.layers = layers;
  spec.dim = 4;
  spec.classes = 4;
  spec.informative = {informative};
  spec.seed = seed;
  return generate(spec);
}

}  // namespace

TEST_CASE("ws_fuse examples") {
  SUBCASE("large logit selects its layer") {
    const auto ds = support::random_dataset(5, 2, 3, 2, 1);
    const auto view = ws_fuse<float>(ws_with_logits({40.0, 0.0}, 3), ds);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(view.features(i, d) - ds.layer(i, 0)[d]) < 1e-6);
    }
    const auto other = ws_fuse<float>(ws_with_logits({0.0, 40.0}, 3), ds);
    CHECK(std::abs(other.features(2, 1) - ds.layer(2, 1)[1]) < 1e-6);
  }
  SUBCASE("uniform weights average") {
    const auto ds = tiny(2, 2, {1, 1, 3, 5});
    const auto view = ws_fuse<double>(WSAggregator::uniform(2, 2), ds);
    CHECK(view.features(0, 0) == 2.0);
    CHECK(view.features(0, 1) == 3.0);
    CHECK(view.dataset_hash == dataset_hash(ds));
  }
  SUBCASE("joint layer permutation is bitwise invariant") {
    const auto ds = support::random_dataset(20, 4, 3, 2, 2);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    LayeredDataset permuted = ds;
    for (std::size_t i = 0; i < ds.n_frames; ++i) {
      for (std::size_t l = 0; l < 4; ++l) {
        const auto src = ds.layer(i, perm[l]);
        std::copy(src.begin(), src.end(), permuted.features.begin() + i * 12 + l * 3);
      }
    }
    const std::vector<double> logits{0.3, -1.1, 2.0, 0.7};
    std::vector<double> permuted_logits(4);
    for (std::size_t l = 0; l < 4; ++l) permuted_logits[l] = logits[perm[l]];
    const auto a = ws_fuse<float>(ws_with_logits(logits, 3), ds);
    const auto b = ws_fuse<float>(ws_with_logits(permuted_logits, 3), permuted);
    CHECK(a.features == b.features);
  }
  SUBCASE("linear in the features") {
    auto x = support::random_dataset(10, 3, 2, 2, 3);
    auto y = support::random_dataset(10, 3, 2, 2, 4);
    auto mix = x;
    for (std::size_t k = 0; k < mix.features.size(); ++k) mix.features[k] = 2.0f * x.features[k] - 0.5f * y.features[k];
    const auto agg = ws_with_logits({0.1, 0.5, -0.2}, 2);
    const auto fx = ws_fuse<double>(agg, x);
    const auto fy = ws_fuse<double>(agg, y);
    const auto fm = ws_fuse<double>(agg, mix);
    for (std::size_t k = 0; k < fm.features.size(); ++k) {
      CHECK(fm.features.values()[k] ==
            doctest::Approx(2.0 * fx.features.values()[k] - 0.5 * fy.features.values()[k]).epsilon(1e-6));
    }
  }
  SUBCASE("matches the reference weighted sum") {
    const auto ds = support::random_dataset(6, 3, 4, 2, 5);
    const std::vector<double> logits{0.2, -0.4, 1.3};
    const auto view = ws_fuse<double>(ws_with_logits(logits, 4), ds);
    const auto w = oracle::softmax(logits);
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<double> frame(ds.frame(i).begin(), ds.frame(i).end());
      const auto ref = oracle::weighted_sum(w, frame, 4);
      for (std::size_t d = 0; d < 4; ++d) CHECK(view.features(i, d) == doctest::Approx(ref[d]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(ws_fuse<float>(WSAggregator::uniform(3, 3), support::random_dataset(2, 2, 3, 2, 1)), ShapeError);
}

TEST_CASE("dws_fuse examples") {
  const auto ds = support::random_dataset(8, 3, 4, 2, 6, true);
  auto agg = DWSAggregator::init(3, 4, 2, 1);
  freeze(agg);
  const auto dyn = dws_fuse<double>(agg, ds);
  CHECK(dyn.layer_weights.rows() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    std::vector<double> frame(ds.frame(i).begin(), ds.frame(i).end());
    const auto ref = oracle::attention(agg.w_q, agg.w_k, agg.bias, frame);
    double total = 0.0;
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(dyn.layer_weights(i, l) == doctest::Approx(ref.mass[l]).epsilon(1e-12));
      total += dyn.layer_weights(i, l);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t d = 0; d < 4; ++d) CHECK(dyn.view.features(i, d) == doctest::Approx(ref.fused[d]).epsilon(1e-12));
  }

  // Zero projections and bias: plain layer mean.
  DWSAggregator flat = agg;
  flat.w_q.fill(0.0);
  flat.w_k.fill(0.0);
  const auto mean = dws_fuse<double>(flat, ds);
  const auto uniform = ws_fuse<double>(ws_with_logits({0, 0, 0}, 4), ds);
  for (std::size_t k = 0; k < mean.view.features.size(); ++k) {
    CHECK(mean.view.features.values()[k] == doctest::Approx(uniform.features.values()[k]).epsilon(1e-12));
  }

  std::ostringstream csv;
  write_dynamic_weights_csv(ds, dws_fuse<float>(agg, ds).layer_weights, csv);
  std::istringstream in(csv.str());
  std::string header;
  std::getline(in, header);
  CHECK(header == "frame,snr_db,w_0,w_1,w_2");
  std::string first;
  std::getline(in, first);
  CHECK(first.rfind("0,-5,", 0) == 0);
}

TEST_CASE("identical layers keep the WS weights uniform") {
  auto ds = support::random_dataset(400, 3, 4, 3, 7);
  for (std::size_t i = 0; i < ds.n_frames; ++i) {
    for (std::size_t l = 1; l < 3; ++l) {
      for (std::size_t d = 0; d < 4; ++d) ds.features[i * 12 + l * 4 + d] = ds.features[i * 12 + d];
    }
  }
  const auto r = train_linguistic_ws<float>(ds, quick_config());
  const auto w = r.aggregator.weights();
  CHECK(w[0] == w[1]);
  CHECK(w[1] == w[2]);
  CHECK(w[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("trained aggregators are frozen linguistic and deterministic") {
  const auto ds = planted(1200, 3, 1, 1);
  const auto a = train_linguistic_ws<float>(ds, quick_config());
  const auto b = train_linguistic_ws<float>(ds, quick_config());
  CHECK(a.aggregator == b.aggregator);
  CHECK(a.aggregator.mode == AggMode::linguistic);
  CHECK(a.aggregator.frozen);
  CHECK(a.aggregator.provenance.dataset_hash == dataset_hash(ds));
  CHECK(a.heldout.bound <= a.heldout.h_y);
  CHECK(a.heldout.context == aggregator_id(a.aggregator));
  CHECK_NOTHROW(a.aggregator.check());

  const auto d1 = train_linguistic_dws<float>(ds, quick_config(), 2);
  const auto d2 = train_linguistic_dws<float>(ds, quick_config(), 2);
  CHECK(d1.aggregator == d2.aggregator);
  CHECK(d1.aggregator.key_dim == 2);
  CHECK(d1.history == d2.history);
  CHECK(d1.heldout.bound <= d1.heldout.h_y);
  CHECK_NOTHROW(d1.aggregator.check());

  CHECK_THROWS_AS(train_linguistic_ws<float>(support::random_dataset(100, 1, 3, 2, 1), quick_config()), InputError);
}

TEST_CASE("mode and mask invariants") {
  WSAggregator ws = ws_with_logits({0.1, 0.2, 0.3}, 2);
  CHECK_NOTHROW(ws.check());
  make_hybrid(ws);
  CHECK(ws.mode == AggMode::hybrid);
  CHECK(ws.trainable == std::vector<bool>{true, false, false});
  CHECK_NOTHROW(ws.check());
  ws.trainable[2] = true;
  CHECK_THROWS_AS(ws.check(), InputError);

  WSAggregator ling = ws_with_logits({0.1, 0.2}, 2);
  ling.frozen = false;
  CHECK_THROWS_AS(ling.check(), InputError);
  ling.frozen = true;
  ling.trainable[1] = true;
  CHECK_THROWS_AS(ling.check(), InputError);

  WSAggregator shape = ws_with_logits({0.1, 0.2}, 2);
  shape.n_layers = 3;
  CHECK_THROWS_AS(shape.check(), ShapeError);

  CHECK_THROWS_AS(acoustic({0.5, -0.1}).check(), InputError);
  CHECK_THROWS_AS(acoustic({0.0, 0.0}).check(), InputError);
  CHECK_NOTHROW(acoustic({2.0, 6.0}).check());
  CHECK(acoustic({2.0, 6.0}).display_weights() == std::vector<double>{0.25, 0.75});

  auto dws = DWSAggregator::init(3, 4, 2, 1);
  freeze(dws);
  CHECK_NOTHROW(dws.check());
  make_hybrid(dws);
  CHECK_FALSE(dws.train_w_q);
  CHECK_FALSE(dws.train_w_k);
  CHECK(dws.train_bias == std::vector<bool>{true, false, false});
  CHECK_NOTHROW(dws.check());
  dws.train_w_q = true;
  CHECK_THROWS_AS(dws.check(), InputError);

  CHECK(agg_mode_from_string("hybrid") == AggMode::hybrid);
  CHECK_THROWS_AS(agg_mode_from_string("neural"), InputError);
}

TEST_CASE("aggregator JSON round trip is exact") {
  const auto ds = planted(600, 3, 0, 2);
  auto ws = train_linguistic_ws<float>(ds, quick_config()).aggregator;
  auto dws = train_linguistic_dws<float>(ds, quick_config(), 3).aggregator;
  const auto dir = support::scratch_dir("agg_json");

  for (const Aggregator& agg : {Aggregator{ws}, Aggregator{dws}}) {
    export_aggregator(agg, dir / "a.json");
    const Aggregator back = import_aggregator(dir / "a.json");
    CHECK(back == agg);
    CHECK(parameter_hash(back) == parameter_hash(agg));
    export_aggregator(back, dir / "b.json");
    CHECK(support::read_file(dir / "a.json") == support::read_file(dir / "b.json"));
  }

  const json j = aggregator_to_json(ws);
  CHECK(j["format"] == "ling-agg/1");
  CHECK(j["type"] == "ws");
  CHECK(j["trainable_mask"]["logits"] == json{false, false, false});

  WSAggregator hyb = ws;
  make_hybrid(hyb);
  const json h = aggregator_to_json(hyb);
  CHECK(h["mode"] == "hybrid");
  CHECK(h["trainable_mask"]["logits"] == json{true, false, false});
  CHECK(std::get<WSAggregator>(aggregator_from_json(h)) == hyb);

  const json dj = aggregator_to_json(dws);
  CHECK(dj["W_Q"].size() == 4);
  CHECK(dj["W_Q"][0].size() == 3);
}

TEST_CASE("aggregator JSON errors") {
  const json good = aggregator_to_json(ws_with_logits({0.0, 1.0}, 2));

  json bad_type = good;
  bad_type["type"] = "mlp";
  CHECK_THROWS_WITH_AS(aggregator_from_json(bad_type), doctest::Contains("mlp"), InputError);

  json bad_format = good;
  bad_format["format"] = "ling-agg/2";
  CHECK_THROWS_AS(aggregator_from_json(bad_format), InputError);

  json bad_shape = good;
  bad_shape["L"] = 3;
  CHECK_THROWS_AS(aggregator_from_json(bad_shape), ShapeError);

  json missing = good;
  missing.erase("logits");
  CHECK_THROWS_AS(aggregator_from_json(missing), InputError);

  auto frozen_dws = DWSAggregator::init(2, 3, 2, 1);
  freeze(frozen_dws);
  json dws = aggregator_to_json(frozen_dws);
  dws["W_Q"][1] = json{1.0};
  CHECK_THROWS_AS(aggregator_from_json(dws), ShapeError);

  const auto dir = support::scratch_dir("agg_json_errors");
  {
    std::ofstream out(dir / "broken.json");
    out << "{\"format\": ";
  }
  CHECK_THROWS_WITH_AS(import_aggregator(dir / "broken.json"), doctest::Contains("malformed"), InputError);
  CHECK_THROWS_AS(import_aggregator(dir / "missing.json"), InputError);
}

TEST_CASE("raw acoustic weights import and evaluate") {
  const json j = {{"format", "ling-agg/1"}, {"type", "ws"}, {"mode", "acoustic"}, {"weights", {1.0, 3.0, 0.0}}};
  const Aggregator agg = aggregator_from_json(j);
  const auto& ws = std::get<WSAggregator>(agg);
  CHECK(ws.n_layers == 3);
  CHECK(ws.dim == 0);
  CHECK(ws.frozen);
  CHECK(ws.trainable == std::vector<bool>{false, false, false});

  const auto ds = planted(800, 3, 1, 3);
  const auto e = evaluate_aggregator(agg, ds, quick_config());
  CHECK(e.bound <= e.h_y);
  CHECK(e.context == aggregator_id(agg));

  const std::vector<Aggregator> aggs{agg};
  const std::vector<std::string> labels{"acoustic"};
  const auto rows = compare_weights(aggs, labels);
  CHECK(rows[0].normalized_from_raw);
  CHECK(rows[0].weights == std::vector<double>{0.25, 0.75, 0.0});
}

TEST_CASE("evaluation does not modify the aggregator") {
  const auto ds = planted(600, 3, 2, 4);
  const Aggregator agg = train_linguistic_ws<float>(ds, quick_config()).aggregator;
  const Aggregator copy = agg;
  const auto before = parameter_hash(agg);
  evaluate_aggregator(agg, ds, quick_config());
  CHECK(parameter_hash(agg) == before);
  CHECK(agg == copy);
}

TEST_CASE("one-hot WS reproduces the layerwise estimate") {
  const auto ds = planted(2000, 3, 0, 5);
  TrainConfig cfg = quick_config();
  cfg.epochs = 4;
  const auto layerwise = layerwise_analysis(ds, cfg).layer_bounds();
  const double fused = evaluate_aggregator(Aggregator{ws_with_logits({40.0, 0.0, 0.0}, 4)}, ds, cfg).bound;
  CHECK(std::abs(fused - layerwise[0]) <= 0.02);
  const double raw = evaluate_aggregator(Aggregator{acoustic({1.0, 0.0, 0.0})}, ds, cfg).bound;
  CHECK(std::abs(raw - layerwise[0]) <= 0.02);
}

TEST_CASE("compare_weights") {
  const auto ds = support::random_dataset(50, 3, 4, 2, 8);
  const Aggregator a = ws_with_logits({0.5, 0.1, -0.3}, 4);
  auto dws_agg = DWSAggregator::init(3, 4, 2, 5);
  freeze(dws_agg);
  const Aggregator d = dws_agg;

  const std::vector<Aggregator> same{a, a};
  const std::vector<std::string> two{"x", "y"};
  const auto rows = compare_weights(same, two);
  CHECK(rows[0].weights == rows[1].weights);
  CHECK(std::accumulate(rows[0].weights.begin(), rows[0].weights.end(), 0.0) == doctest::Approx(1.0));

  const std::vector<Aggregator> mixed_type{a, d};
  CHECK_THROWS_AS(compare_weights(mixed_type, two), InputError);
  const auto with_ref = compare_weights(mixed_type, two, &ds);
  CHECK(with_ref[1].type == "dws");
  CHECK(std::accumulate(with_ref[1].weights.begin(), with_ref[1].weights.end(), 0.0) == doctest::Approx(1.0));

  const std::vector<Aggregator> mixed_l{a, Aggregator{ws_with_logits({0.0, 0.0}, 4)}};
  CHECK_THROWS_AS(compare_weights(mixed_l, two), ShapeError);

  std::ostringstream csv;
  write_weight_table_csv(rows, csv);
  CHECK(csv.str().rfind("label,type,mode,normalized_from_raw,w_0,w_1,w_2\nx,ws,linguistic,0,", 0) == 0);
}
