#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ncmatch/training.hpp"

using namespace ncmatch;

namespace {

NCNetParams zero_params(const NCNetConfig& config) {
  NCNetParams p = init_params(config, 0);
  for (Conv4dLayer& layer : p.layers)
    std::fill(layer.weights.begin(), layer.weights.end(), 0.f);
  return p;
}

std::vector<TrainSample> small_dataset(int pos, int neg, int h, int w, int d) {
  std::vector<TrainSample> out;
  std::mt19937 rng(123);
  std::uniform_int_distribution<int> shift(-1, 1);
  for (int n = 0; n < pos; ++n)
    out.push_back(synth_pair(1000 + n, h, w, d, shift(rng), shift(rng), 0.3f, 3));
  for (int n = 0; n < neg; ++n)
    out.push_back(synth_negative(2000 + n, 3000 + n, h, w, d, 0.3f, 3));
  return out;
}

}  // namespace

TEST_CASE("zero-weight network yields the uniform-distribution loss") {
  TrainSample s = synth_pair(70, 5, 5, 8, 1, 0, 0.2f);
  NCNetParams p = zero_params(NCNetConfig::instance());
  ForwardResult r = forward_pipeline(s, p);
  // Both assigned-score means are 1/(h*w) = 0.04, so L = -(0.04 + 0.04).
  CHECK(r.record.loss == Catch::Approx(-0.08).margin(1e-6));
  CHECK(r.record.sbarA == Catch::Approx(0.04).margin(1e-7));
  CHECK(r.record.sbarB == Catch::Approx(0.04).margin(1e-7));
}

TEST_CASE("negative label flips the loss sign exactly") {
  TrainSample s = synth_pair(71, 4, 4, 8, 1, 1, 0.3f);
  NCNetParams p = init_params(NCNetConfig::instance(), 4);
  ForwardResult pos = forward_pipeline(s, p);
  s.label = -1;
  ForwardResult neg = forward_pipeline(s, p);
  CHECK(neg.record.loss == -pos.record.loss);
  CHECK(pos.record.loss < 0.0);
  CHECK(neg.record.loss > 0.0);
}

TEST_CASE("loss is bounded by the probability simplex") {
  std::mt19937 rng(72);
  NCNetParams p = init_params(NCNetConfig::instance(), 8);
  for (int trial = 0; trial < 5; ++trial) {
    TrainSample s = synth_pair(80 + trial, 4, 4, 8, 0, 1, 0.4f);
    LossRecord r = forward_pipeline(s, p).record;
    CHECK(r.sbarA > 0.0);
    CHECK(r.sbarA <= 1.0);
    CHECK(r.sbarB > 0.0);
    CHECK(r.sbarB <= 1.0);
    CHECK(r.loss >= -2.0);
    CHECK(r.loss < 0.0);
  }
}

TEST_CASE("identity pair through a delta-kernel network gives one-hot scores") {
  // 2x2 grid of orthogonal descriptors: correlation is the 4x4x... identity.
  TrainSample s;
  s.label = +1;
  s.fa = FeatureMap(2, 2, 4, 16, 16);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) s.fa.cell(i, j)[i * 2 + j] = 1.f;
  s.fb = s.fa;
  NCNetParams p;
  p.config = {1, 3, 1, true};
  p.layers.emplace_back(1, 1, 3);
  p.layers[0].weights[p.layers[0].weight_index(0, 0, 1, 1, 1, 1)] = 1.f;
  ForwardResult r = forward_pipeline(s, p);
  // Final tensor: per source slice one entry 2.0 (self plus swapped path),
  // rest 0. Softmax max per slice: e^2/(e^2 + 3).
  const double expect = std::exp(2.0) / (std::exp(2.0) + 3.0);
  CHECK(r.record.sbarB == Catch::Approx(expect).margin(1e-6));
  CHECK(r.record.sbarA == Catch::Approx(expect).margin(1e-6));
  CHECK(r.record.loss == Catch::Approx(-2 * expect).margin(1e-6));
}

TEST_CASE("analytic gradients match finite differences on a small problem") {
  TrainSample s = synth_pair(90, 4, 4, 6, 1, 0, 0.2f);
  NCNetParams p = init_params(NCNetConfig::instance(), 91);
  FdReport report = finite_diff_check(s, p, 1e-3, 1e-6);
  CHECK(report.pass);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("a corrupted analytic gradient fails the finite-difference check") {
  TrainSample s = synth_pair(92, 4, 4, 6, 0, 1, 0.2f);
  NCNetParams p = init_params(NCNetConfig::instance(), 93);
  FdReport report = finite_diff_check(s, p, 1e-3, 1e-6, true);
  CHECK_FALSE(report.pass);
}

TEST_CASE("zero tolerance fails the finite-difference check") {
  TrainSample s = synth_pair(94, 4, 4, 6, 0, 0, 0.2f);
  NCNetParams p = init_params(NCNetConfig::instance(), 95);
  FdReport report = finite_diff_check(s, p, 0.0, 0.0);
  CHECK_FALSE(report.pass);
}

TEST_CASE("zero-input sample produces zero weight gradients") {
  TrainSample s;
  s.label = +1;
  s.fa = FeatureMap(3, 3, 4, 24, 24);  // all-zero descriptors
  s.fb = FeatureMap(3, 3, 4, 24, 24);
  NCNetParams p = init_params(NCNetConfig::instance(), 96);
  // Give the biases nonzero values so layer activations are not trivially zero.
  for (Conv4dLayer& layer : p.layers)
    std::fill(layer.bias.begin(), layer.bias.end(), 0.1f);
  ForwardResult r = forward_pipeline(s, p);
  Gradients g = backward_pipeline(r.cache, p);
  // No signal flows through the first layer's multiplicative path.
  CHECK(g.layers[0].weights ==
        std::vector<float>(g.layers[0].weights.size(), 0.f));
  // The additive bias path still reaches the loss (zero padding makes the
  // bias-driven activations non-constant at the borders).
  bool any_bias = false;
  for (const LayerGrad& lg : g.layers)
    for (float v : lg.bias) any_bias = any_bias || v != 0.f;
  CHECK(any_bias);
}

TEST_CASE("gradients for the flipped label are exact negations") {
  TrainSample s = synth_pair(97, 4, 4, 6, 1, 1, 0.2f);
  NCNetParams p = init_params(NCNetConfig::instance(), 98);
  ForwardResult pos = forward_pipeline(s, p);
  Gradients gp = backward_pipeline(pos.cache, p);
  s.label = -1;
  ForwardResult neg = forward_pipeline(s, p);
  Gradients gn = backward_pipeline(neg.cache, p);
  for (size_t li = 0; li < gp.layers.size(); ++li) {
    for (size_t n = 0; n < gp.layers[li].weights.size(); ++n)
      CHECK(gp.layers[li].weights[n] == -gn.layers[li].weights[n]);
    for (size_t n = 0; n < gp.layers[li].bias.size(); ++n)
      CHECK(gp.layers[li].bias[n] == -gn.layers[li].bias[n]);
  }
}

TEST_CASE("backward_pipeline requires a forward cache") {
  NCNetParams p = init_params(NCNetConfig::instance(), 99);
  ForwardCache empty;
  CHECK_THROWS_AS(backward_pipeline(empty, p), std::invalid_argument);
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  NCNetParams p = init_params(NCNetConfig::instance(), 100);
  NCNetParams before = p;
  AdamState state = AdamState::init(p, 5e-4);
  Gradients g = zero_gradients(p);
  adam_step(p, g, state);
  CHECK(state.step == 1);
  for (size_t li = 0; li < p.layers.size(); ++li)
    CHECK(p.layers[li].weights == before.layers[li].weights);
}

TEST_CASE("first adam step is a sign-scaled update of size lr") {
  NCNetParams p = init_params(NCNetConfig::instance(), 101);
  NCNetParams before = p;
  const double lr = 5e-4;
  AdamState state = AdamState::init(p, lr);
  Gradients g = zero_gradients(p);
  std::mt19937 rng(102);
  std::uniform_real_distribution<float> dist(-2.f, 2.f);
  for (LayerGrad& lg : g.layers)
    for (float& v : lg.weights) v = dist(rng);
  adam_step(p, g, state);
  for (size_t li = 0; li < p.layers.size(); ++li)
    for (size_t n = 0; n < p.layers[li].weights.size(); ++n) {
      const double grad = g.layers[li].weights[n];
      const double expect = -lr * grad / (std::abs(grad) + 1e-8);
      const double got = double(p.layers[li].weights[n]) - before.layers[li].weights[n];
      CHECK(got == Catch::Approx(expect).margin(1e-9));
    }
}

TEST_CASE("constant gradients drive the adam update magnitude towards lr") {
  NCNetParams p;
  p.config = {1, 3, 1, true};
  p.layers.emplace_back(1, 1, 3);
  const double lr = 1e-3;
  AdamState state = AdamState::init(p, lr);
  Gradients g = zero_gradients(p);
  g.layers[0].weights[0] = 0.37f;
  for (int n = 0; n < 200; ++n) {
    const float before = p.layers[0].weights[0];
    adam_step(p, g, state);
    if (n >= 150) {
      const double step = std::abs(double(p.layers[0].weights[0]) - before);
      CHECK(step > 0.9 * lr);
      CHECK(step < 1.1 * lr);
    }
  }
}

TEST_CASE("adam rejects mismatched gradient shapes") {
  NCNetParams p = init_params(NCNetConfig::instance(), 103);
  AdamState state = AdamState::init(p, 5e-4);
  Gradients g = zero_gradients(p);
  g.layers.pop_back();
  CHECK_THROWS_AS(adam_step(p, g, state), std::invalid_argument);
}

TEST_CASE("train rejects degenerate datasets") {
  NCNetParams p = init_params(NCNetConfig::instance(), 104);
  TrainConfig config;
  config.epochs = 1;
  CHECK_THROWS_AS(train({}, {}, p, config), std::invalid_argument);
  std::vector<TrainSample> only_pos = {synth_pair(1, 3, 3, 4, 0, 0, 0.1f),
                                       synth_pair(2, 3, 3, 4, 1, 0, 0.1f)};
  CHECK_THROWS_AS(train(only_pos, {}, p, config), std::invalid_argument);
}

TEST_CASE("training is deterministic under a fixed seed") {
  auto data = small_dataset(3, 3, 4, 4, 6);
  NCNetParams p = init_params(NCNetConfig::instance(), 105);
  TrainConfig config;
  config.epochs = 2;
  config.seed = 0;
  TrainResult a = train(data, {}, p, config);
  TrainResult b = train(data, {}, p, config);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t n = 0; n < a.log.size(); ++n)
    CHECK(a.log[n].mean_train_loss == b.log[n].mean_train_loss);
  for (size_t li = 0; li < a.params.layers.size(); ++li)
    CHECK(a.params.layers[li].weights == b.params.layers[li].weights);
}

TEST_CASE("training with lr=0 leaves the loss log constant") {
  auto data = small_dataset(2, 2, 4, 4, 6);
  NCNetParams p = init_params(NCNetConfig::instance(), 106);
  TrainConfig config;
  config.epochs = 3;
  config.lr = 0.0;
  TrainResult r = train(data, {}, p, config);
  REQUIRE(r.log.size() == 4u);  // epoch 0 evaluation + 3 epochs
  for (const EpochLog& row : r.log)
    CHECK(row.mean_train_loss == r.log[0].mean_train_loss);
}

TEST_CASE("validation loss on a fixed positive pair decreases over 5 epochs") {
  auto data = small_dataset(8, 8, 5, 5, 8);
  std::vector<TrainSample> val = {synth_pair(9000, 5, 5, 8, 1, 0, 0.3f, 3)};
  NCNetParams p = init_params(NCNetConfig::instance(), 0);
  TrainConfig config;  // epochs 5, lr 5e-4, seed 0
  TrainResult r = train(data, val, p, config);
  REQUIRE(r.log.size() == 6u);
  CHECK(r.log[5].mean_val_loss < r.log[0].mean_val_loss);
  for (size_t e = 1; e < r.log.size(); ++e)
    CHECK(r.log[e].mean_val_loss < r.log[e - 1].mean_val_loss);
}
