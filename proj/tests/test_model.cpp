#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "fedcast/model.hpp"
#include "helpers.hpp"

using namespace fedcast;
using namespace fedcast::model;
using testutil::all_indices;
using testutil::code_of;

namespace {

ModelConfig linear_cfg(std::size_t window = 8, std::size_t horizon = 1) {
  ModelConfig cfg;
  cfg.arch = ModelArch::linear;
  cfg.window = window;
  cfg.horizon = horizon;
  return cfg;
}

ModelConfig lstm_cfg(std::size_t window = 6, std::size_t hidden = 8, std::size_t horizon = 1) {
  ModelConfig cfg;
  cfg.arch = ModelArch::lstm;
  cfg.window = window;
  cfg.horizon = horizon;
  cfg.hidden = hidden;
  return cfg;
}

}  // namespace

TEST_CASE("layout dimensions and segment names") {
  ModelConfig lin = linear_cfg(48, 1);
  auto layout = make_layout(lin);
  CHECK(layout->dim == 337);  // 48*7 weights + 1 bias
  CHECK(layout->find("linear.weight").size() == 336);
  CHECK(layout->find("linear.bias").size() == 1);

  ModelConfig rnn = lstm_cfg(12, 16);
  auto rlayout = make_layout(rnn);
  CHECK(rlayout->dim == 1553);  // 64*7 + 64*16 + 64 + 16 + 1
  CHECK(rlayout->find("lstm.w_x").size() == 448);
  CHECK(rlayout->find("lstm.w_h").size() == 1024);
  CHECK(rlayout->find("lstm.bias").size() == 64);
  CHECK(rlayout->find("head.weight").size() == 16);
  CHECK(rlayout->find("head.bias").size() == 1);

  CHECK(layout->hash() != rlayout->hash());
  CHECK(layout->hash() == make_layout(lin)->hash());

  ModelConfig lin2 = linear_cfg(24, 1);
  CHECK(make_layout(lin2)->hash() != layout->hash());
}

TEST_CASE("parameter initialization") {
  ModelConfig cfg = lstm_cfg(6, 8);
  ParamVector a = init_params(cfg, 42);
  ParamVector b = init_params(cfg, 42);
  CHECK(a.values == b.values);
  ParamVector c = init_params(cfg, 43);
  CHECK(a.values != c.values);

  // forget-gate bias block starts at one, all other biases at zero
  auto bias = a.segment("lstm.bias");
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(bias[i] == 0.0);       // input gate
    CHECK(bias[8 + i] == 1.0);   // forget gate
    CHECK(bias[16 + i] == 0.0);  // cell candidate
    CHECK(bias[24 + i] == 0.0);  // output gate
  }
  CHECK(a.segment("head.bias")[0] == 0.0);

  // weights bounded by 1/sqrt(fan_in)
  const double wx_bound = 1.0 / std::sqrt(7.0);
  for (double v : a.segment("lstm.w_x")) CHECK(std::abs(v) <= wx_bound);
  const double wh_bound = 1.0 / std::sqrt(8.0);
  for (double v : a.segment("lstm.w_h")) CHECK(std::abs(v) <= wh_bound);

  ParamVector lin = init_params(linear_cfg(), 7);
  CHECK(lin.segment("linear.bias")[0] == 0.0);
  const double lw_bound = 1.0 / std::sqrt(8.0 * 7.0);
  for (double v : lin.segment("linear.weight")) CHECK(std::abs(v) <= lw_bound);
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    SUBCASE(("seed " + std::to_string(seed)).c_str()) {
      auto samples = testutil::random_samples(12, 6, 2, seed);

      ModelConfig lin = linear_cfg(6, 2);
      ParamVector lp = init_params(lin, seed);
      auto idx = all_indices(samples.size());
      ParamVector ga = batch_gradient(lin, lp, samples, idx, ExecMode::serial);
      ParamVector gf = finite_diff_gradient(lin, lp, samples, idx, 1e-6);
      CHECK(testutil::rel_err(ga.values, gf.values) < 1e-6);

      ModelConfig rnn = lstm_cfg(6, 8, 2);
      ParamVector rp = init_params(rnn, seed);
      ParamVector ra = batch_gradient(rnn, rp, samples, idx, ExecMode::serial);
      ParamVector rf = finite_diff_gradient(rnn, rp, samples, idx, 1e-5);
      CHECK(testutil::rel_err(ra.values, rf.values) < 1e-4);
    }
  }
}

TEST_CASE("full-batch training is plain gradient descent") {
  auto samples = testutil::random_samples(10, 5, 1, 3);
  ModelConfig cfg = linear_cfg(5, 1);
  ParamVector start = init_params(cfg, 5);
  auto idx = all_indices(samples.size());

  LocalTrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 0;  // rejected below; full batch uses >= n
  CHECK(code_of([&] { local_train(cfg, start, samples, tc, 1, ExecMode::serial); }) == Err::BadConfig);

  tc.batch_size = samples.size();
  tc.lr = 0.05;
  ClientUpdate up = local_train(cfg, start, samples, tc, 1, ExecMode::serial);
  CHECK(up.sample_count == samples.size());

  // the delta is (start - lr*g) - start, so round through parameter space
  // exactly the way the trainer does before comparing bits
  ParamVector g = batch_gradient(cfg, start, samples, idx, ExecMode::serial);
  ParamVector stepped = start;
  stepped.add_scaled(g, -tc.lr);
  ParamVector expect = difference(stepped, start);
  CHECK(up.delta.values == expect.values);  // bit-identical single step

  SUBCASE("two epochs equal two sequential steps") {
    tc.epochs = 2;
    ClientUpdate up2 = local_train(cfg, start, samples, tc, 1, ExecMode::serial);
    ParamVector w = start;
    for (int e = 0; e < 2; ++e) {
      ParamVector ge = batch_gradient(cfg, w, samples, idx, ExecMode::serial);
      w.add_scaled(ge, -tc.lr);
    }
    ParamVector expect = difference(w, start);
    CHECK(up2.delta.values == expect.values);
  }

  SUBCASE("oversized batch behaves exactly like batch == n") {
    tc.batch_size = 1000;
    ClientUpdate big = local_train(cfg, start, samples, tc, 1, ExecMode::serial);
    CHECK(big.delta.values == up.delta.values);
  }

  SUBCASE("zero learning rate leaves the parameters untouched") {
    tc.lr = 0.0;
    ClientUpdate fixed = local_train(cfg, start, samples, tc, 99, ExecMode::serial);
    CHECK(fixed.delta.l2_norm() == 0.0);
  }
}

TEST_CASE("minibatch schedule is the seeded shuffle walked in slices") {
  auto samples = testutil::random_samples(5, 4, 1, 8);
  ModelConfig cfg = linear_cfg(4, 1);
  ParamVector start = init_params(cfg, 2);

  LocalTrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.lr = 0.03;
  const std::uint64_t seed = 77;
  ClientUpdate up = local_train(cfg, start, samples, tc, seed, ExecMode::serial);

  // replay the documented schedule: one shuffle stream across epochs,
  // fresh identity permutation each epoch, consecutive slices with a
  // short final batch
  Rng rng(derive_seed(seed, {fnv1a64("shuffle")}));
  ParamVector w = start;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      std::span<const std::size_t> slice{order.data() + begin, end - begin};
      ParamVector g = batch_gradient(cfg, w, samples, slice, ExecMode::serial);
      w.add_scaled(g, -tc.lr);
    }
  }
  CHECK(up.delta.values == difference(w, start).values);

  ClientUpdate same = local_train(cfg, start, samples, tc, seed, ExecMode::serial);
  CHECK(same.delta.values == up.delta.values);
  ClientUpdate other = local_train(cfg, start, samples, tc, seed + 1, ExecMode::serial);
  CHECK(other.delta.values != up.delta.values);
}

TEST_CASE("gradient step reduces the loss") {
  for (auto cfg : {linear_cfg(6, 1), lstm_cfg(6, 6, 1)}) {
    auto samples = testutil::random_samples(16, 6, 1, 21);
    ParamVector w = init_params(cfg, 10);
    auto idx = all_indices(samples.size());
    const double before = batch_loss(cfg, w, samples, idx, ExecMode::serial);

    ParamVector g = batch_gradient(cfg, w, samples, idx, ExecMode::serial);
    double lr = 0.1;
    bool improved = false;
    for (int tries = 0; tries < 12 && !improved; ++tries, lr *= 0.5) {
      ParamVector stepped = w;
      stepped.add_scaled(g, -lr);
      improved = batch_loss(cfg, stepped, samples, idx, ExecMode::serial) < before;
    }
    CHECK(improved);
  }
}

TEST_CASE("loss and prediction basics") {
  auto samples = testutil::random_samples(6, 4, 2, 31);
  ModelConfig cfg = linear_cfg(4, 2);
  ParamVector w = init_params(cfg, 4);

  auto preds = predict(cfg, w, samples, ExecMode::serial);
  CHECK(preds.size() == samples.size() * cfg.horizon);

  // zero parameters predict zero; the loss is then the mean squared target
  ParamVector zero = make_zero(make_layout(cfg));
  auto zp = predict(cfg, zero, samples, ExecMode::serial);
  for (double p : zp) CHECK(p == 0.0);
  double expect = 0.0;
  for (double y : samples.y) expect += y * y;
  expect /= static_cast<double>(samples.y.size());
  CHECK(mean_loss(cfg, zero, samples, ExecMode::serial) == doctest::Approx(expect).epsilon(1e-12));

  auto idx = all_indices(samples.size());
  CHECK(mean_loss(cfg, w, samples, ExecMode::serial) ==
        batch_loss(cfg, w, samples, idx, ExecMode::serial));

  // loss over a sub-batch only sees those samples
  std::vector<std::size_t> head{0, 1};
  double head_loss = batch_loss(cfg, w, samples, head, ExecMode::serial);
  CHECK(head_loss != batch_loss(cfg, w, samples, idx, ExecMode::serial));

  std::vector<std::size_t> none;
  CHECK(code_of([&] { batch_loss(cfg, w, samples, none, ExecMode::serial); }) == Err::EmptyBatch);
  CHECK(code_of([&] { batch_gradient(cfg, w, samples, none, ExecMode::serial); }) == Err::EmptyBatch);

  ParamVector poisoned = w;
  poisoned.values[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK(code_of([&] { predict(cfg, poisoned, samples, ExecMode::serial); }) == Err::NonFiniteInput);

  data::SampleSet empty;
  empty.window = 4;
  empty.horizon = 2;
  LocalTrainConfig tc;
  CHECK(code_of([&] { local_train(cfg, w, empty, tc, 1, ExecMode::serial); }) == Err::EmptyTrainingSet);
}
