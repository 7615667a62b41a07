#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "fedua/datagen.hpp"
#include "fedua/error.hpp"
#include "fedua/rng.hpp"
#include "fedua/ua.hpp"

using namespace fedua;
using namespace fedua::ua;

namespace {

BinaryEmbedding emb(UserId user, const std::string& bits) { return BinaryEmbedding::from_string(user, bits); }

Tensor rows(std::size_t b, std::size_t n, std::vector<double> v) { return Tensor({b, n}, std::move(v)); }

ModelConfig fc_config(std::size_t n1, std::size_t n2) {
  return {{nn::LayerSpec::fully_connected(n1, n2), nn::LayerSpec::sigmoid()}, n1, n2};
}

}  // namespace

TEST_CASE("correlation_loss examples") {
  const auto y = emb(0, "101");
  const auto lv = correlation_loss(y, rows(1, 3, {0.9, 0.2, 0.6}));
  CHECK(lv.value == doctest::Approx(-1.3).epsilon(1e-15));
  CHECK(lv.grad.data()[0] == -1.0);
  CHECK(lv.grad.data()[1] == 1.0);

  CHECK(correlation_loss(emb(0, "10"), rows(1, 2, {1, 0})).value == -1.0);
  CHECK(correlation_loss(emb(0, "1100"), rows(2, 4, std::vector<double>(8, 0.5))).value == 0.0);
  CHECK_THROWS_AS(correlation_loss(y, rows(1, 2, {0.5, 0.5})), ArgumentError);
}

TEST_CASE("correlation_loss gradient is -(2y-1)/B and matches finite differences") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.below(4), n = 1 + rng.below(9);
    const auto y = codebook::generate_embedding(n, rng.next());
    Tensor pred({b, n});
    for (double& v : pred.data()) v = rng.uniform();
    const auto lv = correlation_loss(y, pred);
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        CHECK(lv.grad[j * n + k] == -(2.0 * y.bit(k) - 1.0) / static_cast<double>(b));
      }
    }
    const auto num = nn::central_difference(
        {pred.data().begin(), pred.data().end()},
        [&](std::span<const double> p) { return correlation_loss(y, Tensor(pred.shape(), {p.begin(), p.end()})).value; },
        1e-4);
    for (std::size_t i = 0; i < num.size(); ++i) CHECK(std::abs(num[i] - lv.grad[i]) < 1e-8);
  }
}

TEST_CASE("correlation_loss lower bound") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(10);
    const auto y = codebook::generate_embedding(n, rng.next());
    Tensor pred({2, n});
    for (double& v : pred.data()) v = rng.uniform();
    // bound: -(number of ones), reached at yhat = y
    CHECK(correlation_loss(y, pred).value >= -static_cast<double>(y.ones()));
    CHECK(correlation_loss(y, pred).value >= -static_cast<double>(n));
    Tensor ideal({2, n});
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < n; ++k) ideal[j * n + k] = y.bit(k);
    CHECK(correlation_loss(y, ideal).value == -static_cast<double>(y.ones()));
  }
}

TEST_CASE("centralized_ua_loss") {
  codebook::Codebook book(2, 0);
  book.insert(emb(1, "10"));
  book.insert(emb(2, "01"));
  const auto pred = rows(1, 2, {1, 0});
  CHECK(centralized_ua_loss(book, 1, pred, 1.0).value == -2.0);
  CHECK(centralized_ua_loss(book, 1, pred, 0.0).value == 0.0);
  CHECK(centralized_ua_loss(book, 2, pred, 0.0).value == 2.0);
  CHECK_THROWS_AS(centralized_ua_loss(book, 3, pred, 1.0), ArgumentError);

  codebook::Codebook three(2, 0);
  three.insert(emb(0, "00"));
  three.insert(emb(1, "11"));
  three.insert(emb(2, "10"));
  three.insert(emb(3, "01"));
  // the centre is equidistant from every corner: d - (1/(n-1)) * (n-1) d = 0
  CHECK(centralized_ua_loss(three, 0, rows(1, 2, {0.5, 0.5}), 1.0 / 3.0).value == doctest::Approx(0.0));

  Rng rng(2);
  Tensor p({3, 2});
  for (double& v : p.data()) v = rng.uniform();
  const auto lv = centralized_ua_loss(three, 2, p, 0.3);
  const auto num = nn::central_difference(
      {p.data().begin(), p.data().end()},
      [&](std::span<const double> x) { return centralized_ua_loss(three, 2, Tensor({3, 2}, {x.begin(), x.end()}), 0.3).value; },
      1e-5);
  for (std::size_t i = 0; i < num.size(); ++i) CHECK(std::abs(num[i] - lv.grad[i]) < 1e-8);
}

TEST_CASE("calibrate_threshold") {
  std::vector<double> d;
  for (int i = 10; i >= 1; --i) d.push_back(i / 10.0);
  const auto c = calibrate_threshold(4, d, 0.9);
  CHECK(c.tau == 0.9);
  CHECK(c.k == 10);
  CHECK(std::is_sorted(c.distances.begin(), c.distances.end()));
  CHECK(calibrate_threshold(4, d, 1.0).tau == 1.0);
  CHECK_THROWS_AS(calibrate_threshold(4, {1, 2, 3, 4, 5}, 0.1), CalibrationError);
  CHECK_THROWS_AS(calibrate_threshold(4, d, 0.0), ArgumentError);
  CHECK_THROWS_AS(calibrate_threshold(4, d, 1.1), ArgumentError);
}

TEST_CASE("calibration soundness and monotonicity") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.below(60);
    std::vector<double> d(k);
    for (double& v : d) v = rng.uniform(0, 10);
    double last = -1.0;
    for (double r = 0.05; r <= 1.0; r += 0.05) {
      const std::size_t i = static_cast<std::size_t>(std::floor(static_cast<double>(k) * r));
      if (i == 0) continue;
      const auto c = calibrate_threshold(0, d, r);
      CHECK(std::find(d.begin(), d.end(), c.tau) != d.end());
      CHECK(static_cast<std::size_t>(std::count_if(d.begin(), d.end(), [&](double v) { return v <= c.tau; })) == i);
      CHECK(c.tau >= last);
      last = c.tau;
    }
  }
}

TEST_CASE("authenticate") {
  const auto config = fc_config(2, 2);
  auto params = nn::build_model(config, 0);
  const auto y = emb(0, "10");
  const Tensor x({1, 1, 2}, std::vector<double>{0.3, -0.2});
  CHECK(authenticate(params, config, y, kAcceptAll, x).verdict == Verdict::Accept);
  CHECK(authenticate(params, config, y, 0.0, x).verdict == Verdict::Reject);
  CHECK(authenticate(params, config, y, 0.0, x).score > 0.0);
  CHECK_THROWS_AS(authenticate(params, config, y, 1.0, Tensor({1, 1, 3})), DimensionError);

  // boundary: a score equal to tau is accepted
  CHECK(embedding_distance(y, std::vector<double>{0.9, 0.2}) == doctest::Approx(0.05));
  const double e = authenticate(params, config, y, 1.0, x).score;
  CHECK(authenticate(params, config, y, e, x).verdict == Verdict::Accept);
  CHECK(authenticate(params, config, y, std::nextafter(e, 0.0), x).verdict == Verdict::Reject);
  CHECK(authenticate(params, config, y, e, Tensor({1, 2}, std::vector<double>{0.3, -0.2})).score == e);
}

TEST_CASE("decisions agree with warm-up scores") {
  const auto config = fc_config(4, 3);
  const auto params = nn::build_model(config, 5);
  const auto y = emb(0, "101");
  Rng rng(6);
  Tensor warm({20, 1, 4});
  for (double& v : warm.data()) v = rng.uniform(-2, 2);
  const auto cal = warm_up_threshold(params, config, y, warm, 0.5);
  CHECK(cal.k == 20);
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto d = authenticate(params, config, y, cal.tau, datagen::sample_row(warm, i));
    CHECK((d.verdict == Verdict::Accept) == (d.score <= cal.tau));
    CHECK(std::find(cal.distances.begin(), cal.distances.end(), d.score) != cal.distances.end());
    accepted += d.verdict == Verdict::Accept;
  }
  CHECK(accepted == 10);
}

TEST_CASE("calibration file round trip") {
  std::vector<CalibrationResult> c{{3, 0.1 + 0.2, 5, 0.8, {}}, {7, 2.5, 10, 0.9, {}}};
  const std::string text = calibration_to_string(c);
  CHECK(text.rfind("user_id,k,r,tau\n", 0) == 0);
  const auto back = calibration_from_string(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].tau == 0.1 + 0.2);
  CHECK(back[1].user_id == 7);
  CHECK(back[1].k == 10);
  CHECK_THROWS_AS(calibration_from_string("user_id,k,r,tau\n1,2,x,3\n"), ParseError);
  CHECK_THROWS_AS(calibration_from_string(""), ParseError);
}

TEST_CASE("run_fedua") {
  datagen::SynthParams sp;
  sp.participants = 2;
  sp.unseen = 0;
  sp.input_length = 16;
  sp.plan.train = 8;
  sp.noise = 0.05;
  sp.seed = 4;
  const auto pop = datagen::synth_population(sp);
  const ModelConfig config{{nn::LayerSpec::fully_connected(16, 8), nn::LayerSpec::sigmoid()}, 16, 8};
  federation::FederatedConfig fed;
  fed.fraction = 1.0;
  fed.batch_size = 8;
  fed.lr = 0.5;
  fed.seed = 2;

  SUBCASE("zero rounds still produce a codebook") {
    fed.rounds = 0;
    const auto r = run_fedua(fed, config, pop.participants, {8, std::nullopt, 3});
    CHECK(r.codebook.size() == 2);
    CHECK(r.params == nn::build_model(config, federation::init_seed(fed.seed)));
  }
  SUBCASE("loss decreases on separable users") {
    fed.rounds = 10;
    const auto r = run_fedua(fed, config, pop.participants, {8, std::nullopt, 3});
    REQUIRE(r.rounds.size() == 10);
    for (std::size_t t = 1; t < 10; ++t) CHECK(r.rounds[t].mean_loss < r.rounds[t - 1].mean_loss);
  }
  SUBCASE("sizing picks n_e and resizes the output layer") {
    fed.rounds = 1;
    const auto r = run_fedua(fed, config, pop.participants, {0, SizingRequest{2, 0.9}, 3});
    CHECK(r.codebook.n_e() == codebook::choose_embedding_length(2, 2, 0.9));
    CHECK(r.model_config.embedding_length == r.codebook.n_e());
    CHECK(r.model_config.layers[0].fan_out == r.codebook.n_e());
  }
}
