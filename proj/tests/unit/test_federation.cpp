#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"

#include "fedua/error.hpp"
#include "fedua/federation.hpp"
#include "fedua/rng.hpp"

using namespace fedua;
using namespace fedua::federation;

namespace {

ModelConfig two_layer() {
  return {{nn::LayerSpec::fully_connected(6, 5), nn::LayerSpec::relu(), nn::LayerSpec::fully_connected(5, 3),
           nn::LayerSpec::sigmoid()},
          6,
          3};
}

ClientDataset random_client(UserId user, std::size_t n, std::size_t len, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {user}));
  Tensor x({n, 1, len});
  for (double& v : x.data()) v = rng.uniform(-1, 1);
  ClientDataset c;
  c.user_id = user;
  c.train = x;
  return c;
}

// Squared error to a fixed per-user target.
BatchLoss target_loss(UserId user) {
  return [user](const Tensor& pred) {
    LossValue lv{0.0, Tensor(pred.shape())};
    const double b = static_cast<double>(pred.dim(0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double target = ((i + user) % 2) ? 0.9 : 0.1;
      const double d = pred[i] - target;
      lv.value += d * d / b;
      lv.grad[i] = 2 * d / b;
    }
    return lv;
  };
}

ModelParams params_with(std::vector<double> values) {
  ModelParams p;
  const std::size_t n = values.size();
  p.layers.push_back({{Tensor({n}, std::move(values))}});
  return p;
}

ClientUpdate update_of(UserId user, std::size_t n, std::vector<double> values) {
  return {params_with(std::move(values)), n, user, 0.0};
}

}  // namespace

TEST_CASE("clients_per_round uses max(floor(c n), 1)") {
  CHECK(clients_per_round(658, 5e-3) == 3);
  CHECK(clients_per_round(10, 1.0) == 10);
  CHECK(clients_per_round(10, 0.01) == 1);
  CHECK(clients_per_round(30, 0.2) == 6);
  CHECK_THROWS_AS(clients_per_round(10, 0.0), ArgumentError);
  CHECK_THROWS_AS(clients_per_round(10, 1.5), ArgumentError);
  CHECK_THROWS_AS(clients_per_round(0, 0.5), ArgumentError);
}

TEST_CASE("sample_clients") {
  const auto s = sample_clients(658, 5e-3, 1, 1);
  CHECK(s.size() == 3);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 3);
  CHECK(s == sample_clients(658, 5e-3, 1, 1));
  CHECK(sample_clients(10, 1.0, 4, 7) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(sample_clients(10, 0.01, 4, 7).size() == 1);

  // every client shows up with roughly equal frequency
  std::vector<int> hits(20, 0);
  for (std::size_t round = 0; round < 4000; ++round) {
    for (auto c : sample_clients(20, 0.25, 9, round)) ++hits[c];
  }
  for (int h : hits) CHECK(std::abs(h - 1000) < 150);
}

TEST_CASE("batch_schedule is a partition") {
  const auto sched = batch_schedule(17, 5, 3);
  CHECK(sched.size() == 4);
  CHECK(sched.back().size() == 2);
  std::vector<std::size_t> all;
  for (const auto& b : sched) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 17; ++i) CHECK(all[i] == i);
  CHECK(sched == batch_schedule(17, 5, 3));
}

TEST_CASE("user_update") {
  const auto config = two_layer();
  const auto w = nn::build_model(config, 1);
  const auto client = random_client(0, 4, 6, 2);
  SUBCASE("errors") {
    ClientDataset empty;
    CHECK_THROWS_AS(user_update(w, config, empty, 1, 2, 0.1, target_loss(0), 0), ArgumentError);
    CHECK_THROWS_AS(user_update(w, config, client, 0, 2, 0.1, target_loss(0), 0), ArgumentError);
    CHECK_THROWS_AS(user_update(w, config, client, 1, 0, 0.1, target_loss(0), 0), ArgumentError);
  }
  SUBCASE("lr 0 leaves params unchanged and server copy untouched") {
    const auto before = w;
    const auto u = user_update(w, config, client, 1, 2, 0.0, target_loss(0), 5);
    CHECK(u.params == w);
    CHECK(w == before);
    CHECK(u.sample_count == 4);
  }
  SUBCASE("one sample, one batch is one sgd step") {
    const auto one = random_client(0, 1, 6, 3);
    auto manual = w;
    nn::ForwardCache cache;
    const Tensor pred = nn::forward(manual, config, one.train, &cache);
    nn::backward(manual, config, cache, target_loss(0)(pred).grad);
    nn::sgd_step(manual, 0.1);
    const auto u = user_update(w, config, one, 1, 8, 0.1, target_loss(0), 11);
    CHECK(u.params.flatten() == manual.flatten());
  }
  SUBCASE("E=2 equals two chained E=1 runs on the same schedule") {
    const std::uint64_t seed = 21;
    const auto two = user_update(w, config, client, 2, 3, 0.1, target_loss(0), seed);
    // replay: epoch e of a run shuffles with epoch_seed(seed, e)
    auto p = w;
    for (std::size_t e = 0; e < 2; ++e) {
      for (const auto& rows : batch_schedule(4, 3, epoch_seed(seed, e))) {
        nn::ForwardCache cache;
        const Tensor pred = nn::forward(p, config, datagen::gather_rows(client.train, rows), &cache);
        nn::backward(p, config, cache, target_loss(0)(pred).grad);
        nn::sgd_step(p, 0.1);
      }
    }
    CHECK(two.params.flatten() == p.flatten());
  }
}

TEST_CASE("federated_average examples") {
  const auto avg = federated_average({update_of(0, 1, {2, 4}), update_of(1, 3, {6, 8})});
  CHECK(avg.flatten() == std::vector<double>{5, 7});
  const auto same = federated_average({update_of(0, 2, {0.1, 0.7}), update_of(1, 5, {0.1, 0.7}),
                                       update_of(2, 9, {0.1, 0.7})});
  CHECK(same.flatten() == std::vector<double>{0.1, 0.7});
  CHECK(federated_average({update_of(4, 3, {1.5, -2})}).flatten() == std::vector<double>{1.5, -2});
  CHECK_THROWS_AS(federated_average({}), ArgumentError);
  CHECK_THROWS_AS(federated_average({update_of(0, 1, {1}), update_of(1, 1, {1, 2})}), ArgumentError);
}

TEST_CASE("federated_average is a convex, order-independent combination") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t clients = 1 + rng.below(6), dim = 1 + rng.below(5);
    std::vector<ClientUpdate> updates;
    std::vector<double> lo(dim, 1e300), hi(dim, -1e300), num(dim, 0.0);
    double den = 0.0;
    for (std::size_t c = 0; c < clients; ++c) {
      std::vector<double> v(dim);
      const std::size_t n = 1 + rng.below(20);
      for (std::size_t i = 0; i < dim; ++i) {
        v[i] = rng.uniform(-5, 5);
        lo[i] = std::min(lo[i], v[i]);
        hi[i] = std::max(hi[i], v[i]);
        num[i] += static_cast<double>(n) * v[i];
      }
      den += static_cast<double>(n);
      updates.push_back(update_of(static_cast<UserId>(c), n, v));
    }
    const auto avg = federated_average(updates).flatten();
    auto shuffled = updates;
    rng.shuffle(std::span<ClientUpdate>(shuffled));
    CHECK(federated_average(shuffled).flatten() == avg);
    for (std::size_t i = 0; i < dim; ++i) {
      CHECK(avg[i] >= lo[i]);
      CHECK(avg[i] <= hi[i]);
      CHECK(avg[i] == doctest::Approx(num[i] / den).epsilon(1e-12));
    }
  }
}

TEST_CASE("run_fedavg edge cases") {
  const auto config = two_layer();
  std::vector<ClientDataset> clients{random_client(0, 5, 6, 1), random_client(1, 7, 6, 1)};
  FederatedConfig fed;
  fed.fraction = 1.0;
  fed.seed = 3;
  fed.batch_size = 2;
  const auto init = nn::build_model(config, init_seed(fed.seed));
  SUBCASE("zero rounds") {
    fed.rounds = 0;
    CHECK(run_fedavg(fed, clients, config, target_loss).params == init);
  }
  SUBCASE("zero learning rate") {
    fed.rounds = 3;
    fed.lr = 0.0;
    const auto r = run_fedavg(fed, clients, config, target_loss);
    CHECK(r.params.flatten() == init.flatten());
    CHECK(r.rounds.size() == 3);
  }
  SUBCASE("round log") {
    fed.rounds = 2;
    fed.lr = 0.1;
    std::vector<std::string> rows;
    run_fedavg(fed, clients, config, target_loss,
               [&](const RoundRecord& r, const ModelParams&) { rows.push_back(round_log_row(r)); });
    CHECK(round_log_header() == "round,sampled_ids,mean_loss,wall_seconds");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].rfind("1,0;1,", 0) == 0);
    CHECK(rows[1].rfind("2,0;1,", 0) == 0);
  }
}

TEST_CASE("run_fedavg with one client equals centralized SGD") {
  const auto config = two_layer();
  const auto client = random_client(0, 11, 6, 8);
  FederatedConfig fed;
  fed.fraction = 1.0;
  fed.local_epochs = 2;
  fed.batch_size = 4;
  fed.lr = 0.05;
  fed.rounds = 6;
  fed.seed = 19;
  const auto result = run_fedavg(fed, {client}, config, target_loss);

  auto p = nn::build_model(config, init_seed(fed.seed));
  for (std::size_t t = 1; t <= fed.rounds; ++t) {
    for (std::size_t e = 0; e < fed.local_epochs; ++e) {
      const auto sched = batch_schedule(11, 4, epoch_seed(client_schedule_seed(fed.seed, t, 0), e));
      for (const auto& rows : sched) {
        nn::ForwardCache cache;
        const Tensor pred = nn::forward(p, config, datagen::gather_rows(client.train, rows), &cache);
        nn::backward(p, config, cache, target_loss(0)(pred).grad);
        nn::sgd_step(p, fed.lr);
      }
    }
  }
  const auto a = result.params.flatten(), b = p.flatten();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("run_fedavg does not depend on the thread count") {
  const auto config = two_layer();
  std::vector<ClientDataset> clients;
  for (UserId u = 0; u < 9; ++u) clients.push_back(random_client(u, 3 + u % 4, 6, 5));
  FederatedConfig fed;
  fed.fraction = 0.5;
  fed.rounds = 5;
  fed.lr = 0.1;
  fed.batch_size = 2;
  fed.seed = 1;
  fed.threads = 1;
  const auto one = run_fedavg(fed, clients, config, target_loss).params;
  fed.threads = 4;
  CHECK(run_fedavg(fed, clients, config, target_loss).params == one);
}

TEST_CASE("spreadout examples") {
  using V = std::vector<std::vector<double>>;
  const V apart{{0.0, 0.0}, {1.0, 1.0}};
  CHECK(spreadout_step(apart, 1.0, 0.1) == apart);
  const V coincident{{0.0}, {0.0}};
  CHECK(spreadout_step(coincident, 1.0, 0.1) == coincident);
  const V close{{0.0}, {0.5}};
  const auto after = spreadout_step(close, 1.0, 1e-2);
  CHECK(std::abs(after[1][0] - after[0][0]) > 0.5);
  // reg_sp over ordered pairs: 2 * (1 - 0.25)^2
  CHECK(spreadout_regularizer(close, 1.0) == doctest::Approx(2 * 0.75 * 0.75));
  CHECK_THROWS_AS(spreadout_step({{0.0}}, 1.0, 0.1), ArgumentError);
  CHECK_THROWS_AS(spreadout_step({{0.0}, {1.0, 2.0}}, 1.0, 0.1), ArgumentError);
}

TEST_CASE("spreadout gradient matches finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(4), dim = 1 + rng.below(4);
    std::vector<std::vector<double>> y(n, std::vector<double>(dim));
    for (auto& v : y)
      for (double& c : v) c = rng.uniform(0, 1);
    const auto g = spreadout_gradient(y, 1.0);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t k = 0; k < dim; ++k) {
        const auto num = nn::central_difference(
            {y[u][k]},
            [&](std::span<const double> p) {
              auto z = y;
              z[u][k] = p[0];
              return spreadout_regularizer(z, 1.0);
            },
            1e-6);
        CHECK(g[u][k] == doctest::Approx(num[0]).epsilon(1e-6));
      }
    }
  }
}
