#include "fedua/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedua/error.hpp"
#include "fedua/parallel.hpp"
#include "fedua/rng.hpp"
#include "fedua/text.hpp"

namespace fedua::federation {

std::size_t clients_per_round(std::size_t n, double fraction) {
  if (n < 1) throw ArgumentError("need at least one client");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("client fraction c must lie in (0, 1]");
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  return std::clamp<std::size_t>(m, 1, n);
}

std::vector<std::size_t> sample_clients(std::size_t n, double fraction, std::uint64_t seed, std::size_t round) {
  const std::size_t m = clients_per_round(n, fraction);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (m < n) {
    Rng rng(derive_seed(seed, {0x73616dULL, round}));
    // Partial Fisher-Yates: the first m slots are a uniform m-subset.
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::vector<std::size_t>> batch_schedule(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ArgumentError("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
  }
  return batches;
}

std::uint64_t client_schedule_seed(std::uint64_t seed, std::size_t round, UserId user) noexcept {
  return derive_seed(seed, {0x626174ULL, round, user});
}

std::uint64_t epoch_seed(std::uint64_t schedule_seed, std::size_t epoch) noexcept {
  return derive_seed(schedule_seed, {epoch});
}

std::uint64_t init_seed(std::uint64_t seed) noexcept { return derive_seed(seed, {0x696e6974ULL}); }

ClientUpdate user_update(const ModelParams& w, const ModelConfig& config, const ClientDataset& data,
                         std::size_t epochs, std::size_t batch_size, double lr, const BatchLoss& loss,
                         std::uint64_t schedule_seed) {
  if (data.sample_count() == 0) throw ArgumentError("user " + std::to_string(data.user_id) + " has no training data");
  if (epochs == 0) throw ArgumentError("local epochs E must be >= 1");
  if (batch_size == 0) throw ArgumentError("batch size B must be >= 1");

  ClientUpdate update{w, data.sample_count(), data.user_id, 0.0};
  nn::ForwardCache cache;
  double loss_sum = 0.0;
  std::size_t steps = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const auto& rows : batch_schedule(data.sample_count(), batch_size, epoch_seed(schedule_seed, e))) {
      const Tensor batch = datagen::gather_rows(data.train, rows);
      const Tensor pred = nn::forward(update.params, config, batch, &cache);
      const LossValue lv = loss(pred);
      nn::backward(update.params, config, cache, lv.grad);
      nn::sgd_step(update.params, lr);
      loss_sum += lv.value;
      ++steps;
    }
  }
  update.mean_loss = loss_sum / static_cast<double>(steps);
  update.params.for_each_tensor([](Tensor& t) { t.drop_grad(); });
  return update;
}

ModelParams federated_average(std::vector<ClientUpdate> updates) {
  if (updates.empty()) throw ArgumentError("federated_average needs at least one update");
  std::stable_sort(updates.begin(), updates.end(),
                   [](const ClientUpdate& a, const ClientUpdate& b) { return a.user_id < b.user_id; });
  double total = 0.0;
  for (const auto& u : updates) {
    if (!u.params.same_layout(updates.front().params)) {
      throw ArgumentError("federated_average: client " + std::to_string(u.user_id) + " has a different layout");
    }
    if (u.sample_count == 0) throw ArgumentError("federated_average: zero sample count");
    total += static_cast<double>(u.sample_count);
  }
  // mean = p_first + sum_u (n_u / N) (p_u - p_first): identical inputs reproduce
  // p exactly, and the clamp keeps rounding inside the convex hull.
  const std::vector<double> ref = updates.front().params.flatten();
  std::vector<double> delta(ref.size(), 0.0), lo = ref, hi = ref;
  for (std::size_t c = 1; c < updates.size(); ++c) {
    const double weight = static_cast<double>(updates[c].sample_count) / total;
    const auto values = updates[c].params.flatten();
    for (std::size_t i = 0; i < ref.size(); ++i) {
      delta[i] += weight * (values[i] - ref[i]);
      lo[i] = std::min(lo[i], values[i]);
      hi[i] = std::max(hi[i], values[i]);
    }
  }
  std::vector<double> acc(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) acc[i] = std::clamp(ref[i] + delta[i], lo[i], hi[i]);
  ModelParams out = updates.front().params;
  out.for_each_tensor([](Tensor& t) { t.drop_grad(); });
  out.assign(acc);
  return out;
}

FedAvgResult run_fedavg(const FederatedConfig& config, const std::vector<ClientDataset>& clients,
                        const ModelConfig& model_config, const LossFactory& loss, const RoundObserver& observer) {
  return run_fedavg(config, clients, model_config, loss, nn::build_model(model_config, init_seed(config.seed)),
                    observer);
}

FedAvgResult run_fedavg(const FederatedConfig& config, const std::vector<ClientDataset>& clients,
                        const ModelConfig& model_config, const LossFactory& loss, ModelParams initial,
                        const RoundObserver& observer) {
  if (clients.empty()) throw ArgumentError("run_fedavg: no clients");
  if (!(config.lr >= 0.0)) throw ArgumentError("run_fedavg: learning rate must be non-negative");
  clients_per_round(clients.size(), config.fraction);  // validates c

  FedAvgResult result{std::move(initial), {}};
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const auto picked = sample_clients(clients.size(), config.fraction, config.seed, t);
    std::vector<ClientUpdate> updates(picked.size());
    parallel_for(picked.size(), config.threads, [&](std::size_t i) {
      const ClientDataset& client = clients[picked[i]];
      updates[i] = user_update(result.params, model_config, client, config.local_epochs, config.batch_size,
                               config.lr, loss(client.user_id),
                               client_schedule_seed(config.seed, t, client.user_id));
    });
    RoundRecord record;
    record.round = t;
    double loss_sum = 0.0;
    for (const auto& u : updates) {
      record.sampled.push_back(u.user_id);
      loss_sum += u.mean_loss;
    }
    record.mean_loss = loss_sum / static_cast<double>(updates.size());
    result.params = federated_average(std::move(updates));
    record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (observer) observer(record, result.params);
    result.rounds.push_back(std::move(record));
  }
  return result;
}

std::string round_log_header() { return "round,sampled_ids,mean_loss,wall_seconds"; }

std::string round_log_row(const RoundRecord& r) {
  std::ostringstream out;
  out << r.round << ',';
  for (std::size_t i = 0; i < r.sampled.size(); ++i) out << (i ? ";" : "") << r.sampled[i];
  out << ',' << format_double(r.mean_loss) << ',' << format_double(r.wall_seconds);
  return out.str();
}

namespace {

void check_embeddings(const std::vector<std::vector<double>>& y, double nu) {
  if (y.size() < 2) throw ArgumentError("spreadout needs at least 2 embeddings");
  for (const auto& v : y) {
    if (v.size() != y.front().size()) throw ArgumentError("spreadout: embeddings differ in length");
  }
  if (!(nu > 0.0)) throw ArgumentError("spreadout: margin nu must be positive");
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
  return d;
}

}  // namespace

double spreadout_regularizer(const std::vector<std::vector<double>>& y, double nu) {
  check_embeddings(y, nu);
  double reg = 0.0;
  for (std::size_t u = 0; u < y.size(); ++u) {
    for (std::size_t v = 0; v < y.size(); ++v) {
      if (u == v) continue;
      const double h = std::max(0.0, nu - squared_distance(y[u], y[v]));
      reg += h * h;
    }
  }
  return reg;
}

std::vector<std::vector<double>> spreadout_gradient(const std::vector<std::vector<double>>& y, double nu) {
  check_embeddings(y, nu);
  std::vector<std::vector<double>> grad(y.size(), std::vector<double>(y.front().size(), 0.0));
  for (std::size_t u = 0; u < y.size(); ++u) {
    for (std::size_t v = u + 1; v < y.size(); ++v) {
      const double h = nu - squared_distance(y[u], y[v]);
      if (h <= 0.0) continue;
      // Both ordered pairs contribute h^2; d(h^2)/dy_u = -2h * 2(y_u - y_v), twice.
      for (std::size_t k = 0; k < y[u].size(); ++k) {
        const double g = -8.0 * h * (y[u][k] - y[v][k]);
        grad[u][k] += g;
        grad[v][k] -= g;
      }
    }
  }
  return grad;
}

std::vector<std::vector<double>> spreadout_step(std::vector<std::vector<double>> y, double nu, double step) {
  if (!(step > 0.0)) throw ArgumentError("spreadout: step must be positive");
  const auto grad = spreadout_gradient(y, nu);
  for (std::size_t u = 0; u < y.size(); ++u) {
    for (std::size_t k = 0; k < y[u].size(); ++k) y[u][k] -= step * grad[u][k];
  }
  return y;
}

}  // namespace fedua::federation
