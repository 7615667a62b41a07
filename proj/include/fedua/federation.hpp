#pragma once

// Federated averaging: client sampling, local minibatch SGD, sample-weighted
// aggregation; plus the spreadout regularizer used by the FedAwS baseline.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "fedua/datagen.hpp"
#include "fedua/nn/model.hpp"

namespace fedua::federation {

using codebook::UserId;
using datagen::ClientDataset;
using nn::ModelConfig;
using nn::ModelParams;
using nn::Tensor;

struct FederatedConfig {
  double fraction = 5e-3;  // c
  std::size_t local_epochs = 1;
  std::size_t batch_size = 8;
  double lr = 2e-3;
  std::size_t rounds = 1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Loss value and d(loss)/d(predictions) for one batch.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};
using BatchLoss = std::function<LossValue(const Tensor& predictions)>;
/// Builds the loss a given client trains with (e.g. bound to its embedding).
using LossFactory = std::function<BatchLoss(UserId)>;

struct ClientUpdate {
  ModelParams params;
  std::size_t sample_count = 0;
  UserId user_id = 0;
  double mean_loss = 0.0;  // average batch loss seen during the update
};

/// m = max(floor(c * n), 1).
std::size_t clients_per_round(std::size_t n, double fraction);

/// Uniform subset of m client indices drawn without replacement, returned in
/// ascending order. Deterministic in (seed, round).
std::vector<std::size_t> sample_clients(std::size_t n, double fraction, std::uint64_t seed, std::size_t round);

/// Shuffled partition of [0, n) into batches of `batch_size` (last may be short).
std::vector<std::vector<std::size_t>> batch_schedule(std::size_t n, std::size_t batch_size, std::uint64_t seed);

/// Seed of the batch schedule client `user` uses in `round`.
std::uint64_t client_schedule_seed(std::uint64_t seed, std::size_t round, UserId user) noexcept;
/// Per-epoch seed derived from a client schedule seed.
std::uint64_t epoch_seed(std::uint64_t schedule_seed, std::size_t epoch) noexcept;

/// E epochs of minibatch SGD on a copy of w over D.train; epoch e shuffles with
/// epoch_seed(schedule_seed, e). Throws ArgumentError for an empty dataset or
/// epochs/batch size of zero.
ClientUpdate user_update(const ModelParams& w, const ModelConfig& config, const ClientDataset& data,
                         std::size_t epochs, std::size_t batch_size, double lr, const BatchLoss& loss,
                         std::uint64_t schedule_seed);

/// Coordinate-wise mean weighted by sample_count, summed in ascending user id.
/// Throws ArgumentError for an empty list or mismatched layouts.
ModelParams federated_average(std::vector<ClientUpdate> updates);

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<UserId> sampled;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
};

/// Called after each round with the new global parameters.
using RoundObserver = std::function<void(const RoundRecord&, const ModelParams&)>;

struct FedAvgResult {
  ModelParams params;
  std::vector<RoundRecord> rounds;
};

/// Server-side initialization used by run_fedavg: build_model(config, derive_seed(seed, "init")).
std::uint64_t init_seed(std::uint64_t seed) noexcept;

/// T rounds of sample -> broadcast -> local updates (in parallel) -> average.
FedAvgResult run_fedavg(const FederatedConfig& config, const std::vector<ClientDataset>& clients,
                        const ModelConfig& model_config, const LossFactory& loss,
                        const RoundObserver& observer = {});
FedAvgResult run_fedavg(const FederatedConfig& config, const std::vector<ClientDataset>& clients,
                        const ModelConfig& model_config, const LossFactory& loss, ModelParams initial,
                        const RoundObserver& observer = {});

/// CSV header and row of the round log: round,sampled_ids,mean_loss,wall_seconds.
/// sampled_ids is a ';'-separated list.
std::string round_log_header();
std::string round_log_row(const RoundRecord& record);

/// reg_sp(y) = sum over ordered pairs u != u' of max(0, nu - d(y_u, y_u'))^2,
/// d the squared Euclidean distance.
double spreadout_regularizer(const std::vector<std::vector<double>>& embeddings, double nu);
std::vector<std::vector<double>> spreadout_gradient(const std::vector<std::vector<double>>& embeddings, double nu);
/// One gradient-descent step on reg_sp. Throws ArgumentError for fewer than 2
/// embeddings, unequal lengths or non-positive nu/step.
std::vector<std::vector<double>> spreadout_step(std::vector<std::vector<double>> embeddings, double nu, double step);

}  // namespace fedua::federation
