#pragma once

// Federated user authentication: each user trains toward a private random
// binary embedding with the correlation loss, then calibrates its own accept
// threshold on warm-up samples.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedua/codebook.hpp"
#include "fedua/federation.hpp"

namespace fedua::ua {

using codebook::BinaryEmbedding;
using codebook::Codebook;
using codebook::UserId;
using federation::LossValue;
using nn::ModelConfig;
using nn::ModelParams;
using nn::Tensor;

/// -(1/B) sum_j (2y - 1)^T yhat_j over a batch of predictions [B, n_e].
/// The gradient with respect to every yhat_j is -(2y - 1)/B.
LossValue correlation_loss(const BinaryEmbedding& y, const Tensor& predictions);

/// Centralized baseline: mean over the batch of
/// d(y_i, yhat) - lambda * sum_{k != i} d(y_k, yhat), d = squared Euclidean.
/// Needs every user's embedding, which is what the federated scheme avoids.
LossValue centralized_ua_loss(const Codebook& book, UserId user, const Tensor& predictions, double lambda);

/// ||y - yhat||^2 for a single prediction row.
double embedding_distance(const BinaryEmbedding& y, std::span<const double> prediction);
/// One distance per row of predictions [B, n_e].
std::vector<double> embedding_distances(const BinaryEmbedding& y, const Tensor& predictions);

struct SizingRequest {
  std::size_t min_dist_tau = 1;
  double bound_q = 0.9;
};

struct FedUaOptions {
  std::size_t embedding_length = 0;      // used when sizing is absent
  std::optional<SizingRequest> sizing;   // server picks n_e from the distance bound
  std::uint64_t codebook_seed = 0;
};

struct FedUaResult {
  ModelConfig model_config;  // final FC resized to the chosen n_e
  ModelParams params;
  Codebook codebook;
  std::vector<federation::RoundRecord> rounds;
};

/// Server fixes n_e, every participant draws its embedding from its own
/// stream, then FedAvg runs with each client's correlation loss.
FedUaResult run_fedua(const federation::FederatedConfig& fed_config, const ModelConfig& model_config,
                      const std::vector<datagen::ClientDataset>& clients, const FedUaOptions& options,
                      const federation::RoundObserver& observer = {});

struct CalibrationResult {
  UserId user_id = 0;
  double tau = 0.0;
  std::size_t k = 0;
  double r = 0.0;
  std::vector<double> distances;  // ascending
};

/// tau = i-th smallest warm-up distance, i = floor(k r) (1-based). Throws
/// CalibrationError when i == 0 and ArgumentError for r outside (0, 1].
CalibrationResult calibrate_threshold(UserId user, std::vector<double> distances, double r);
CalibrationResult warm_up_threshold(const ModelParams& params, const ModelConfig& config, const BinaryEmbedding& y,
                                    const Tensor& samples, double r);

enum class Verdict { Accept, Reject };

struct AuthDecision {
  Verdict verdict = Verdict::Reject;
  double score = 0.0;
  double tau = 0.0;
};

inline constexpr double kAcceptAll = std::numeric_limits<double>::max();

/// Accept iff ||y - F(x)||^2 <= tau. x is one input, shaped [1, 1, L] or [1, L].
AuthDecision authenticate(const ModelParams& params, const ModelConfig& config, const BinaryEmbedding& y, double tau,
                          const Tensor& x);

/// Calibration file: CSV "user_id,k,r,tau", ascending user id.
std::string calibration_to_string(const std::vector<CalibrationResult>& results);
void save_calibration(const std::filesystem::path& path, const std::vector<CalibrationResult>& results);
std::vector<CalibrationResult> load_calibration(const std::filesystem::path& path);
std::vector<CalibrationResult> calibration_from_string(const std::string& text);

}  // namespace fedua::ua
