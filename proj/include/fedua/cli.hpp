#pragma once

// Command-line front end. Exit codes: 0 success / Accept, 1 Reject,
// 2 usage or input error, 3 runtime error.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedua/codebook.hpp"
#include "fedua/datagen.hpp"
#include "fedua/eval.hpp"
#include "fedua/federation.hpp"
#include "fedua/nn/model.hpp"
#include "fedua/ua.hpp"

namespace fedua::cli {

enum ExitCode : int { kOk = 0, kReject = 1, kUsage = 2, kRuntime = 3 };

/// Run configuration (JSON). See README for the schema.
struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::filesystem::path output_dir;
  federation::FederatedConfig federated;
  std::size_t checkpoint_every = 0;
  nlohmann::json model;  // nn::config_from_json input, embedding_length filled in later
  std::size_t embedding_length = 0;
  std::optional<ua::SizingRequest> sizing;
  std::optional<datagen::SynthParams> synthetic;
  std::filesystem::path features;
  std::vector<double> tpr_targets{0.8, 0.9};
  double calibration_tpr = 0.9;
};

/// Parses and validates; relative feature paths resolve against `base_dir`.
/// Throws ConfigError.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

struct TrainArtifacts {
  nn::ModelConfig model_config;
  nn::ModelParams params;
  codebook::Codebook codebook{1, 0};
  datagen::Population population;
  std::vector<federation::RoundRecord> rounds;
};

datagen::Population load_population(const RunConfig& config);
TrainArtifacts train(const RunConfig& config, const federation::RoundObserver& observer = {});

/// Curves for the train, validation and unseen cohorts (unseen skipped when
/// the population has no unseen users).
std::vector<eval::CohortCurve> evaluate_cohorts(const nn::ModelParams& params, const nn::ModelConfig& config,
                                                const codebook::Codebook& book,
                                                const datagen::Population& population, std::size_t threads);

/// Reads a single sample: L numbers separated by commas and/or whitespace.
nn::Tensor load_sample(const std::filesystem::path& path);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedua::cli
