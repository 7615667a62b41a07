#pragma once

// Per-user datasets: a synthetic speaker-like generator and a CSV ingestion
// path for externally prepared feature vectors.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedua/codebook.hpp"
#include "fedua/nn/tensor.hpp"

namespace fedua::datagen {

using codebook::UserId;
using nn::Tensor;

/// One user's samples, each split shaped [n, 1, L]. A split with no samples
/// is an empty Tensor. Participants always have train samples; unseen users
/// carry only test samples.
struct ClientDataset {
  UserId user_id = 0;
  Tensor train;
  Tensor warmup;
  Tensor validation;
  Tensor test;

  std::size_t sample_count() const noexcept { return train.empty() ? 0 : train.dim(0); }
  friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

struct SplitPlan {
  std::size_t train = 15;
  std::size_t validation = 5;
  std::size_t warmup = 5;
  std::size_t test = 5;
  std::size_t unseen_test = 10;
  /// true: warm-up samples are their own draws; false: warm-up reuses validation.
  bool disjoint_warmup = true;

  friend bool operator==(const SplitPlan&, const SplitPlan&) = default;
};

struct SynthParams {
  std::size_t participants = 30;
  std::size_t unseen = 20;
  std::size_t input_length = 256;
  SplitPlan plan{};
  double separation = 1.0;
  double noise = 0.1;
  std::uint64_t seed = 0;

  friend bool operator==(const SynthParams&, const SynthParams&) = default;
};

struct Population {
  std::vector<ClientDataset> participants;
  std::vector<ClientDataset> unseen;
  std::size_t input_length = 0;
  std::uint64_t seed = 0;

  const ClientDataset& participant(UserId user) const;
  std::vector<UserId> participant_ids() const;
  friend bool operator==(const Population&, const Population&) = default;
};

/// Per-user signature: separation * sum of three sinusoids with random
/// frequency, phase and amplitude. Samples: signature + N(0, noise^2) white
/// noise. Participants get ids 0..P-1, unseen users P..P+U-1.
Tensor user_signature(UserId user, std::size_t input_length, double separation, std::uint64_t seed);
Population synth_population(const SynthParams& params);

/// Splits one participant's utterances by index: the first plan.train go to
/// train, the next plan.validation to validation, then up to plan.test to
/// test. Warm-up is a copy of validation. Throws ArgumentError when fewer
/// than train + validation samples are available.
ClientDataset plan_split(UserId user, const Tensor& utterances, const SplitPlan& plan = {});
/// Unseen user: the first plan.unseen_test utterances become test samples.
ClientDataset unseen_split(UserId user, const Tensor& utterances, const SplitPlan& plan = {});

/// Gathers rows of a [n, 1, L] tensor.
Tensor gather_rows(const Tensor& samples, const std::vector<std::size_t>& rows);
Tensor sample_row(const Tensor& samples, std::size_t row);

/// Feature CSV: header "user_id,split,sample_index,f0,...,f{L-1}", one sample
/// per row; split is one of train, warmup, validation, test (participants) or
/// unseen (users held out of training).
void export_features(const Population& population, const std::filesystem::path& path);
std::string features_to_string(const Population& population);
/// Throws ParseError with the 1-based line number on malformed input.
Population load_features(const std::filesystem::path& path);
Population features_from_string(const std::string& text);

/// JSON manifest of user ids and split sizes.
std::string manifest_to_string(const Population& population);

}  // namespace fedua::datagen
