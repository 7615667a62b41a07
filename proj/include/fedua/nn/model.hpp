#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedua/nn/tensor.hpp"

namespace fedua::nn {

enum class LayerKind { Conv1d, Relu, AvgPool1d, GroupNorm, FullyConnected, Sigmoid, Flatten };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

/// One layer of the fixed-topology chain. Only the fields relevant to `kind`
/// are meaningful; the rest stay zero.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t channels = 0;  // Conv1d output channels
  std::size_t kernel = 0;    // Conv1d kernel size (odd)
  std::size_t rate = 0;      // AvgPool1d downsampling rate
  std::size_t groups = 0;    // GroupNorm groups
  std::size_t fan_in = 0;    // FullyConnected n1
  std::size_t fan_out = 0;   // FullyConnected n2

  static LayerSpec conv1d(std::size_t channels, std::size_t kernel) {
    return {LayerKind::Conv1d, channels, kernel, 0, 0, 0, 0};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec avg_pool1d(std::size_t rate) { return {LayerKind::AvgPool1d, 0, 0, rate, 0, 0, 0}; }
  static LayerSpec group_norm(std::size_t groups) { return {LayerKind::GroupNorm, 0, 0, 0, groups, 0, 0}; }
  static LayerSpec fully_connected(std::size_t n1, std::size_t n2) {
    return {LayerKind::FullyConnected, 0, 0, 0, 0, n1, n2};
  }
  static LayerSpec sigmoid() { return {LayerKind::Sigmoid}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelConfig {
  std::vector<LayerSpec> layers;
  std::size_t input_length = 0;
  std::size_t embedding_length = 0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Per-sample activation shape while walking the chain.
struct ActivationShape {
  std::size_t channels = 1;
  std::size_t length = 0;
  bool flat = false;  // true once the activation is a plain feature vector
  std::size_t features() const noexcept { return flat ? length : channels * length; }
};

/// Validates the chain and returns the activation shape after every layer
/// (element 0 is the input). Throws ConfigError naming the offending layer.
std::vector<ActivationShape> shape_check(const ModelConfig& config);

/// The speech network: three conv blocks (conv, relu, avg-pool, GN) then
/// flatten, FC and sigmoid. Input 1 x 2^14, FC(2^10, n_e).
ModelConfig table1_config(std::size_t embedding_length);

/// Same block structure scaled down for desk-sized synthetic inputs.
/// input_length must be a multiple of 256.
ModelConfig desk_config(std::size_t input_length, std::size_t embedding_length);

/// Returns a copy whose final FullyConnected layer emits n_e outputs.
ModelConfig with_embedding_length(ModelConfig config, std::size_t embedding_length);

struct LayerParams {
  std::vector<Tensor> tensors;  // conv/fc: {weight, bias}; GN: {scale, shift}; others: {}
};

struct ModelParams {
  static constexpr int kVersion = 1;
  std::vector<LayerParams> layers;
  int version = kVersion;

  std::size_t parameter_count() const noexcept;
  /// Same number of layers and tensor shapes.
  bool same_layout(const ModelParams& other) const noexcept;
  /// All values concatenated in layer/tensor order.
  std::vector<double> flatten() const;
  void assign(std::span<const double> values);
  std::vector<double> flatten_grad() const;

  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    for (auto& layer : layers)
      for (auto& t : layer.tensors) fn(t);
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    for (const auto& layer : layers)
      for (const auto& t : layer.tensors) fn(t);
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) noexcept;
};

/// Uniform(-a, a) with a = 1/sqrt(fan_in) for conv/FC tensors; GN scale 1,
/// shift 0. Bit-identical for identical (config, seed).
ModelParams build_model(const ModelConfig& config, std::uint64_t seed);

/// Layer inputs recorded by forward() for use in backward().
struct ForwardCache {
  std::vector<Tensor> inputs;  // input of each layer
  Tensor output;
  bool valid() const noexcept { return !inputs.empty(); }
  void clear() noexcept {
    inputs.clear();
    output = Tensor{};
  }
};

/// batch [B, 1, input_length] -> [B, n_e]. When `cache` is given it is filled
/// for a subsequent backward().
Tensor forward(const ModelParams& params, const ModelConfig& config, const Tensor& batch,
               ForwardCache* cache = nullptr);

/// Populates every parameter's grad buffer with d(loss)/d(param) given
/// loss_grad = d(loss)/d(output), shape [B, n_e]. Returns d(loss)/d(batch).
/// Throws StateError if the cache is empty.
Tensor backward(ModelParams& params, const ModelConfig& config, const ForwardCache& cache, const Tensor& loss_grad);

/// p <- p - lr * grad(p), then zero grads. Throws StateError when any tensor
/// lacks a gradient buffer.
void sgd_step(ModelParams& params, double lr);

/// Central difference (f(x+h) - f(x-h)) / 2h for every coordinate of x.
std::vector<double> central_difference(std::vector<double> x,
                                       const std::function<double(std::span<const double>)>& f, double h);

/// Finite-difference gradient of loss(forward(params, batch)) with respect to
/// every parameter, in the layout of ModelParams::flatten().
std::vector<double> finite_diff_grad(const ModelParams& params, const ModelConfig& config, const Tensor& batch,
                                     const std::function<double(const Tensor&)>& loss, double h);

}  // namespace fedua::nn
