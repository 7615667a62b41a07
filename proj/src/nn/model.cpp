#include "fedua/nn/model.hpp"

#include <cmath>

#include "fedua/error.hpp"
#include "fedua/nn/layers.hpp"
#include "fedua/rng.hpp"

namespace fedua::nn {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::Relu: return "relu";
    case LayerKind::AvgPool1d: return "avg_pool1d";
    case LayerKind::GroupNorm: return "group_norm";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Flatten: return "flatten";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (LayerKind k : {LayerKind::Conv1d, LayerKind::Relu, LayerKind::AvgPool1d, LayerKind::GroupNorm,
                      LayerKind::FullyConnected, LayerKind::Sigmoid, LayerKind::Flatten}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown layer kind '" + name + "'");
}

std::vector<ActivationShape> shape_check(const ModelConfig& config) {
  if (config.input_length == 0) throw ConfigError("input_length must be positive");
  if (config.embedding_length == 0) throw ConfigError("embedding_length must be positive");
  if (config.layers.empty()) throw ConfigError("model has no layers");

  std::vector<ActivationShape> shapes{{1, config.input_length, false}};
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    ActivationShape s = shapes.back();
    auto fail = [&](const std::string& why) {
      return ConfigError("layer " + std::to_string(i) + " (" + to_string(l.kind) + "): " + why);
    };
    switch (l.kind) {
      case LayerKind::Conv1d:
        if (s.flat) throw fail("needs a [C, L] activation");
        if (l.channels == 0 || l.kernel == 0) throw fail("channels and kernel must be >= 1");
        if (l.kernel % 2 == 0) throw fail("kernel must be odd for same padding");
        s.channels = l.channels;
        break;
      case LayerKind::AvgPool1d:
        if (s.flat) throw fail("needs a [C, L] activation");
        if (l.rate == 0 || s.length % l.rate != 0) {
          throw fail("rate " + std::to_string(l.rate) + " does not divide length " + std::to_string(s.length));
        }
        s.length /= l.rate;
        break;
      case LayerKind::GroupNorm:
        if (s.flat) throw fail("needs a [C, L] activation");
        if (l.groups == 0 || s.channels % l.groups != 0) {
          throw fail(std::to_string(l.groups) + " groups do not divide " + std::to_string(s.channels) + " channels");
        }
        break;
      case LayerKind::FullyConnected:
        if (l.fan_in == 0 || l.fan_out == 0) throw fail("n1 and n2 must be >= 1");
        if (s.features() != l.fan_in) {
          throw fail("expects " + std::to_string(l.fan_in) + " inputs, chain provides " +
                     std::to_string(s.features()));
        }
        s = {1, l.fan_out, true};
        break;
      case LayerKind::Flatten:
        s = {1, s.features(), true};
        break;
      case LayerKind::Relu:
      case LayerKind::Sigmoid:
        break;
    }
    shapes.push_back(s);
  }
  if (config.layers.back().kind != LayerKind::Sigmoid) {
    throw ConfigError("layer " + std::to_string(config.layers.size() - 1) + ": final layer must be sigmoid");
  }
  if (shapes.back().features() != config.embedding_length) {
    throw ConfigError("chain ends with " + std::to_string(shapes.back().features()) +
                      " outputs, embedding_length is " + std::to_string(config.embedding_length));
  }
  return shapes;
}

ModelConfig table1_config(std::size_t n_e) {
  using L = LayerSpec;
  return ModelConfig{{L::conv1d(64, 21), L::relu(), L::avg_pool1d(8), L::group_norm(2),
                      L::conv1d(256, 11), L::relu(), L::avg_pool1d(32), L::group_norm(2),
                      L::conv1d(1024, 5), L::relu(), L::avg_pool1d(64), L::group_norm(2),
                      L::flatten(), L::fully_connected(1024, n_e), L::sigmoid()},
                     std::size_t{1} << 14, n_e};
}

ModelConfig desk_config(std::size_t input_length, std::size_t n_e) {
  if (input_length < 256 || input_length % 256 != 0) {
    throw ConfigError("desk model needs an input length that is a positive multiple of 256");
  }
  using L = LayerSpec;
  return ModelConfig{{L::conv1d(8, 9), L::relu(), L::avg_pool1d(4), L::group_norm(2),
                      L::conv1d(16, 5), L::relu(), L::avg_pool1d(4), L::group_norm(2),
                      L::conv1d(32, 3), L::relu(), L::avg_pool1d(input_length / 16), L::group_norm(2),
                      L::flatten(), L::fully_connected(32, n_e), L::sigmoid()},
                     input_length, n_e};
}

ModelConfig with_embedding_length(ModelConfig config, std::size_t n_e) {
  for (auto it = config.layers.rbegin(); it != config.layers.rend(); ++it) {
    if (it->kind == LayerKind::FullyConnected) {
      it->fan_out = n_e;
      config.embedding_length = n_e;
      return config;
    }
  }
  throw ConfigError("model has no fully-connected output layer");
}

std::size_t ModelParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for_each_tensor([&](const Tensor& t) { n += t.size(); });
  return n;
}

bool ModelParams::same_layout(const ModelParams& other) const noexcept {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& a = layers[i].tensors;
    const auto& b = other.layers[i].tensors;
    if (a.size() != b.size()) return false;
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (a[j].shape() != b[j].shape()) return false;
    }
  }
  return true;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for_each_tensor([&](const Tensor& t) { out.insert(out.end(), t.data().begin(), t.data().end()); });
  return out;
}

void ModelParams::assign(std::span<const double> values) {
  if (values.size() != parameter_count()) throw DimensionError("parameter vector length mismatch");
  std::size_t offset = 0;
  for_each_tensor([&](Tensor& t) {
    auto d = t.data();
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
              values.begin() + static_cast<std::ptrdiff_t>(offset + d.size()), d.begin());
    offset += d.size();
  });
}

std::vector<double> ModelParams::flatten_grad() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for_each_tensor([&](const Tensor& t) {
    auto g = t.grad();
    out.insert(out.end(), g.begin(), g.end());
  });
  return out;
}

bool operator==(const ModelParams& a, const ModelParams& b) noexcept {
  if (a.version != b.version || !a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    for (std::size_t j = 0; j < a.layers[i].tensors.size(); ++j) {
      if (!(a.layers[i].tensors[j] == b.layers[i].tensors[j])) return false;
    }
  }
  return true;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::uint64_t key) {
  Tensor t(std::move(shape));
  Rng rng(key);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

ModelParams build_model(const ModelConfig& config, std::uint64_t seed) {
  const auto shapes = shape_check(config);
  ModelParams params;
  params.layers.resize(config.layers.size());
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    const ActivationShape& in = shapes[i];
    auto& tensors = params.layers[i].tensors;
    switch (l.kind) {
      case LayerKind::Conv1d: {
        const double a = 1.0 / std::sqrt(static_cast<double>(in.channels * l.kernel));
        tensors.push_back(uniform_tensor({l.channels, in.channels, l.kernel}, a, derive_seed(seed, {i, 0})));
        tensors.push_back(uniform_tensor({l.channels}, a, derive_seed(seed, {i, 1})));
        break;
      }
      case LayerKind::FullyConnected: {
        const double a = 1.0 / std::sqrt(static_cast<double>(l.fan_in));
        tensors.push_back(uniform_tensor({l.fan_in, l.fan_out}, a, derive_seed(seed, {i, 0})));
        tensors.push_back(uniform_tensor({l.fan_out}, a, derive_seed(seed, {i, 1})));
        break;
      }
      case LayerKind::GroupNorm:
        tensors.emplace_back(Shape{in.channels}, 1.0);
        tensors.emplace_back(Shape{in.channels}, 0.0);
        break;
      default:
        break;
    }
  }
  return params;
}

namespace {

void check_params(const ModelParams& params, const ModelConfig& config) {
  if (params.layers.size() != config.layers.size()) {
    throw DimensionError("parameters have " + std::to_string(params.layers.size()) + " layers, config has " +
                         std::to_string(config.layers.size()));
  }
}

}  // namespace

Tensor forward(const ModelParams& params, const ModelConfig& config, const Tensor& batch, ForwardCache* cache) {
  check_params(params, config);
  if (batch.rank() != 3 || batch.dim(1) != 1 || batch.dim(2) != config.input_length) {
    throw DimensionError("forward expects [B, 1, " + std::to_string(config.input_length) + "], got " +
                         shape_string(batch.shape()));
  }
  if (cache) cache->clear();
  Tensor act = batch;
  for (std::size_t i = 0; i < config.layers.size(); ++i) {
    const LayerSpec& l = config.layers[i];
    const auto& p = params.layers[i].tensors;
    Tensor next;
    switch (l.kind) {
      case LayerKind::Conv1d: next = conv1d_forward(act, p.at(0), p.at(1)); break;
      case LayerKind::Relu: next = relu_forward(act); break;
      case LayerKind::AvgPool1d: next = avg_pool1d_forward(act, l.rate); break;
      case LayerKind::GroupNorm: next = group_norm_forward(act, l.groups, p.at(0), p.at(1)); break;
      case LayerKind::FullyConnected: next = fc_forward(act, p.at(0), p.at(1)); break;
      case LayerKind::Sigmoid: next = sigmoid_forward(act); break;
      case LayerKind::Flatten: next = act.reshaped({act.dim(0), act.size() / act.dim(0)}); break;
    }
    if (cache) cache->inputs.push_back(std::move(act));
    act = std::move(next);
  }
  Tensor out = act.reshaped({batch.dim(0), config.embedding_length});
  if (cache) cache->output = out;
  return out;
}

Tensor backward(ModelParams& params, const ModelConfig& config, const ForwardCache& cache, const Tensor& loss_grad) {
  if (!cache.valid()) throw StateError("backward called before forward");
  check_params(params, config);
  if (cache.inputs.size() != config.layers.size()) throw StateError("forward cache does not match the model");
  if (loss_grad.shape() != cache.output.shape()) {
    throw DimensionError("loss gradient " + shape_string(loss_grad.shape()) + " does not match output " +
                         shape_string(cache.output.shape()));
  }
  Tensor grad = loss_grad;
  for (std::size_t idx = config.layers.size(); idx-- > 0;) {
    const LayerSpec& l = config.layers[idx];
    const Tensor& in = cache.inputs[idx];
    auto& p = params.layers[idx].tensors;
    switch (l.kind) {
      case LayerKind::Conv1d: grad = conv1d_backward(in, p[0], p[1], grad.reshaped(Shape{in.dim(0), p[0].dim(0), in.dim(2)})); break;
      case LayerKind::Relu: grad = relu_backward(in, grad.reshaped(in.shape())); break;
      case LayerKind::AvgPool1d:
        grad = avg_pool1d_backward(in, l.rate, grad.reshaped({in.dim(0), in.dim(1), in.dim(2) / l.rate}));
        break;
      case LayerKind::GroupNorm: grad = group_norm_backward(in, l.groups, p[0], p[1], grad.reshaped(in.shape())); break;
      case LayerKind::FullyConnected: grad = fc_backward(in, p[0], p[1], grad); break;
      case LayerKind::Sigmoid: {
        const Tensor& out = idx + 1 < cache.inputs.size() ? cache.inputs[idx + 1] : cache.output;
        grad = sigmoid_backward(out, grad).reshaped(in.shape());
        break;
      }
      case LayerKind::Flatten: grad = grad.reshaped(in.shape()); break;
    }
  }
  return grad;
}

void sgd_step(ModelParams& params, double lr) {
  params.for_each_tensor([](const Tensor& t) {
    if (!t.has_grad()) throw StateError("sgd_step: parameter without gradient (run backward first)");
  });
  params.for_each_tensor([&](Tensor& t) {
    auto d = t.data();
    auto g = t.grad();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
    t.zero_grad();
  });
}

std::vector<double> central_difference(std::vector<double> x,
                                       const std::function<double(std::span<const double>)>& f, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite difference step h must be positive");
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::vector<double> finite_diff_grad(const ModelParams& params, const ModelConfig& config, const Tensor& batch,
                                     const std::function<double(const Tensor&)>& loss, double h) {
  ModelParams probe = params;
  return central_difference(params.flatten(),
                            [&](std::span<const double> values) {
                              probe.assign(values);
                              return loss(forward(probe, config, batch));
                            },
                            h);
}

}  // namespace fedua::nn
