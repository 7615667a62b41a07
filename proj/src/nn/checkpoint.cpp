#include "fedua/nn/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "fedua/error.hpp"
#include "fedua/text.hpp"

namespace fedua::nn {

using nlohmann::json;

json config_to_json(const ModelConfig& config) {
  json layers = json::array();
  for (const LayerSpec& l : config.layers) {
    json e{{"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::Conv1d:
        e["channels"] = l.channels;
        e["kernel"] = l.kernel;
        break;
      case LayerKind::AvgPool1d: e["rate"] = l.rate; break;
      case LayerKind::GroupNorm: e["groups"] = l.groups; break;
      case LayerKind::FullyConnected:
        e["n1"] = l.fan_in;
        e["n2"] = l.fan_out;
        break;
      default: break;
    }
    layers.push_back(std::move(e));
  }
  return json{{"input_length", config.input_length},
              {"embedding_length", config.embedding_length},
              {"layers", std::move(layers)}};
}

ModelConfig config_from_json(const json& j) {
  try {
    const auto input_length = j.at("input_length").get<std::size_t>();
    const auto n_e = j.at("embedding_length").get<std::size_t>();
    if (j.contains("preset")) {
      const auto preset = j.at("preset").get<std::string>();
      if (preset == "table1") {
        ModelConfig c = table1_config(n_e);
        if (c.input_length != input_length) throw ConfigError("table1 preset requires input_length 16384");
        return c;
      }
      if (preset == "desk") return desk_config(input_length, n_e);
      throw ConfigError("unknown model preset '" + preset + "'");
    }
    ModelConfig c;
    c.input_length = input_length;
    c.embedding_length = n_e;
    for (const json& e : j.at("layers")) {
      LayerSpec l;
      l.kind = parse_layer_kind(e.at("kind").get<std::string>());
      l.channels = e.value("channels", std::size_t{0});
      l.kernel = e.value("kernel", std::size_t{0});
      l.rate = e.value("rate", std::size_t{0});
      l.groups = e.value("groups", std::size_t{0});
      l.fan_in = e.value("n1", std::size_t{0});
      l.fan_out = e.value("n2", std::size_t{0});
      c.layers.push_back(l);
    }
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

namespace {

void write_array(std::ostringstream& out, std::span<const double> values) {
  out << '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    out << format_double(values[i]);
  }
  out << ']';
}

}  // namespace

std::string checkpoint_to_string(const ModelConfig& config, const ModelParams& params) {
  if (params.layers.size() != config.layers.size()) throw DimensionError("checkpoint: params do not match config");
  std::ostringstream out;
  out << "{\n  \"format\": \"fedua-checkpoint\",\n  \"version\": " << params.version << ",\n";
  out << "  \"config\": " << config_to_json(config).dump() << ",\n";
  out << "  \"layers\": [";
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    out << (i ? ",\n" : "\n") << "    {\"index\": " << i << ", \"kind\": \"" << to_string(config.layers[i].kind)
        << "\", \"tensors\": [";
    const auto& tensors = params.layers[i].tensors;
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      if (t) out << ", ";
      out << "{\"shape\": " << json(tensors[t].shape()).dump() << ", \"data\": ";
      for (double v : tensors[t].data()) {
        if (!std::isfinite(v)) throw ArgumentError("checkpoint: non-finite parameter in layer " + std::to_string(i));
      }
      write_array(out, tensors[t].data());
      out << '}';
    }
    out << "]}";
  }
  out << "\n  ]\n}\n";
  return out.str();
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != "fedua-checkpoint") throw ParseError("checkpoint: wrong format tag");
    const int version = doc.at("version").get<int>();
    if (version != ModelParams::kVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.config = config_from_json(doc.at("config"));
    const ModelParams expected = build_model(ck.config, 0);
    const json& layers = doc.at("layers");
    if (layers.size() != expected.layers.size()) throw ParseError("checkpoint: layer count mismatch");
    ck.params.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const json& tensors = layers[i].at("tensors");
      if (tensors.size() != expected.layers[i].tensors.size()) {
        throw ParseError("checkpoint: layer " + std::to_string(i) + " has wrong tensor count");
      }
      for (std::size_t t = 0; t < tensors.size(); ++t) {
        Tensor tensor(tensors[t].at("shape").get<Shape>(), tensors[t].at("data").get<std::vector<double>>());
        if (tensor.shape() != expected.layers[i].tensors[t].shape()) {
          throw ParseError("checkpoint: layer " + std::to_string(i) + " tensor shape mismatch");
        }
        ck.params.layers[i].tensors.push_back(std::move(tensor));
      }
    }
    return ck;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const DimensionError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params) {
  const std::string text = checkpoint_to_string(config, params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << text;
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace fedua::nn
