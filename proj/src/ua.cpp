#include "fedua/ua.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedua/error.hpp"
#include "fedua/text.hpp"

namespace fedua::ua {

namespace {

void require_predictions(const Tensor& predictions, std::size_t n_e, const char* who) {
  if (predictions.rank() != 2 || predictions.dim(1) != n_e) {
    throw ArgumentError(std::string(who) + ": predictions " + nn::shape_string(predictions.shape()) +
                        " do not have width n_e = " + std::to_string(n_e));
  }
}

}  // namespace

LossValue correlation_loss(const BinaryEmbedding& y, const Tensor& predictions) {
  const std::size_t n_e = y.size();
  require_predictions(predictions, n_e, "correlation_loss");
  const std::size_t batch = predictions.dim(0);
  const double inv_b = 1.0 / static_cast<double>(batch);
  LossValue out{0.0, Tensor(predictions.shape())};
  double total = 0.0;
  for (std::size_t k = 0; k < n_e; ++k) {
    const double sign = y.bit(k) ? 1.0 : -1.0;
    double column = 0.0;
    for (std::size_t j = 0; j < batch; ++j) {
      column += predictions[j * n_e + k];
      out.grad[j * n_e + k] = -sign * inv_b;
    }
    total += sign * column;
  }
  out.value = -total * inv_b;
  return out;
}

LossValue centralized_ua_loss(const Codebook& book, UserId user, const Tensor& predictions, double lambda) {
  if (!(lambda >= 0.0)) throw ArgumentError("centralized_ua_loss: lambda must be non-negative");
  (void)book.at(user);  // unknown user -> ArgumentError
  if (book.size() < 2) throw ArgumentError("centralized_ua_loss: needs at least one other user");
  const std::size_t n_e = book.n_e();
  require_predictions(predictions, n_e, "centralized_ua_loss");
  const std::size_t batch = predictions.dim(0);
  const double inv_b = 1.0 / static_cast<double>(batch);

  LossValue out{0.0, Tensor(predictions.shape())};
  for (const auto& [id, y] : book.embeddings()) {
    const double w = id == user ? 1.0 : -lambda;
    if (w == 0.0) continue;
    for (std::size_t j = 0; j < batch; ++j) {
      for (std::size_t k = 0; k < n_e; ++k) {
        const double diff = predictions[j * n_e + k] - y.bit(k);
        out.value += w * diff * diff * inv_b;
        out.grad[j * n_e + k] += w * 2.0 * diff * inv_b;
      }
    }
  }
  return out;
}

double embedding_distance(const BinaryEmbedding& y, std::span<const double> prediction) {
  if (prediction.size() != y.size()) throw DimensionError("prediction width does not match embedding length");
  double e = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double d = y.bit(k) - prediction[k];
    e += d * d;
  }
  return e;
}

std::vector<double> embedding_distances(const BinaryEmbedding& y, const Tensor& predictions) {
  require_predictions(predictions, y.size(), "embedding_distances");
  std::vector<double> out(predictions.dim(0));
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = embedding_distance(y, predictions.data().subspan(j * y.size(), y.size()));
  }
  return out;
}

FedUaResult run_fedua(const federation::FederatedConfig& fed_config, const ModelConfig& model_config,
                      const std::vector<datagen::ClientDataset>& clients, const FedUaOptions& options,
                      const federation::RoundObserver& observer) {
  if (clients.empty()) throw ArgumentError("run_fedua: no participants");
  std::size_t n_e = options.embedding_length;
  if (options.sizing) {
    n_e = codebook::choose_embedding_length(clients.size(), options.sizing->min_dist_tau, options.sizing->bound_q);
  }
  if (n_e == 0) throw ArgumentError("run_fedua: either an embedding length or a sizing request is required");

  std::vector<UserId> ids;
  for (const auto& c : clients) ids.push_back(c.user_id);
  FedUaResult result{nn::with_embedding_length(model_config, n_e), {},
                     codebook::generate_codebook(ids, n_e, options.codebook_seed), {}};
  nn::shape_check(result.model_config);

  const Codebook& book = result.codebook;
  auto loss_for = [&book](UserId user) -> federation::BatchLoss {
    const BinaryEmbedding& y = book.at(user);
    return [&y](const Tensor& predictions) { return correlation_loss(y, predictions); };
  };
  auto run = federation::run_fedavg(fed_config, clients, result.model_config, loss_for, observer);
  result.params = std::move(run.params);
  result.rounds = std::move(run.rounds);
  return result;
}

CalibrationResult calibrate_threshold(UserId user, std::vector<double> distances, double r) {
  if (!(r > 0.0 && r <= 1.0)) throw ArgumentError("target TPR r must lie in (0, 1]");
  const std::size_t k = distances.size();
  const auto i = static_cast<std::size_t>(std::floor(static_cast<double>(k) * r));
  if (i == 0) {
    throw CalibrationError("warm-up: floor(k*r) = 0 with k=" + std::to_string(k) + ", r=" + format_double(r) +
                           "; more warm-up samples are needed");
  }
  std::sort(distances.begin(), distances.end());
  return CalibrationResult{user, distances[i - 1], k, r, std::move(distances)};
}

CalibrationResult warm_up_threshold(const ModelParams& params, const ModelConfig& config, const BinaryEmbedding& y,
                                    const Tensor& samples, double r) {
  if (samples.empty()) throw CalibrationError("warm-up: no samples");
  const Tensor pred = nn::forward(params, config, samples);
  return calibrate_threshold(y.user_id(), embedding_distances(y, pred), r);
}

AuthDecision authenticate(const ModelParams& params, const ModelConfig& config, const BinaryEmbedding& y, double tau,
                          const Tensor& x) {
  if (x.size() != config.input_length || (x.rank() != 3 && x.rank() != 2) || x.dim(0) != 1) {
    throw DimensionError("authenticate: expected a single input of length " + std::to_string(config.input_length) +
                         ", got " + nn::shape_string(x.shape()));
  }
  const Tensor pred = nn::forward(params, config, x.reshaped({1, 1, config.input_length}));
  const double e = embedding_distance(y, pred.data());
  return AuthDecision{e <= tau ? Verdict::Accept : Verdict::Reject, e, tau};
}

std::string calibration_to_string(const std::vector<CalibrationResult>& results) {
  std::vector<const CalibrationResult*> sorted;
  for (const auto& r : results) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->user_id < b->user_id; });
  std::ostringstream out;
  out << "user_id,k,r,tau\n";
  for (const auto* r : sorted) {
    out << r->user_id << ',' << r->k << ',' << format_double(r->r) << ',' << format_double(r->tau) << '\n';
  }
  return out.str();
}

void save_calibration(const std::filesystem::path& path, const std::vector<CalibrationResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write calibration " + path.string());
  out << calibration_to_string(results);
  if (!out) throw IoError("failed writing calibration " + path.string());
}

std::vector<CalibrationResult> calibration_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || trim(line) != "user_id,k,r,tau") {
    throw ParseError("calibration line 1: expected header user_id,k,r,tau");
  }
  std::vector<CalibrationResult> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 4) throw ParseError("calibration line " + std::to_string(line_no) + ": expected 4 fields");
    try {
      CalibrationResult r;
      r.user_id = static_cast<UserId>(std::stoul(std::string(f[0])));
      r.k = std::stoul(std::string(f[1]));
      r.r = parse_double(f[2]);
      r.tau = parse_double(f[3]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw ParseError("calibration line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CalibrationResult> load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read calibration " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return calibration_from_string(buf.str());
}

}  // namespace fedua::ua
