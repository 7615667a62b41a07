#include "fedua/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "fedua/error.hpp"
#include "fedua/rng.hpp"
#include "fedua/text.hpp"

namespace fedua::datagen {

const ClientDataset& Population::participant(UserId user) const {
  for (const auto& c : participants) {
    if (c.user_id == user) return c;
  }
  throw ArgumentError("no participant with id " + std::to_string(user));
}

std::vector<UserId> Population::participant_ids() const {
  std::vector<UserId> ids;
  for (const auto& c : participants) ids.push_back(c.user_id);
  return ids;
}

Tensor user_signature(UserId user, std::size_t input_length, double separation, std::uint64_t seed) {
  constexpr int kTones = 3;
  Rng rng(derive_seed(seed, {0x736967ULL, user}));
  Tensor sig({1, 1, input_length});
  const double len = static_cast<double>(input_length);
  for (int m = 0; m < kTones; ++m) {
    const double freq = rng.uniform(1.0, len / 8.0);  // cycles per window
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double amp = rng.uniform(0.5, 1.0) * separation;
    for (std::size_t t = 0; t < input_length; ++t) {
      sig[t] += amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) / len + phase);
    }
  }
  return sig;
}

namespace {

enum SplitTag : std::uint64_t { kTrain = 1, kWarmup, kValidation, kTest };

Tensor draw_samples(const Tensor& signature, std::size_t count, double noise, std::uint64_t key) {
  if (count == 0) return {};
  const std::size_t len = signature.size();
  Tensor out({count, 1, len});
  for (std::size_t s = 0; s < count; ++s) {
    Rng rng(derive_seed(key, {s}));
    for (std::size_t t = 0; t < len; ++t) out[s * len + t] = signature[t] + noise * rng.normal();
  }
  return out;
}

}  // namespace

Population synth_population(const SynthParams& p) {
  if (!(p.separation > 0.0)) throw ArgumentError("synth_population: separation must be positive");
  if (!(p.noise >= 0.0)) throw ArgumentError("synth_population: noise must be non-negative");
  if (p.input_length < 4) throw ArgumentError("synth_population: input length must be >= 4");
  if (p.plan.train < 1) throw ArgumentError("synth_population: need at least one training sample per user");

  Population pop;
  pop.input_length = p.input_length;
  pop.seed = p.seed;
  auto key = [&](UserId u, SplitTag tag) { return derive_seed(p.seed, {0x736d70ULL, u, tag}); };
  for (std::size_t i = 0; i < p.participants; ++i) {
    const auto u = static_cast<UserId>(i);
    const Tensor sig = user_signature(u, p.input_length, p.separation, p.seed);
    ClientDataset c;
    c.user_id = u;
    c.train = draw_samples(sig, p.plan.train, p.noise, key(u, kTrain));
    c.validation = draw_samples(sig, p.plan.validation, p.noise, key(u, kValidation));
    c.warmup = p.plan.disjoint_warmup ? draw_samples(sig, p.plan.warmup, p.noise, key(u, kWarmup)) : c.validation;
    c.test = draw_samples(sig, p.plan.test, p.noise, key(u, kTest));
    pop.participants.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < p.unseen; ++i) {
    const auto u = static_cast<UserId>(p.participants + i);
    const Tensor sig = user_signature(u, p.input_length, p.separation, p.seed);
    ClientDataset c;
    c.user_id = u;
    c.test = draw_samples(sig, p.plan.unseen_test, p.noise, key(u, kTest));
    pop.unseen.push_back(std::move(c));
  }
  return pop;
}

Tensor gather_rows(const Tensor& samples, const std::vector<std::size_t>& rows) {
  if (rows.empty()) return {};
  const std::size_t len = samples.dim(2);
  Tensor out({rows.size(), 1, len});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= samples.dim(0)) throw ArgumentError("gather_rows: row index out of range");
    std::copy_n(samples.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * len), len,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * len));
  }
  return out;
}

Tensor sample_row(const Tensor& samples, std::size_t row) { return gather_rows(samples, {row}); }

namespace {

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v;
  for (std::size_t i = begin; i < end; ++i) v.push_back(i);
  return v;
}

void require_utterances(const Tensor& utterances) {
  if (utterances.rank() != 3 || utterances.dim(1) != 1) {
    throw DimensionError("utterances must be shaped [n, 1, L], got " + nn::shape_string(utterances.shape()));
  }
}

}  // namespace

ClientDataset plan_split(UserId user, const Tensor& utterances, const SplitPlan& plan) {
  require_utterances(utterances);
  const std::size_t n = utterances.dim(0);
  const std::size_t needed = plan.train + plan.validation;
  if (plan.train < 1 || n < needed) {
    throw ArgumentError("user " + std::to_string(user) + " has " + std::to_string(n) + " utterances, split needs " +
                        std::to_string(needed));
  }
  ClientDataset c;
  c.user_id = user;
  c.train = gather_rows(utterances, iota_rows(0, plan.train));
  c.validation = gather_rows(utterances, iota_rows(plan.train, needed));
  c.warmup = c.validation;
  c.test = gather_rows(utterances, iota_rows(needed, std::min(n, needed + plan.test)));
  return c;
}

ClientDataset unseen_split(UserId user, const Tensor& utterances, const SplitPlan& plan) {
  require_utterances(utterances);
  if (utterances.dim(0) < plan.unseen_test) {
    throw ArgumentError("unseen user " + std::to_string(user) + " has " + std::to_string(utterances.dim(0)) +
                        " utterances, need " + std::to_string(plan.unseen_test));
  }
  ClientDataset c;
  c.user_id = user;
  c.test = gather_rows(utterances, iota_rows(0, plan.unseen_test));
  return c;
}

namespace {

void write_split(std::ostringstream& out, UserId user, const char* label, const Tensor& samples) {
  if (samples.empty()) return;
  const std::size_t len = samples.dim(2);
  for (std::size_t s = 0; s < samples.dim(0); ++s) {
    out << user << ',' << label << ',' << s;
    for (std::size_t t = 0; t < len; ++t) out << ',' << format_double(samples[s * len + t]);
    out << '\n';
  }
}

}  // namespace

std::string features_to_string(const Population& population) {
  std::ostringstream out;
  out << "user_id,split,sample_index";
  for (std::size_t t = 0; t < population.input_length; ++t) out << ",f" << t;
  out << '\n';
  for (const auto& c : population.participants) {
    write_split(out, c.user_id, "train", c.train);
    write_split(out, c.user_id, "warmup", c.warmup);
    write_split(out, c.user_id, "validation", c.validation);
    write_split(out, c.user_id, "test", c.test);
  }
  for (const auto& c : population.unseen) write_split(out, c.user_id, "unseen", c.test);
  return out.str();
}

void export_features(const Population& population, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write features " + path.string());
  out << features_to_string(population);
  if (!out) throw IoError("failed writing features " + path.string());
}

Population features_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    return ParseError("features line " + std::to_string(line_no) + ": " + why);
  };
  if (!std::getline(in, line)) {
    line_no = 1;
    throw fail("empty file");
  }
  ++line_no;
  const auto header = split(trim(line), ',');
  if (header.size() < 4 || header[0] != "user_id" || header[1] != "split" || header[2] != "sample_index") {
    throw fail("expected header user_id,split,sample_index,f0,...");
  }
  const std::size_t len = header.size() - 3;

  // user -> split -> sample index -> values
  std::map<UserId, std::map<std::string, std::map<std::size_t, std::vector<double>>>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim(line);
    if (view.empty()) continue;
    const auto fields = split(view, ',');
    if (fields.size() != header.size()) {
      throw fail("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    UserId user = 0;
    std::size_t index = 0;
    try {
      user = static_cast<UserId>(std::stoul(std::string(fields[0])));
      index = std::stoul(std::string(fields[2]));
    } catch (const std::exception&) {
      throw fail("bad user_id or sample_index");
    }
    const std::string label(fields[1]);
    if (label != "train" && label != "warmup" && label != "validation" && label != "test" && label != "unseen") {
      throw fail("unknown split '" + label + "'");
    }
    std::vector<double> values(len);
    for (std::size_t t = 0; t < len; ++t) {
      try {
        values[t] = parse_double(fields[3 + t]);
      } catch (const ParseError& e) {
        throw fail(e.what());
      }
      if (!std::isfinite(values[t])) throw fail("non-finite feature");
    }
    if (!rows[user][label].emplace(index, std::move(values)).second) {
      throw fail("duplicate sample " + std::to_string(index) + " in split " + label);
    }
  }
  if (rows.empty()) throw fail("no samples");

  auto assemble = [&](const std::map<std::size_t, std::vector<double>>& samples, UserId user,
                      const std::string& label) {
    std::vector<double> flat;
    std::size_t expect = 0;
    for (const auto& [idx, v] : samples) {
      if (idx != expect) {
        throw ParseError("features: user " + std::to_string(user) + " split " + label +
                         " sample indices are not 0..n-1");
      }
      ++expect;
      flat.insert(flat.end(), v.begin(), v.end());
    }
    return Tensor({samples.size(), 1, len}, std::move(flat));
  };

  Population pop;
  pop.input_length = len;
  for (const auto& [user, splits] : rows) {
    ClientDataset c;
    c.user_id = user;
    const bool unseen = splits.contains("unseen");
    if (unseen && splits.size() != 1) {
      throw ParseError("features: user " + std::to_string(user) + " mixes unseen and participant splits");
    }
    for (const auto& [label, samples] : splits) {
      Tensor t = assemble(samples, user, label);
      if (label == "train") c.train = std::move(t);
      else if (label == "warmup") c.warmup = std::move(t);
      else if (label == "validation") c.validation = std::move(t);
      else c.test = std::move(t);
    }
    if (unseen) {
      pop.unseen.push_back(std::move(c));
    } else {
      if (c.train.empty()) throw ParseError("features: participant " + std::to_string(user) + " has no train rows");
      pop.participants.push_back(std::move(c));
    }
  }
  return pop;
}

Population load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read features " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return features_from_string(buf.str());
}

std::string manifest_to_string(const Population& population) {
  using nlohmann::json;
  auto count = [](const Tensor& t) { return t.empty() ? std::size_t{0} : t.dim(0); };
  json users = json::array();
  for (const auto& c : population.participants) {
    users.push_back({{"user_id", c.user_id},
                     {"role", "participant"},
                     {"train", count(c.train)},
                     {"warmup", count(c.warmup)},
                     {"validation", count(c.validation)},
                     {"test", count(c.test)}});
  }
  for (const auto& c : population.unseen) {
    users.push_back({{"user_id", c.user_id}, {"role", "unseen"}, {"test", count(c.test)}});
  }
  return json{{"input_length", population.input_length}, {"seed", population.seed}, {"users", users}}.dump(2) +
         "\n";
}

}  // namespace fedua::datagen
