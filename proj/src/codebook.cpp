#include "fedua/codebook.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "fedua/error.hpp"
#include "fedua/parallel.hpp"
#include "fedua/rng.hpp"

namespace fedua::codebook {

BinaryEmbedding::BinaryEmbedding(UserId user, const std::vector<std::uint8_t>& bits)
    : user_(user), size_(bits.size()), words_((bits.size() + 63) / 64, 0) {
  if (bits.empty()) throw ArgumentError("embedding must have at least one bit");
  for (std::size_t k = 0; k < bits.size(); ++k) {
    if (bits[k] > 1) throw ArgumentError("embedding bit " + std::to_string(k) + " is not 0 or 1");
    words_[k / 64] |= static_cast<std::uint64_t>(bits[k]) << (k % 64);
  }
}

BinaryEmbedding BinaryEmbedding::from_string(UserId user, const std::string& bits) {
  std::vector<std::uint8_t> v;
  v.reserve(bits.size());
  for (char c : bits) {
    if (c != '0' && c != '1') throw ParseError("embedding bit string contains '" + std::string(1, c) + "'");
    v.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return BinaryEmbedding(user, v);
}

std::size_t BinaryEmbedding::ones() const noexcept {
  std::size_t n = 0;
  for (std::uint64_t w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::string BinaryEmbedding::to_string() const {
  std::string s(size_, '0');
  for (std::size_t k = 0; k < size_; ++k) s[k] = bit(k) ? '1' : '0';
  return s;
}

std::vector<double> BinaryEmbedding::as_reals() const {
  std::vector<double> v(size_);
  for (std::size_t k = 0; k < size_; ++k) v[k] = bit(k);
  return v;
}

BinaryEmbedding BinaryEmbedding::complement() const {
  BinaryEmbedding c = *this;
  for (std::uint64_t& w : c.words_) w = ~w;
  if (size_ % 64) c.words_.back() &= (std::uint64_t{1} << (size_ % 64)) - 1;
  return c;
}

std::uint64_t embedding_stream_key(std::uint64_t seed, UserId user) noexcept {
  return derive_seed(seed, {0x656d62ULL, user});
}

BinaryEmbedding generate_embedding(std::size_t n_e, std::uint64_t stream_key, UserId user) {
  if (n_e == 0) throw ArgumentError("embedding length n_e must be >= 1");
  BinaryEmbedding e;
  e.user_ = user;
  e.size_ = n_e;
  e.words_.resize((n_e + 63) / 64);
  Rng rng(stream_key);
  for (std::uint64_t& w : e.words_) w = rng.next();
  if (n_e % 64) e.words_.back() &= (std::uint64_t{1} << (n_e % 64)) - 1;
  return e;
}

std::size_t hamming_distance(const BinaryEmbedding& a, const BinaryEmbedding& b) {
  if (a.size() != b.size()) {
    throw ArgumentError("hamming_distance: lengths " + std::to_string(a.size()) + " and " +
                        std::to_string(b.size()) + " differ");
  }
  std::size_t d = 0;
  const auto& wa = a.words();
  const auto& wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i) d += static_cast<std::size_t>(std::popcount(wa[i] ^ wb[i]));
  return d;
}

Codebook::Codebook(std::size_t n_e, std::uint64_t seed) : n_e_(n_e), seed_(seed) {
  if (n_e == 0) throw ArgumentError("codebook n_e must be >= 1");
}

const BinaryEmbedding& Codebook::at(UserId user) const {
  auto it = embeddings_.find(user);
  if (it == embeddings_.end()) throw ArgumentError("codebook has no embedding for user " + std::to_string(user));
  return it->second;
}

void Codebook::insert(BinaryEmbedding embedding) {
  if (embedding.size() != n_e_) {
    throw ArgumentError("embedding length " + std::to_string(embedding.size()) + " != codebook n_e " +
                        std::to_string(n_e_));
  }
  const UserId id = embedding.user_id();
  if (!embeddings_.emplace(id, std::move(embedding)).second) {
    throw ArgumentError("duplicate user id " + std::to_string(id) + " in codebook");
  }
}

Codebook generate_codebook(const std::vector<UserId>& users, std::size_t n_e, std::uint64_t seed) {
  Codebook book(n_e, seed);
  for (UserId u : users) book.insert(generate_embedding(n_e, embedding_stream_key(seed, u), u));
  return book;
}

std::size_t min_pairwise_distance(const std::vector<BinaryEmbedding>& embeddings, std::size_t threads) {
  const std::size_t n = embeddings.size();
  if (n < 2) throw ArgumentError("min_pairwise_distance needs at least 2 embeddings");
  std::vector<std::size_t> row_min(n - 1, std::numeric_limits<std::size_t>::max());
  parallel_for(n - 1, threads, [&](std::size_t i) {
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t j = i + 1; j < n; ++j) best = std::min(best, hamming_distance(embeddings[i], embeddings[j]));
    row_min[i] = best;
  });
  return *std::min_element(row_min.begin(), row_min.end());
}

std::size_t min_pairwise_distance(const Codebook& book, std::size_t threads) {
  std::vector<BinaryEmbedding> all;
  all.reserve(book.size());
  for (const auto& [id, e] : book.embeddings()) all.push_back(e);
  return min_pairwise_distance(all, threads);
}

BigInt binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  BigInt c = 1;
  for (std::size_t i = 0; i < k; ++i) {
    c *= n - i;
    c /= i + 1;
  }
  return c;
}

BigInt hamming_ball_volume(std::size_t n_e, std::size_t tau) {
  if (tau > n_e + 1) {
    throw ArgumentError("hamming_ball_volume: tau " + std::to_string(tau) + " exceeds n_e + 1 = " +
                        std::to_string(n_e + 1));
  }
  BigInt total = 0;
  BigInt term = 1;  // C(n_e, d)
  for (std::size_t d = 0; d < tau; ++d) {
    total += term;
    term *= n_e - d;
    term /= d + 1;
  }
  return total;
}

namespace {

void check_bound_args(std::size_t n, std::size_t n_e, std::size_t tau) {
  if (n < 1) throw ArgumentError("min_distance_bound: n must be >= 1");
  if (tau < 1 || tau > n_e) {
    throw ArgumentError("min_distance_bound: need 1 <= tau <= n_e, got tau=" + std::to_string(tau) +
                        ", n_e=" + std::to_string(n_e));
  }
}

}  // namespace

DistanceBound min_distance_bound(std::size_t n, std::size_t n_e, std::size_t tau) {
  check_bound_args(n, n_e, tau);
  const BigInt volume = hamming_ball_volume(n_e, tau);
  const BigInt space = BigInt(1) << n_e;
  HighPrecision product = 1;
  BigInt occupied = 0;  // k * V_tau
  for (std::size_t k = 1; k < n; ++k) {
    occupied += volume;
    if (occupied >= space) {
      product = 0;
      break;
    }
    product *= ldexp(HighPrecision(space - occupied), -static_cast<int>(n_e));
  }
  return DistanceBound{n, n_e, tau, product, product.convert_to<double>()};
}

Rational min_distance_bound_exact(std::size_t n, std::size_t n_e, std::size_t tau) {
  check_bound_args(n, n_e, tau);
  const BigInt volume = hamming_ball_volume(n_e, tau);
  const BigInt space = BigInt(1) << n_e;
  Rational product = 1;
  for (std::size_t k = 1; k < n; ++k) {
    const BigInt remaining = space - volume * k;
    if (remaining <= 0) return 0;
    product *= Rational(remaining, space);
  }
  return product;
}

std::size_t choose_embedding_length(std::size_t n, std::size_t tau, double q) {
  if (n < 2) throw ArgumentError("choose_embedding_length: need at least 2 users");
  if (tau < 1) throw ArgumentError("choose_embedding_length: tau must be >= 1");
  if (!(q > 0.0 && q < 1.0)) throw ArgumentError("choose_embedding_length: confidence must lie in (0, 1)");
  const HighPrecision target = q;
  for (std::size_t n_e = tau;; ++n_e) {
    if (min_distance_bound(n, n_e, tau).value >= target) return n_e;
  }
}

double empirical_min_distance_probability(std::size_t n, std::size_t n_e, std::size_t tau, std::size_t trials,
                                          std::uint64_t seed, std::size_t threads) {
  if (trials < 1) throw ArgumentError("empirical_min_distance_probability: trials must be >= 1");
  if (n_e < 1) throw ArgumentError("empirical_min_distance_probability: n_e must be >= 1");
  if (n < 2) return 1.0;
  std::vector<std::uint8_t> ok(trials, 0);
  parallel_for(trials, threads, [&](std::size_t t) {
    const std::uint64_t trial_seed = derive_seed(seed, {t});
    std::vector<BinaryEmbedding> book;
    book.reserve(n);
    for (std::size_t u = 0; u < n; ++u) {
      book.push_back(generate_embedding(n_e, embedding_stream_key(trial_seed, static_cast<UserId>(u)),
                                        static_cast<UserId>(u)));
    }
    ok[t] = min_pairwise_distance(book) >= tau ? 1 : 0;
  });
  const auto hits = std::count(ok.begin(), ok.end(), std::uint8_t{1});
  return static_cast<double>(hits) / static_cast<double>(trials);
}

std::string codebook_to_string(const Codebook& book) {
  std::ostringstream out;
  out << "{\n  \"format\": \"fedua-codebook\",\n  \"version\": 1,\n  \"n_e\": " << book.n_e()
      << ",\n  \"seed\": " << book.seed() << ",\n  \"embeddings\": [";
  bool first = true;
  for (const auto& [id, e] : book.embeddings()) {
    out << (first ? "\n" : ",\n") << "    {\"user_id\": " << id << ", \"bits\": \"" << e.to_string() << "\"}";
    first = false;
  }
  out << "\n  ]\n}\n";
  return out.str();
}

Codebook codebook_from_string(const std::string& text) {
  using nlohmann::json;
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "fedua-codebook") throw ParseError("codebook: wrong format tag");
    if (doc.at("version").get<int>() != 1) throw ParseError("codebook: unsupported version");
    Codebook book(doc.at("n_e").get<std::size_t>(), doc.at("seed").get<std::uint64_t>());
    for (const json& e : doc.at("embeddings")) {
      book.insert(BinaryEmbedding::from_string(e.at("user_id").get<UserId>(), e.at("bits").get<std::string>()));
    }
    return book;
  } catch (const json::exception& e) {
    throw ParseError(std::string("codebook: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ParseError(std::string("codebook: ") + e.what());
  }
}

void save_codebook(const std::filesystem::path& path, const Codebook& book) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write codebook " + path.string());
  out << codebook_to_string(book);
  if (!out) throw IoError("failed writing codebook " + path.string());
}

Codebook load_codebook(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read codebook " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return codebook_from_string(buf.str());
}

}  // namespace fedua::codebook
