#pragma once

// Random binary user embeddings and the probabilistic minimum-distance bound
// used by the server to size them.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

namespace fedua::codebook {

using UserId = std::uint32_t;
using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;
using HighPrecision = boost::multiprecision::cpp_bin_float_100;

/// y in {0,1}^n_e, packed 64 bits per word (unused high bits are zero).
class BinaryEmbedding {
 public:
  BinaryEmbedding() = default;
  /// Throws ArgumentError unless every entry is 0 or 1 and bits is non-empty.
  BinaryEmbedding(UserId user, const std::vector<std::uint8_t>& bits);
  static BinaryEmbedding from_string(UserId user, const std::string& bits);

  UserId user_id() const noexcept { return user_; }
  std::size_t size() const noexcept { return size_; }
  int bit(std::size_t k) const noexcept { return static_cast<int>((words_[k / 64] >> (k % 64)) & 1U); }
  const std::vector<std::uint64_t>& words() const noexcept { return words_; }
  std::size_t ones() const noexcept;
  /// "0"/"1" characters, position 0 first.
  std::string to_string() const;
  std::vector<double> as_reals() const;
  BinaryEmbedding complement() const;

  friend bool operator==(const BinaryEmbedding&, const BinaryEmbedding&) = default;

 private:
  friend BinaryEmbedding generate_embedding(std::size_t, std::uint64_t, UserId);
  UserId user_ = 0;
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Key of user `user`'s private stream under codebook seed `seed`.
std::uint64_t embedding_stream_key(std::uint64_t seed, UserId user) noexcept;

/// Each bit is an independent fair coin drawn from the counter-based stream
/// keyed by `stream_key`: word w of the embedding is the w-th 64-bit output.
/// Throws ArgumentError for n_e == 0.
BinaryEmbedding generate_embedding(std::size_t n_e, std::uint64_t stream_key, UserId user = 0);

/// Throws ArgumentError on length mismatch.
std::size_t hamming_distance(const BinaryEmbedding& a, const BinaryEmbedding& b);

class Codebook {
 public:
  Codebook(std::size_t n_e, std::uint64_t seed);

  std::size_t n_e() const noexcept { return n_e_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t size() const noexcept { return embeddings_.size(); }
  bool contains(UserId user) const noexcept { return embeddings_.contains(user); }
  /// Throws ArgumentError for unknown users.
  const BinaryEmbedding& at(UserId user) const;
  /// Throws ArgumentError on duplicate id or wrong length.
  void insert(BinaryEmbedding embedding);
  const std::map<UserId, BinaryEmbedding>& embeddings() const noexcept { return embeddings_; }

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  std::size_t n_e_;
  std::uint64_t seed_;
  std::map<UserId, BinaryEmbedding> embeddings_;
};

/// Every user draws its own embedding from embedding_stream_key(seed, user).
Codebook generate_codebook(const std::vector<UserId>& users, std::size_t n_e, std::uint64_t seed);

/// Minimum over unordered pairs. Throws ArgumentError with fewer than 2 users.
std::size_t min_pairwise_distance(const Codebook& book, std::size_t threads = 1);
std::size_t min_pairwise_distance(const std::vector<BinaryEmbedding>& embeddings, std::size_t threads = 1);

/// Exact C(n, k) (0 when k > n).
BigInt binomial(std::size_t n, std::size_t k);

/// V_tau = sum_{d=0}^{tau-1} C(n_e, d): vectors at distance < tau from a fixed one.
/// Requires 0 <= tau <= n_e + 1.
BigInt hamming_ball_volume(std::size_t n_e, std::size_t tau);

struct DistanceBound {
  std::size_t n = 0;
  std::size_t n_e = 0;
  std::size_t tau = 0;
  HighPrecision value;      // lower bound on P(d_min >= tau)
  double probability = 0.0;  // value rounded to double
};

/// Lower bound prod_{k=0}^{n-1} (1 - k V_tau / 2^n_e). Each factor is formed
/// from exact integers and the product is carried in 100-digit floating point;
/// the product is clamped to 0 once a factor is <= 0.
/// Requires n >= 1 and 1 <= tau <= n_e.
DistanceBound min_distance_bound(std::size_t n, std::size_t n_e, std::size_t tau);

/// The same product as an exact rational. Size grows with n * n_e; intended
/// for small instances and cross-checks.
Rational min_distance_bound_exact(std::size_t n, std::size_t n_e, std::size_t tau);

/// Smallest n_e >= tau whose bound reaches q. Requires n >= 2, tau >= 1, 0 < q < 1.
std::size_t choose_embedding_length(std::size_t n, std::size_t tau, double q);

/// Fraction of `trials` fresh random codebooks of n users whose d_min >= tau.
/// Trial t uses codebook seed derive_seed(seed, {t}); independent of `threads`.
double empirical_min_distance_probability(std::size_t n, std::size_t n_e, std::size_t tau, std::size_t trials,
                                          std::uint64_t seed, std::size_t threads = 1);

/// Codebook file: {"format": "fedua-codebook", "version": 1, "n_e": .., "seed": ..,
///   "embeddings": [{"user_id": .., "bits": "0101..."}, ...]} in ascending user id.
std::string codebook_to_string(const Codebook& book);
Codebook codebook_from_string(const std::string& text);
void save_codebook(const std::filesystem::path& path, const Codebook& book);
Codebook load_codebook(const std::filesystem::path& path);

}  // namespace fedua::codebook
