#include <algorithm>
#include <bit>
#include <cmath>
#include <vector>

#include "doctest.h"

#include "fedua/codebook.hpp"
#include "fedua/error.hpp"

using namespace fedua;
using namespace fedua::codebook;

namespace {

// Pascal's triangle row n_e, independent of the library's binomial.
std::vector<BigInt> pascal_row(std::size_t n) {
  std::vector<BigInt> row{1};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<BigInt> next(row.size() + 1, 0);
    for (std::size_t k = 0; k < row.size(); ++k) {
      next[k] += row[k];
      next[k + 1] += row[k];
    }
    row = std::move(next);
  }
  return row;
}

Rational bound_oracle(std::size_t n, std::size_t n_e, std::size_t tau) {
  const auto row = pascal_row(n_e);
  BigInt v = 0;
  for (std::size_t d = 0; d < tau; ++d) v += row[d];
  const BigInt total = BigInt(1) << n_e;
  Rational p = 1;
  for (std::size_t k = 0; k < n; ++k) {
    Rational f = Rational(total - k * v, total);
    if (f <= 0) return 0;
    p *= f;
  }
  return p;
}

// Exact P(d_min >= tau) for n uniform words of n_e bits: count ordered
// n-tuples with all pairwise distances >= tau.
Rational exhaustive_probability(std::size_t n, std::size_t n_e, std::size_t tau) {
  const std::uint32_t words = 1u << n_e;
  std::vector<std::uint32_t> chosen;
  std::uint64_t good = 0;
  auto rec = [&](auto&& self) -> void {
    if (chosen.size() == n) {
      ++good;
      return;
    }
    for (std::uint32_t w = 0; w < words; ++w) {
      bool ok = true;
      for (auto c : chosen) ok = ok && static_cast<std::size_t>(std::popcount(c ^ w)) >= tau;
      if (!ok) continue;
      chosen.push_back(w);
      self(self);
      chosen.pop_back();
    }
  };
  rec(rec);
  BigInt total = 1;
  for (std::size_t i = 0; i < n; ++i) total <<= n_e;
  return Rational(BigInt(good), total);
}

BinaryEmbedding bits(const std::string& s) { return BinaryEmbedding::from_string(0, s); }

}  // namespace

TEST_CASE("generate_embedding") {
  CHECK(generate_embedding(8, 123) == generate_embedding(8, 123));
  CHECK_THROWS_AS(generate_embedding(0, 1), ArgumentError);
  const auto big = generate_embedding(10000, embedding_stream_key(5, 1));
  const double frac = static_cast<double>(big.ones()) / 10000.0;
  CHECK(frac >= 0.47);
  CHECK(frac <= 0.53);
  const auto e = generate_embedding(70, 9);
  for (std::size_t k = 0; k < e.size(); ++k) CHECK((e.bit(k) == 0 || e.bit(k) == 1));
  CHECK((e.words().back() >> 6) == 0);  // unused high bits stay clear
}

TEST_CASE("binary embedding strings") {
  const auto e = bits("0110");
  CHECK(e.to_string() == "0110");
  CHECK(e.as_reals() == std::vector<double>{0, 1, 1, 0});
  CHECK(e.complement().to_string() == "1001");
  CHECK_THROWS_AS(bits("01a"), ParseError);
  CHECK_THROWS_AS(bits(""), ArgumentError);
}

TEST_CASE("hamming_distance") {
  CHECK(hamming_distance(bits("0011"), bits("0011")) == 0);
  CHECK(hamming_distance(bits("0011"), bits("1010")) == 2);
  const auto a = generate_embedding(16, 4);
  CHECK(hamming_distance(a, a.complement()) == 16);
  CHECK_THROWS_AS(hamming_distance(bits("01"), bits("011")), ArgumentError);
}

TEST_CASE("hamming metric axioms, exhaustive for n_e = 6") {
  std::vector<BinaryEmbedding> all;
  for (int w = 0; w < 64; ++w) {
    std::string s;
    for (int k = 0; k < 6; ++k) s += ((w >> k) & 1) ? '1' : '0';
    all.push_back(bits(s));
  }
  for (const auto& a : all) {
    CHECK(hamming_distance(a, a) == 0);
    for (const auto& b : all) {
      const auto ab = hamming_distance(a, b);
      if (ab != hamming_distance(b, a)) FAIL("asymmetric");
      for (std::size_t c = 0; c < all.size(); c += 7) {
        if (ab > hamming_distance(a, all[c]) + hamming_distance(all[c], b)) FAIL("triangle inequality");
      }
    }
  }
}

TEST_CASE("min_pairwise_distance") {
  CHECK(min_pairwise_distance(std::vector{bits("0101"), bits("0101")}) == 0);
  CHECK(min_pairwise_distance(std::vector{bits("00"), bits("01"), bits("11")}) == 1);
  CHECK_THROWS_AS(min_pairwise_distance(std::vector{bits("00")}), ArgumentError);

  std::vector<UserId> users(60);
  for (UserId u = 0; u < users.size(); ++u) users[u] = u;
  const auto book = generate_codebook(users, 40, 3);
  std::size_t brute = 40;
  for (auto a = book.embeddings().begin(); a != book.embeddings().end(); ++a) {
    for (auto b = std::next(a); b != book.embeddings().end(); ++b) {
      brute = std::min(brute, hamming_distance(a->second, b->second));
    }
  }
  CHECK(min_pairwise_distance(book) == brute);
  CHECK(min_pairwise_distance(book, 4) == brute);
}

TEST_CASE("codebook container") {
  Codebook book(4, 1);
  book.insert(BinaryEmbedding::from_string(3, "0101"));
  CHECK_THROWS_AS(book.insert(BinaryEmbedding::from_string(3, "1111")), ArgumentError);
  CHECK_THROWS_AS(book.insert(BinaryEmbedding::from_string(4, "11")), ArgumentError);
  CHECK_THROWS_AS(book.at(9), ArgumentError);

  const auto a = generate_codebook({0, 1, 2}, 32, 8);
  const auto b = generate_codebook({2, 0, 5}, 32, 8);
  // per-user streams: a user's embedding does not depend on who else is present
  CHECK(a.at(0) == b.at(0));
  CHECK(a.at(2) == b.at(2));
  CHECK(codebook_from_string(codebook_to_string(a)) == a);
  CHECK_THROWS_AS(codebook_from_string("{}"), ParseError);
}

TEST_CASE("hamming_ball_volume") {
  CHECK(hamming_ball_volume(2, 1) == 1);
  CHECK(hamming_ball_volume(2, 2) == 3);
  CHECK(hamming_ball_volume(7, 0) == 0);
  for (std::size_t n_e : {1u, 5u, 64u, 300u}) {
    CHECK(hamming_ball_volume(n_e, n_e + 1) == (BigInt(1) << n_e));
    const auto row = pascal_row(n_e);
    for (std::size_t tau = 0; tau <= n_e; ++tau) {
      CHECK(hamming_ball_volume(n_e, tau + 1) - hamming_ball_volume(n_e, tau) == row[tau]);
    }
  }
  CHECK_THROWS_AS(hamming_ball_volume(4, 6), ArgumentError);
}

TEST_CASE("min_distance_bound small cases") {
  CHECK(min_distance_bound(1, 17, 5).probability == 1.0);
  CHECK(min_distance_bound(2, 2, 1).probability == 0.75);
  CHECK(min_distance_bound(2, 2, 2).probability == 0.25);
  CHECK(exhaustive_probability(2, 2, 1) == Rational(3, 4));
  CHECK(exhaustive_probability(2, 2, 2) == Rational(1, 4));
  CHECK(min_distance_bound_exact(2, 2, 1) == Rational(3, 4));
  CHECK_THROWS_AS(min_distance_bound(0, 4, 1), ArgumentError);
  CHECK_THROWS_AS(min_distance_bound(2, 4, 0), ArgumentError);
  CHECK_THROWS_AS(min_distance_bound(2, 4, 5), ArgumentError);
  // factors reach zero: clamp rather than go negative
  CHECK(min_distance_bound(10, 3, 3).probability == 0.0);
}

TEST_CASE("min_distance_bound equals the rational oracle") {
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::size_t n_e = 1; n_e <= 14; ++n_e) {
      for (std::size_t tau = 1; tau <= n_e; ++tau) {
        const Rational exact = bound_oracle(n, n_e, tau);
        CHECK(min_distance_bound_exact(n, n_e, tau) == exact);
        CHECK(min_distance_bound(n, n_e, tau).probability == doctest::Approx(exact.convert_to<double>()).epsilon(1e-15));
      }
    }
  }
  // large code length: doubles alone would overflow 2^n_e
  const double big = min_distance_bound(120, 256, 70).probability;
  CHECK(big == doctest::Approx(bound_oracle(120, 256, 70).convert_to<double>()).epsilon(1e-12));
}

TEST_CASE("min_distance_bound monotonicity") {
  for (std::size_t n = 1; n <= 20; ++n) {
    for (std::size_t n_e = 4; n_e <= 32; ++n_e) {
      for (std::size_t tau = 1; tau <= std::min<std::size_t>(8, n_e); ++tau) {
        const auto p = min_distance_bound(n, n_e, tau).value;
        CHECK(p >= 0);
        CHECK(p <= 1);
        if (n < 20) CHECK(min_distance_bound(n + 1, n_e, tau).value <= p);
        if (tau < std::min<std::size_t>(8, n_e)) CHECK(min_distance_bound(n, n_e, tau + 1).value <= p);
        if (n_e < 32) CHECK(min_distance_bound(n, n_e + 1, tau).value >= p);
      }
    }
  }
}

TEST_CASE("distance bound holds against exhaustive enumeration") {
  for (std::size_t n = 1; n <= 3; ++n) {
    for (std::size_t n_e = 1; n_e <= (n == 3 ? 7u : 10u); ++n_e) {
      for (std::size_t tau = 1; tau <= n_e; ++tau) {
        CHECK(exhaustive_probability(n, n_e, tau) >= bound_oracle(n, n_e, tau));
      }
    }
  }
  for (std::size_t n_e = 1; n_e <= 4; ++n_e) {
    for (std::size_t tau = 1; tau <= n_e; ++tau) {
      CHECK(exhaustive_probability(4, n_e, tau) >= bound_oracle(4, n_e, tau));
    }
  }
}

TEST_CASE("choose_embedding_length") {
  auto oracle = [](std::size_t n_e) {
    const double v = 1.0 + n_e;  // V_2 = C(n_e,0) + C(n_e,1)
    double p = 1.0;
    for (int k = 0; k < 4; ++k) p *= 1.0 - k * v / std::ldexp(1.0, static_cast<int>(n_e));
    return p;
  };
  CHECK(oracle(9) == doctest::Approx(0.887).epsilon(1e-3));
  CHECK(oracle(10) == doctest::Approx(0.937).epsilon(1e-3));
  CHECK(choose_embedding_length(4, 2, 0.9) == 10);
  CHECK(min_distance_bound(4, 9, 2).probability == doctest::Approx(oracle(9)).epsilon(1e-14));
  CHECK(min_distance_bound(4, 10, 2).probability == doctest::Approx(oracle(10)).epsilon(1e-14));
  CHECK(choose_embedding_length(2, 1, 0.74) == 2);
  CHECK(choose_embedding_length(2, 3, 1e-9) == 3);
  CHECK_THROWS_AS(choose_embedding_length(1, 2, 0.9), ArgumentError);
  CHECK_THROWS_AS(choose_embedding_length(4, 2, 1.0), ArgumentError);
  CHECK_THROWS_AS(choose_embedding_length(4, 0, 0.5), ArgumentError);

  for (std::size_t n : {2u, 7u, 40u}) {
    for (std::size_t tau : {1u, 3u, 9u}) {
      for (double q : {0.1, 0.5, 0.95}) {
        const auto n_e = choose_embedding_length(n, tau, q);
        CHECK(n_e >= tau);
        CHECK(min_distance_bound(n, n_e, tau).probability >= q);
        if (n_e > tau) CHECK(min_distance_bound(n, n_e - 1, tau).probability < q);
      }
    }
  }
}

TEST_CASE("empirical_min_distance_probability") {
  CHECK(empirical_min_distance_probability(1, 8, 3, 10, 0) == 1.0);
  CHECK_THROWS_AS(empirical_min_distance_probability(3, 8, 3, 0, 0), ArgumentError);
  const double p = empirical_min_distance_probability(2, 2, 1, 100000, 77);
  CHECK(std::abs(p - 0.75) <= 0.01);
  CHECK(empirical_min_distance_probability(3, 10, 3, 2000, 5, 1) ==
        empirical_min_distance_probability(3, 10, 3, 2000, 5, 3));
}
