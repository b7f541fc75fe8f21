#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "floodrank/pairing.hpp"

using namespace floodrank;

namespace {

// Ordered (higher, lower) relation closed under transitivity, by repeated
// relaxation rather than Floyd-Warshall.
std::set<std::pair<std::size_t, std::size_t>> closure_oracle(const std::vector<RankPair>& pairs) {
  std::set<std::pair<std::size_t, std::size_t>> rel;
  for (const auto& p : pairs)
    rel.insert(p.sign.value() > 0 ? std::pair(p.index_a, p.index_b) : std::pair(p.index_b, p.index_a));
  bool grew = true;
  while (grew) {
    grew = false;
    auto snapshot = rel;
    for (const auto& [a, b] : snapshot)
      for (const auto& [c, d] : snapshot)
        if (b == c && rel.insert({a, d}).second) grew = true;
  }
  return rel;
}

}  // namespace

TEST(Pairing, Counts) {
  EXPECT_EQ(enumerate_pairs(5).size(), 10u);
  EXPECT_EQ(enumerate_pairs(2).size(), 1u);
  EXPECT_EQ(enumerate_pairs(7).size(), 21u);
  EXPECT_THROW(enumerate_pairs(1), DomainError);
  EXPECT_THROW(enumerate_pairs(0), DomainError);
}

TEST(Pairing, EnumerationMatchesBruteForce) {
  for (std::size_t n = 2; n <= 64; ++n) {
    std::set<std::pair<std::size_t, std::size_t>> brute;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) brute.insert(std::minmax(i, j));
    const auto pairs = enumerate_pairs(n);
    const std::set<std::pair<std::size_t, std::size_t>> got(pairs.begin(), pairs.end());
    EXPECT_EQ(got.size(), pairs.size());
    EXPECT_EQ(got, brute);
    EXPECT_TRUE(std::is_sorted(pairs.begin(), pairs.end()));
  }
}

TEST(Pairing, DeriveExamples) {
  {
    const std::vector<int> l{3, 1};
    const auto r = derive_rank_targets<int>(l, enumerate_pairs(2));
    ASSERT_EQ(r.pairs.size(), 1u);
    EXPECT_EQ(r.pairs[0], (RankPair{0, 1, RankTarget(1)}));
  }
  {
    const std::vector<int> l{2, 2};
    const auto r = derive_rank_targets<int>(l, enumerate_pairs(2));
    EXPECT_TRUE(r.pairs.empty());
    EXPECT_EQ(r.dropped_equal, 1u);
  }
  {
    const std::vector<int> l{1, 2, 2};
    const auto r = derive_rank_targets<int>(l, enumerate_pairs(3));
    EXPECT_EQ(r.pairs, (std::vector<RankPair>{{0, 1, RankTarget(-1)}, {0, 2, RankTarget(-1)}}));
  }
}

TEST(Pairing, ReversedBatchFlipsSigns) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 10;
    std::vector<int> l(n);
    for (auto& v : l) v = int(rng() % 11);
    std::vector<int> rev(l.rbegin(), l.rend());
    const auto a = derive_rank_targets<int>(l, enumerate_pairs(n));
    const auto b = derive_rank_targets<int>(rev, enumerate_pairs(n));
    ASSERT_EQ(a.pairs.size(), b.pairs.size());
    for (const auto& p : a.pairs) {
      const std::size_t ra = n - 1 - p.index_a, rb = n - 1 - p.index_b;
      auto it = std::find_if(b.pairs.begin(), b.pairs.end(), [&](const RankPair& q) {
        return q.index_a == std::min(ra, rb) && q.index_b == std::max(ra, rb);
      });
      ASSERT_NE(it, b.pairs.end());
      // In the reversed batch the pair appears with its members swapped, so the
      // sign relative to (min, max) is flipped.
      EXPECT_EQ(it->sign, p.sign.flipped());
    }
  }
}

TEST(Pairing, NoPairWithBothSigns) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng() % 12;
    std::vector<int> l(n);
    for (auto& v : l) v = int(rng() % 11);
    const auto r = derive_rank_targets<int>(l, enumerate_pairs(n));
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& p : r.pairs) EXPECT_TRUE(seen.insert(std::minmax(p.index_a, p.index_b)).second);
  }
}

TEST(Pairing, TransitiveReductionExamples) {
  const std::vector<RankPair> chain{{0, 1, RankTarget(1)}, {1, 2, RankTarget(1)}, {0, 2, RankTarget(1)}};
  EXPECT_EQ(transitive_reduction(chain),
            (std::vector<RankPair>{{0, 1, RankTarget(1)}, {1, 2, RankTarget(1)}}));
  const std::vector<RankPair> single{{0, 1, RankTarget(-1)}};
  EXPECT_EQ(transitive_reduction(single), single);

  const std::vector<int> l{5, 3, 3, 1};
  const auto derived = derive_rank_targets<int>(l, enumerate_pairs(4));
  const auto reduced = transitive_reduction(derived.pairs);
  EXPECT_EQ(closure_oracle(reduced), closure_oracle(derived.pairs));
  EXPECT_LT(reduced.size(), derived.pairs.size());

  const std::vector<RankPair> cycle{{0, 1, RankTarget(1)}, {1, 2, RankTarget(1)}, {0, 2, RankTarget(-1)}};
  EXPECT_THROW(transitive_reduction(cycle), DomainError);
}

TEST(Pairing, TransitiveReductionPreservesClosure) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng() % 7;
    std::vector<int> l(n);
    for (auto& v : l) v = int(rng() % 6);
    const auto d = derive_rank_targets<int>(l, enumerate_pairs(n));
    const auto r = transitive_reduction(d.pairs);
    EXPECT_EQ(closure_oracle(r), closure_oracle(d.pairs));
    // Removing any kept edge loses information.
    for (std::size_t k = 0; k < r.size(); ++k) {
      auto fewer = r;
      fewer.erase(fewer.begin() + k);
      EXPECT_NE(closure_oracle(fewer), closure_oracle(d.pairs));
    }
  }
}

TEST(Pairing, StrictChainReducesToKMinusOne) {
  for (std::size_t k = 2; k <= 8; ++k) {
    std::vector<int> l(k);
    std::iota(l.begin(), l.end(), 0);
    std::shuffle(l.begin(), l.end(), std::mt19937_64(k));
    const auto d = derive_rank_targets<int>(l, enumerate_pairs(k));
    EXPECT_EQ(transitive_reduction(d.pairs).size(), k - 1);
  }
}

TEST(Pairing, BudgetTracker) {
  EXPECT_THROW(PairBudget(0), DomainError);
  PairBudgetTracker t(PairBudget(10));
  EXPECT_FALSE(t.exhausted());
  EXPECT_EQ(t.grant(10), 10u);
  t.consume(10);
  EXPECT_TRUE(t.exhausted());
  EXPECT_EQ(t.grant(10), 0u);
  EXPECT_THROW(t.consume(1), DomainError);

  PairBudgetTracker big(PairBudget(1'000'000));
  std::uint64_t steps = 0;
  while (!big.exhausted()) {
    big.consume(big.grant(10));
    ++steps;
  }
  EXPECT_EQ(steps, 100'000u);
  EXPECT_EQ(big.consumed(), 1'000'000u);

  PairBudgetTracker partial(PairBudget(25));
  partial.consume(partial.grant(10));
  partial.consume(partial.grant(10));
  EXPECT_EQ(partial.grant(10), 5u);

  PairBudgetTracker unlimited;
  EXPECT_EQ(unlimited.grant(10), 10u);
  unlimited.consume(1'000'000);
  EXPECT_FALSE(unlimited.exhausted());
}
