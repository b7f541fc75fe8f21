#pragma once

// Parameter-free pair generation over one mini-batch: every distinct unordered
// pair of batch slots, with ±1 ordering targets derived from weak labels.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "floodrank/errors.hpp"

namespace floodrank {

// +1: first element of the pair shows higher water; -1: second one does.
class RankTarget {
 public:
  explicit RankTarget(int sign) : sign_(sign) {
    if (sign != 1 && sign != -1)
      throw DomainError("rank target must be +1 or -1, got " + std::to_string(sign));
  }
  int value() const { return sign_; }
  RankTarget flipped() const { return RankTarget(-sign_); }
  friend bool operator==(const RankTarget&, const RankTarget&) = default;

 private:
  int sign_;
};

struct RankPair {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  RankTarget sign{1};

  friend bool operator==(const RankPair&, const RankPair&) = default;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

// All n(n-1)/2 unordered pairs (i < j), lexicographic order.
inline std::vector<IndexPair> enumerate_pairs(std::size_t batch_size) {
  if (batch_size < 2)
    throw DomainError("pair enumeration needs a batch of at least 2, got " +
                      std::to_string(batch_size));
  std::vector<IndexPair> pairs;
  pairs.reserve(batch_size * (batch_size - 1) / 2);
  for (std::size_t i = 0; i < batch_size; ++i)
    for (std::size_t j = i + 1; j < batch_size; ++j) pairs.emplace_back(i, j);
  return pairs;
}

struct DerivedPairs {
  std::vector<RankPair> pairs;
  std::size_t dropped_equal = 0;
};

// Signs from per-slot weak levels; equal-level pairs carry no ordering and are dropped.
template <typename Level>
DerivedPairs derive_rank_targets(std::span<const Level> levels, std::span<const IndexPair> pairs) {
  DerivedPairs out;
  out.pairs.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    if (a >= levels.size() || b >= levels.size())
      throw DomainError("pair index outside the batch");
    if (levels[a] > levels[b]) {
      out.pairs.push_back({a, b, RankTarget(1)});
    } else if (levels[a] < levels[b]) {
      out.pairs.push_back({a, b, RankTarget(-1)});
    } else {
      ++out.dropped_equal;
    }
  }
  return out;
}

namespace detail {

// Boolean adjacency "u ranks above v" closed under transitivity (Floyd-Warshall).
inline std::vector<std::vector<char>> ordering_closure(std::span<const RankPair> pairs,
                                                       std::size_t n) {
  std::vector<std::vector<char>> above(n, std::vector<char>(n, 0));
  for (const auto& p : pairs) {
    const auto hi = p.sign.value() > 0 ? p.index_a : p.index_b;
    const auto lo = p.sign.value() > 0 ? p.index_b : p.index_a;
    above[hi][lo] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (above[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (above[k][j]) above[i][j] = 1;
  return above;
}

}  // namespace detail

// Drops every pair implied by the others through transitivity. The result has the
// same transitive closure as the input; a strict chain of k values keeps k-1 pairs.
inline std::vector<RankPair> transitive_reduction(std::span<const RankPair> pairs) {
  std::size_t n = 0;
  for (const auto& p : pairs) {
    if (p.index_a == p.index_b) throw DomainError("pair with identical indices");
    n = std::max({n, p.index_a + 1, p.index_b + 1});
  }
  const auto above = detail::ordering_closure(pairs, n);
  for (std::size_t i = 0; i < n; ++i)
    if (above[i][i]) throw DomainError("rank pairs contain an ordering cycle");

  std::vector<RankPair> kept;
  for (const auto& p : pairs) {
    const auto hi = p.sign.value() > 0 ? p.index_a : p.index_b;
    const auto lo = p.sign.value() > 0 ? p.index_b : p.index_a;
    bool implied = false;
    for (std::size_t k = 0; k < n && !implied; ++k)
      implied = k != hi && k != lo && above[hi][k] && above[k][lo];
    if (!implied) kept.push_back(p);
  }
  return kept;
}

// Cap on the total number of ranking pairs consumed during training.
class PairBudget {
 public:
  explicit PairBudget(std::uint64_t max_pairs) : max_pairs_(max_pairs) {
    if (max_pairs == 0) throw DomainError("pair budget must be positive");
  }
  std::uint64_t max_pairs() const { return max_pairs_; }

 private:
  std::uint64_t max_pairs_;
};

// Single-owner counter living in the training loop. Without a budget it only counts.
class PairBudgetTracker {
 public:
  PairBudgetTracker() = default;
  explicit PairBudgetTracker(std::optional<PairBudget> budget) : budget_(budget) {}

  bool exhausted() const { return budget_ && consumed_ >= budget_->max_pairs(); }

  // Pairs still allowed this step, given how many a batch would produce.
  std::uint64_t grant(std::uint64_t requested) const {
    if (!budget_) return requested;
    const auto left = budget_->max_pairs() - consumed_;
    return std::min(requested, left);
  }

  void consume(std::uint64_t pairs) {
    if (pairs > grant(pairs)) throw DomainError("pair budget overdrawn");
    consumed_ += pairs;
  }

  std::uint64_t consumed() const { return consumed_; }
  const std::optional<PairBudget>& budget() const { return budget_; }

 private:
  std::optional<PairBudget> budget_;
  std::uint64_t consumed_ = 0;
};

}  // namespace floodrank
