#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "floodrank/pair_labels.hpp"

using namespace floodrank;

namespace {

VoteTally tally(std::initializer_list<VoteChoice> votes) {
  VoteTally t;
  for (auto v : votes) t.add(v);
  return t;
}

// Majority oracle written from the rule: strict majority of a_higher or b_higher.
std::optional<std::pair<int, double>> oracle(const VoteTally& t, MajorityFilter f) {
  const int n = t.total();
  if (n == 0 || n < f.min_votes) return std::nullopt;
  for (int c : {0, 1}) {
    if (2 * t.counts[c] > n) {
      const double frac = double(t.counts[c]) / n;
      if (frac < f.min_agreement) return std::nullopt;
      return std::pair(c == 0 ? 1 : -1, frac);
    }
  }
  return std::nullopt;
}

}  // namespace

TEST(PairLabels, RoundTrip) {
  std::vector<PairLabel> labels{{"a", "b", RankTarget(1), std::nullopt},
                                {"c", "a", RankTarget(-1), 2.0 / 3.0}};
  std::stringstream ss;
  write_pair_labels(ss, labels);
  EXPECT_EQ(read_pair_labels(ss), labels);
}

TEST(PairLabels, RejectsBadLines) {
  std::istringstream zero(R"({"id_a":"a","id_b":"b","sign":0})");
  EXPECT_THROW(read_pair_labels(zero), ParseError);
  std::istringstream self(R"({"id_a":"a","id_b":"a","sign":1})");
  EXPECT_THROW(read_pair_labels(self), ParseError);
  std::istringstream conf(R"({"id_a":"a","id_b":"b","sign":1,"confidence":0.4})");
  EXPECT_THROW(read_pair_labels(conf), ParseError);
}

TEST(PairLabels, VoteChoices) {
  for (auto c : {VoteChoice::a_higher, VoteChoice::b_higher, VoteChoice::equal, VoteChoice::unsure})
    EXPECT_EQ(parse_vote_choice(to_string(c)), c);
  EXPECT_FALSE(parse_vote_choice("higher"));
}

TEST(PairLabels, MajorityExamples) {
  using V = VoteChoice;
  auto l = majority_label("x", "y", tally({V::a_higher, V::a_higher, V::b_higher}), {3, 0.6});
  ASSERT_TRUE(l);
  EXPECT_EQ(l->sign.value(), 1);
  EXPECT_DOUBLE_EQ(*l->confidence, 2.0 / 3.0);
  EXPECT_FALSE(majority_label("x", "y", tally({V::equal, V::equal}), {1, 0.5}));
  EXPECT_FALSE(majority_label("x", "y", tally({V::a_higher}), {2, 0.5}));
  EXPECT_FALSE(majority_label("x", "y", tally({V::unsure, V::unsure, V::a_higher}), {1, 0.3}));
  auto b = majority_label("x", "y", tally({V::b_higher, V::b_higher, V::b_higher}), {});
  ASSERT_TRUE(b);
  EXPECT_EQ(b->sign.value(), -1);
  EXPECT_EQ(*b->confidence, 1.0);
  // Default agreement 0.66 accepts 2 of 3.
  EXPECT_TRUE(majority_label("x", "y", tally({V::b_higher, V::b_higher, V::a_higher}), {}));
  // A 2-2 split has no majority.
  EXPECT_FALSE(majority_label("x", "y", tally({V::a_higher, V::a_higher, V::b_higher, V::b_higher}), {1, 0}));
}

TEST(PairLabels, MajorityMatchesOracle) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 5000; ++t) {
    VoteTally v;
    for (int i = int(rng() % 9); i > 0; --i) v.add(VoteChoice(rng() % 4));
    const MajorityFilter f{int(rng() % 5), double(rng() % 100) / 100.0};
    const auto got = majority_label("p", "q", v, f);
    const auto want = oracle(v, f);
    ASSERT_EQ(bool(got), bool(want));
    if (got) {
      EXPECT_EQ(got->sign.value(), want->first);
      EXPECT_DOUBLE_EQ(*got->confidence, want->second);
    }
  }
}
