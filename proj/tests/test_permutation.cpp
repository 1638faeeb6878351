#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "dcdr/permutation.hpp"

using namespace dcdr;

TEST(Rank, HandExamples) {
  EXPECT_EQ(rank(Perm{0, 1, 2}), 0u);
  EXPECT_EQ(rank(Perm{2, 1, 0}), 5u);
  EXPECT_EQ(rank(Perm{0, 2, 1}), 1u);
  EXPECT_EQ(unrank(0, 3), (Perm{0, 1, 2}));
  EXPECT_EQ(unrank(5, 3), (Perm{2, 1, 0}));
  EXPECT_EQ(unrank(2, 3), (Perm{1, 0, 2}));
}

// std::next_permutation walks lexicographic order; the k-th visit must rank to k.
TEST(Rank, MatchesLexicographicEnumeration) {
  for (std::size_t n = 1; n <= 6; ++n) {
    Perm p = identity_perm(n);
    std::uint64_t k = 0;
    do {
      ASSERT_EQ(rank(p), k);
      ASSERT_EQ(unrank(k, n), p);
      ++k;
    } while (std::next_permutation(p.begin(), p.end()));
    EXPECT_EQ(k, factorial(n));
  }
}

TEST(Rank, RoundTripsAtCap) {
  const std::size_t n = kMaxOutputLength;
  for (std::uint64_t i = 0; i < factorial(n); i += 97) ASSERT_EQ(rank(unrank(i, n)), i);
  EXPECT_EQ(rank(unrank(factorial(n) - 1, n)), factorial(n) - 1);
}

TEST(Rank, RejectsInvalid) {
  EXPECT_THROW(rank(Perm{0, 0, 1}), InvalidPermutation);
  EXPECT_THROW(rank(Perm{0, 3, 1}), InvalidPermutation);
  EXPECT_THROW(unrank(6, 3), RangeError);
}

TEST(SeqDistance, Examples) {
  std::string abc = "ABC", acb = "ACB";
  std::vector<char> a(abc.begin(), abc.end()), b(acb.begin(), acb.end());
  EXPECT_EQ(seq_distance(a, b), 2u);
  EXPECT_EQ(seq_distance(a, a), 0u);
  EXPECT_EQ(seq_distance(Perm{0, 1, 2}, Perm{1, 2, 0}), 3u);
  EXPECT_THROW(seq_distance(Perm{0, 1}, Perm{0, 1, 2}), InvalidArgument);
}

TEST(SeqDistance, SymmetricAndNeverOneOnPermutations) {
  const std::size_t n = 5;
  for (std::uint64_t i = 0; i < factorial(n); ++i) {
    const Perm a = unrank(i, n);
    for (std::uint64_t j = 0; j < factorial(n); ++j) {
      const Perm b = unrank(j, n);
      const auto d = seq_distance(a, b);
      ASSERT_EQ(d, seq_distance(b, a));
      ASSERT_NE(d, 1u);
    }
  }
}

TEST(SwapNeighbors, Examples) {
  auto nb = swap_neighbors(Perm{0, 1, 2});
  ASSERT_EQ(nb.size(), 3u);
  EXPECT_EQ(nb[0], (Perm{1, 0, 2}));
  EXPECT_EQ(nb[1], (Perm{2, 1, 0}));
  EXPECT_EQ(nb[2], (Perm{0, 2, 1}));
  EXPECT_EQ(swap_neighbors(Perm{4, 2, 0, 1, 3}).size(), 10u);
  auto two = swap_neighbors(Perm{0, 1});
  ASSERT_EQ(two.size(), 1u);
  EXPECT_EQ(two[0], (Perm{1, 0}));
}

TEST(SwapNeighbors, DistinctAtDistanceTwo) {
  for (std::size_t n = 2; n <= 6; ++n) {
    for (std::uint64_t i = 0; i < factorial(n); i += 7) {
      const Perm p = unrank(i, n);
      const auto nb = swap_neighbors(p);
      ASSERT_EQ(nb.size(), n * (n - 1) / 2);
      std::set<Perm> uniq(nb.begin(), nb.end());
      ASSERT_EQ(uniq.size(), nb.size());
      for (const auto& q : nb) ASSERT_EQ(seq_distance(p, q), 2u);
    }
  }
}

TEST(SequenceSpec, Validates) {
  EXPECT_NO_THROW(SequenceSpec(6, 6));
  EXPECT_THROW(SequenceSpec(3, 4), InvalidArgument);
  EXPECT_THROW(SequenceSpec(3, 0), InvalidArgument);
  EXPECT_THROW(SequenceSpec(9, 9), CapacityError);
}

TEST(ItemSequence, MapsPositionsToItems) {
  ItemSequence s({100, 200, 300}, {2, 0, 1});
  EXPECT_EQ(s.items(), (std::vector<ItemId>{300, 100, 200}));
  EXPECT_EQ(s.rank_index().value(), rank(Perm{2, 0, 1}));
  ItemSequence dup({100, 200, 300}, {2, 2, 1});
  EXPECT_TRUE(dup.has_duplicates());
  EXPECT_FALSE(dup.rank_index().has_value());
  EXPECT_THROW(ItemSequence({1, 2}, {0, 5}), InvalidArgument);
}
