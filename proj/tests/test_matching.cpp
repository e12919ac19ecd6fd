#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mgd/matching.hpp"
#include "oracles.hpp"

using namespace mgd;

namespace {

CostMatrix cost_of(std::vector<std::vector<double>> rows) {
  return {Matrix::from_rows(rows), 1};
}

// Column sums of the implied binary M are 1 for owned teachers; row sums alpha.
void expect_pi_b(const Matching& m, std::size_t cs, std::size_t ct) {
  ASSERT_EQ(m.owner.size(), ct);
  EXPECT_EQ(m.alpha, ct / cs);
  std::vector<std::size_t> row_sum(cs, 0);
  std::size_t shaved = 0;
  for (auto o : m.owner) {
    if (o == kShaved) {
      ++shaved;
      continue;
    }
    ASSERT_LT(o, cs);
    ++row_sum[o];
  }
  for (auto r : row_sum) EXPECT_EQ(r, ct / cs);
  EXPECT_EQ(shaved, ct - (ct / cs) * cs);
}

}  // namespace

TEST(ChannelDistance, HandExamples) {
  EXPECT_DOUBLE_EQ(channel_distance(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{0, 0}}))(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(channel_distance(Matrix::from_rows({{2, 7}}), Matrix::from_rows({{2, 7}}))(0, 0), 0.0);
  const auto d = channel_distance(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3, 5}}));
  EXPECT_DOUBLE_EQ(d(0, 0), 13.0);
  EXPECT_EQ(d.sample_count, 1u);
}

TEST(ChannelDistance, SymmetrySurrogate) {
  std::mt19937_64 rng(1);
  const Matrix s = oracle::random_matrix(3, 10, rng, -1, 1);
  const Matrix t = oracle::random_matrix(5, 10, rng, -1, 1);
  const auto st = channel_distance(s, t);
  const auto ts = channel_distance(t, s);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(st(i, j), ts(j, i));
  }
}

TEST(ChannelDistance, SpatialMismatchThrows) {
  EXPECT_THROW(channel_distance(Matrix(2, 3), Matrix(2, 4)), DimensionError);
}

TEST(AccumulateCost, Sums) {
  const auto a = cost_of({{3}});
  const auto b = cost_of({{4}});
  const auto c = accumulate_cost(a, b);
  EXPECT_DOUBLE_EQ(c(0, 0), 7.0);
  EXPECT_EQ(c.sample_count, 2u);

  std::mt19937_64 rng(2);
  const auto r = oracle::random_cost(2, 4, rng);
  const auto z = accumulate_cost(CostMatrix::zeros(2, 4), r);
  EXPECT_EQ(z.values, r.values);
  const auto twice = accumulate_cost(r, r);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_DOUBLE_EQ(twice.values.values()[k], 2 * r.values.values()[k]);
  }
  EXPECT_THROW(accumulate_cost(CostMatrix::zeros(2, 3), r), DimensionError);
}

TEST(SolveBalanced, ZeroCostBlocks) {
  const auto m = solve_balanced(cost_of({{0, 0, 9, 9}, {9, 9, 0, 0}}));
  EXPECT_EQ(m.owner, (std::vector<std::size_t>{0, 0, 1, 1}));
  EXPECT_EQ(m.alpha, 2u);
  EXPECT_DOUBLE_EQ(matching_cost(cost_of({{0, 0, 9, 9}, {9, 9, 0, 0}}), m), 0.0);
}

TEST(SolveBalanced, ThreeBySix) {
  std::mt19937_64 rng(3);
  const auto m = solve_balanced(oracle::random_cost(3, 6, rng));
  expect_pi_b(m, 3, 6);
  EXPECT_TRUE(m.is_balanced());
}

TEST(SolveBalanced, OptimalAgainstExhaustiveSearch) {
  std::mt19937_64 rng(4);
  for (std::size_t cs = 1; cs <= 3; ++cs) {
    for (std::size_t ct = cs; ct <= 6; ++ct) {
      for (int trial = 0; trial < 10; ++trial) {
        const auto d = oracle::random_cost(cs, ct, rng);
        const auto m = solve_balanced(d);
        expect_pi_b(m, cs, ct);
        EXPECT_NEAR(matching_cost(d, m), oracle::brute_force_balanced_cost(d), 1e-9)
            << "cs=" << cs << " ct=" << ct;
      }
    }
  }
}

TEST(SolveBalanced, NonDivisibleShavesTheRemainder) {
  std::mt19937_64 rng(5);
  const auto m = solve_balanced(oracle::random_cost(3, 8, rng));
  EXPECT_EQ(m.alpha, 2u);
  EXPECT_EQ(m.shaved_count(), 2u);
  EXPECT_TRUE(m.is_balanced());
}

TEST(SolveBalanced, NeverWorseThanContiguousBlocks) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = oracle::random_cost(4, 16, rng);
    EXPECT_LE(matching_cost(d, solve_balanced(d)),
              matching_cost(d, Matching::contiguous_blocks(4, 16)) + 1e-12);
  }
}

TEST(SolveBalanced, RejectsNarrowTeacher) {
  EXPECT_THROW(solve_balanced(CostMatrix::zeros(3, 2)), DimensionError);
  EXPECT_THROW(solve_sparse(CostMatrix::zeros(3, 2)), DimensionError);
}

TEST(SolveSparse, RowMinimum) {
  const auto p = solve_sparse(cost_of({{5, 1, 2}}));
  EXPECT_EQ(p.pairs, std::vector<std::size_t>{1});
}

TEST(SolveSparse, SquareIsPlainAssignment) {
  const auto p = solve_sparse(cost_of({{4, 1}, {2, 3}}));
  EXPECT_EQ(p.pairs, (std::vector<std::size_t>{1, 0}));
}

TEST(SolveSparse, OptimalAgainstExhaustiveSearch) {
  std::mt19937_64 rng(7);
  for (std::size_t cs = 1; cs <= 3; ++cs) {
    for (std::size_t ct = cs; ct <= 6; ++ct) {
      for (int trial = 0; trial < 10; ++trial) {
        const auto d = oracle::random_cost(cs, ct, rng);
        const auto p = solve_sparse(d);
        std::vector<std::size_t> sorted = p.pairs;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
        EXPECT_NEAR(matching_cost(d, p), oracle::brute_force_injective_cost(d), 1e-9);
      }
    }
  }
}

TEST(MatchingCost, Examples) {
  Matching m{{0, 0}, 2, 1};
  EXPECT_DOUBLE_EQ(matching_cost(cost_of({{2, 3}}), m), 5.0);
  EXPECT_DOUBLE_EQ(matching_cost(CostMatrix::zeros(1, 2), m), 0.0);
  Matching shaved{{0, kShaved, 1}, 1, 2};
  EXPECT_DOUBLE_EQ(matching_cost(cost_of({{1, 10, 100}, {1000, 10000, 5}}), shaved), 6.0);
}

TEST(MatchingText, RoundTrip) {
  std::mt19937_64 rng(8);
  const auto m = solve_balanced(oracle::random_cost(3, 8, rng));
  std::stringstream ss(format_matching(m));
  EXPECT_EQ(read_matching(ss), m);
}

TEST(MatchingText, Format) {
  Matching m{{1, kShaved, 0}, 1, 2};
  EXPECT_EQ(format_matching(m), "# C_S=2 C_T=3 alpha=1\n0 -> 1\n1 -> x\n2 -> 0\n");
  std::stringstream bad("# C_S=1 C_T=2 alpha=2\n0 -> 0\n");
  EXPECT_THROW(read_matching(bad), ValueError);
}

TEST(SparseMatching, AsMatchingShavesUnpaired) {
  SparseMatching p{{2, 0}, 4};
  const auto m = p.as_matching();
  EXPECT_EQ(m.owner, (std::vector<std::size_t>{1, kShaved, 0, kShaved}));
  EXPECT_EQ(m.alpha, 1u);
}
