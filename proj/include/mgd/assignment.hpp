#pragma once

// Exact min-cost linear assignment on square cost matrices.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mgd/tensor.hpp"

namespace mgd {

// Finite stand-in for "infinitely far" used to pad rectangular problems.
inline constexpr double kBigCost = 1e10;

// assign[i] is the column matched to row i; always a bijection on {0..n-1}.
struct Assignment {
  std::vector<std::size_t> assign;
  double total_cost = 0.0;
};

namespace detail {

inline void validate_square_cost(const Matrix& cost, const char* who) {
  if (cost.rows() == 0 || cost.rows() != cost.cols()) {
    throw DimensionError(std::string(who) + ": cost matrix must be square and non-empty, got " +
                         std::to_string(cost.rows()) + "x" + std::to_string(cost.cols()));
  }
  for (double v : cost.values()) {
    if (!std::isfinite(v)) throw ValueError(std::string(who) + ": non-finite cost entry");
    if (v < 0.0) throw ValueError(std::string(who) + ": negative cost entry");
  }
}

inline double assignment_cost(const Matrix& cost, const std::vector<std::size_t>& assign) {
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) total += cost(i, assign[i]);
  return total;
}

}  // namespace detail

// Shortest augmenting path Hungarian method with row/column potentials
// (Jonker-Volgenant style Dijkstra phase), O(n^3).
//
// Each row is first shifted by its minimum. The optimum is unchanged and
// constant padding rows of kBigCost become zero rows, so the potentials never
// carry 1e10-sized offsets. Rows are then inserted one at a time; each
// insertion grows a Dijkstra tree over columns using reduced costs
// cost(i,j) - u[i] - v[j] until it reaches a free column, then flips the
// alternating path. Potentials stay dual-feasible so
// the final matching is optimal. Throws DimensionError for non-square input
// and ValueError for NaN/inf/negative entries.
inline Assignment hungarian(const Matrix& cost) {
  detail::validate_square_cost(cost, "hungarian");
  const std::size_t n = cost.rows();
  Matrix reduced_cost = cost;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = reduced_cost.row(i);
    const double lo = *std::min_element(r.begin(), r.end());
    for (double& x : r) x -= lo;
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = 0;

  // 1-based arrays; index 0 is the virtual root column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> col_owner(n + 1, kNone), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    col_owner[0] = row;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = col_owner[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double reduced = reduced_cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (reduced < minv[j]) {
          minv[j] = reduced;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[col_owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_owner[j0] != kNone);
    do {
      const std::size_t j1 = way[j0];
      col_owner[j0] = col_owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment result;
  result.assign.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) result.assign[col_owner[j] - 1] = j - 1;
  result.total_cost = detail::assignment_cost(cost, result.assign);
  return result;
}

inline constexpr std::size_t kBruteForceMaxSide = 9;

// Exhaustive n! enumeration, used as a test oracle. Permutations are visited
// in lexicographic order and only a strictly better one replaces the
// incumbent, so ties resolve to the lexicographically smallest assign array.
inline Assignment brute_force_assignment(const Matrix& cost) {
  detail::validate_square_cost(cost, "brute_force_assignment");
  const std::size_t n = cost.rows();
  if (n > kBruteForceMaxSide) {
    throw DimensionError("brute_force_assignment: n = " + std::to_string(n) +
                         " exceeds enumeration bound " + std::to_string(kBruteForceMaxSide));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Assignment best{perm, detail::assignment_cost(cost, perm)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double c = detail::assignment_cost(cost, perm);
    if (c < best.total_cost) best = {perm, c};
  }
  return best;
}

}  // namespace mgd
