#pragma once

// Parameter-free reduction of a C_T x N teacher map to the student's C_S x N
// shape, given a channel matching.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mgd/matching.hpp"
#include "mgd/tensor.hpp"

namespace mgd {

enum class ReducerKind { SM, RD, AMP, MP, AvgP };

inline std::string_view to_string(ReducerKind k) {
  switch (k) {
    case ReducerKind::SM: return "sm";
    case ReducerKind::RD: return "rd";
    case ReducerKind::AMP: return "amp";
    case ReducerKind::MP: return "mp";
    case ReducerKind::AvgP: return "avgp";
  }
  return "?";
}

inline std::optional<ReducerKind> parse_reducer(std::string_view name) {
  for (auto k : {ReducerKind::SM, ReducerKind::RD, ReducerKind::AMP, ReducerKind::MP,
                 ReducerKind::AvgP}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

// Counter-based random stream: every draw is a pure function of
// (seed, stream, a, b), so draws for different (channel, position) pairs do
// not depend on evaluation order. Mixing is splitmix64.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream) {}

  constexpr CounterRng substream(std::uint64_t stream) const noexcept {
    return CounterRng(seed_, mix(stream_ ^ mix(stream + 0x632be59bd9b4e019ULL)));
  }

  constexpr std::uint64_t bits(std::uint64_t a, std::uint64_t b) const noexcept {
    return mix(mix(mix(seed_) ^ stream_) ^ mix(a + 0x9e3779b97f4a7c15ULL * (b + 1)));
  }

  // Uniform integer in [0, n) for n < 2^32 (multiply-shift on the top 32 bits).
  std::size_t index(std::uint64_t a, std::uint64_t b, std::size_t n) const noexcept {
    return static_cast<std::size_t>(((bits(a, b) >> 32) * std::uint64_t(n)) >> 32);
  }

 private:
  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
};

// Signed element of largest magnitude; ties go to the smallest index.
inline double amp(std::span<const double> x) {
  if (x.empty()) throw ValueError("amp: empty input");
  double best = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (std::abs(x[i]) > std::abs(best)) best = x[i];
  }
  return best;
}

namespace detail {

inline std::vector<std::vector<std::size_t>> reducer_groups(const FeatureMap& teacher,
                                                            const Matching& m, const char* who) {
  if (teacher.rows() != m.teacher_channels()) {
    throw DimensionError(std::string(who) + ": teacher has " + std::to_string(teacher.rows()) +
                         " channels, matching expects " + std::to_string(m.teacher_channels()));
  }
  auto groups = m.groups();
  for (const auto& g : groups) {
    if (g.empty()) throw std::logic_error(std::string(who) + ": student channel owns no teacher");
  }
  return groups;
}

template <typename Pool>
FeatureMap pool_groups(const FeatureMap& teacher, const Matching& m, const char* who, Pool pool) {
  const auto groups = reducer_groups(teacher, m, who);
  const std::size_t n = teacher.cols();
  FeatureMap out(groups.size(), n);
  std::vector<double> column;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    column.resize(groups[i].size());
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t g = 0; g < groups[i].size(); ++g) column[g] = teacher(groups[i][g], k);
      out(i, k) = pool(std::span<const double>(column));
    }
  }
  return out;
}

}  // namespace detail

// Row i of the output is teacher row pairs[i].
inline FeatureMap reduce_sm(const FeatureMap& teacher, const SparseMatching& p) {
  if (teacher.rows() != p.teacher_channels) {
    throw DimensionError("reduce_sm: teacher channel count does not match matching");
  }
  FeatureMap out(p.pairs.size(), teacher.cols());
  for (std::size_t i = 0; i < p.pairs.size(); ++i) {
    if (p.pairs[i] >= teacher.rows()) throw DimensionError("reduce_sm: pair index out of range");
    const auto src = teacher.row(p.pairs[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

// For every (student channel i, position k) one owned teacher channel is
// drawn uniformly and independently, keyed on (i, k) within the given stream.
inline FeatureMap reduce_rd(const FeatureMap& teacher, const Matching& m, const CounterRng& rng) {
  const auto groups = detail::reducer_groups(teacher, m, "reduce_rd");
  const std::size_t n = teacher.cols();
  FeatureMap out(groups.size(), n);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t pick = g.size() == 1 ? 0 : rng.index(i, k, g.size());
      out(i, k) = teacher(g[pick], k);
    }
  }
  return out;
}

inline FeatureMap reduce_amp(const FeatureMap& teacher, const Matching& m) {
  return detail::pool_groups(teacher, m, "reduce_amp", [](std::span<const double> x) {
    return amp(x);
  });
}

inline FeatureMap reduce_mp(const FeatureMap& teacher, const Matching& m) {
  return detail::pool_groups(teacher, m, "reduce_mp", [](std::span<const double> x) {
    double best = x[0];
    for (double v : x) best = std::max(best, v);
    return best;
  });
}

inline FeatureMap reduce_avgp(const FeatureMap& teacher, const Matching& m) {
  return detail::pool_groups(teacher, m, "reduce_avgp", [](std::span<const double> x) {
    double sum = 0.0;
    for (double v : x) sum += v;
    return sum / static_cast<double>(x.size());
  });
}

// Dispatch on reducer kind. For SM the matching is expected to be the
// alpha = 1 form produced by SparseMatching::as_matching(); RD uses `rng`.
inline FeatureMap reduce(ReducerKind kind, const FeatureMap& teacher, const Matching& m,
                         const CounterRng& rng) {
  switch (kind) {
    case ReducerKind::SM:
      if (m.alpha != 1) throw std::logic_error("reduce: SM needs a one-to-one matching");
      return reduce_amp(teacher, m);
    case ReducerKind::RD: return reduce_rd(teacher, m, rng);
    case ReducerKind::AMP: return reduce_amp(teacher, m);
    case ReducerKind::MP: return reduce_mp(teacher, m);
    case ReducerKind::AvgP: return reduce_avgp(teacher, m);
  }
  throw std::logic_error("reduce: unknown reducer");
}

}  // namespace mgd
