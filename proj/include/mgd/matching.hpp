#pragma once

// Channel-pair cost matrices and the balanced many-to-one / sparse one-to-one
// teacher-to-student channel matchings built on top of the square solver.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mgd/assignment.hpp"
#include "mgd/tensor.hpp"

namespace mgd {

// C_S x C_T accumulated squared distances between student channel i and
// teacher channel j.
struct CostMatrix {
  Matrix values;
  std::size_t sample_count = 0;

  std::size_t student_channels() const noexcept { return values.rows(); }
  std::size_t teacher_channels() const noexcept { return values.cols(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return values(i, j); }

  static CostMatrix zeros(std::size_t student_channels, std::size_t teacher_channels) {
    return {Matrix(student_channels, teacher_channels), 0};
  }
};

// Owner value for a teacher channel dropped from the problem because C_T is
// not a multiple of C_S.
inline constexpr std::size_t kShaved = std::numeric_limits<std::size_t>::max();

// Balanced many-to-one matching: owner[j] is the student channel that teacher
// channel j is assigned to (or kShaved). Each student owns exactly alpha
// teacher channels.
struct Matching {
  std::vector<std::size_t> owner;
  std::size_t alpha = 1;
  std::size_t student_channels = 0;

  std::size_t teacher_channels() const noexcept { return owner.size(); }

  std::size_t shaved_count() const noexcept {
    std::size_t n = 0;
    for (auto o : owner) n += (o == kShaved);
    return n;
  }

  // Owned teacher channels per student, each list in ascending teacher index.
  std::vector<std::vector<std::size_t>> groups() const {
    std::vector<std::vector<std::size_t>> g(student_channels);
    for (std::size_t j = 0; j < owner.size(); ++j) {
      if (owner[j] == kShaved) continue;
      if (owner[j] >= student_channels) throw DimensionError("Matching: owner index out of range");
      g[owner[j]].push_back(j);
    }
    return g;
  }

  // True when every student owns exactly alpha teachers and every teacher is
  // either owned once or shaved, with exactly C_T - alpha*C_S shaved.
  bool is_balanced() const {
    if (student_channels == 0 || alpha == 0) return false;
    if (owner.size() < alpha * student_channels) return false;
    std::vector<std::size_t> counts(student_channels, 0);
    for (auto o : owner) {
      if (o == kShaved) continue;
      if (o >= student_channels) return false;
      ++counts[o];
    }
    for (auto c : counts) {
      if (c != alpha) return false;
    }
    return shaved_count() == owner.size() - alpha * student_channels;
  }

  // Teacher channels [i*alpha, (i+1)*alpha) go to student i; the tail is shaved.
  static Matching contiguous_blocks(std::size_t student_channels, std::size_t teacher_channels) {
    if (student_channels == 0 || teacher_channels < student_channels) {
      throw DimensionError("Matching::contiguous_blocks: need 0 < C_S <= C_T");
    }
    Matching m;
    m.student_channels = student_channels;
    m.alpha = teacher_channels / student_channels;
    m.owner.assign(teacher_channels, kShaved);
    for (std::size_t j = 0; j < m.alpha * student_channels; ++j) m.owner[j] = j / m.alpha;
    return m;
  }

  friend bool operator==(const Matching&, const Matching&) = default;
};

// One distinct teacher channel per student channel.
struct SparseMatching {
  std::vector<std::size_t> pairs;
  std::size_t teacher_channels = 0;

  // The same correspondence as a Matching with alpha = 1 and every unpaired
  // teacher channel shaved, so pooling reducers treat it as singleton groups.
  Matching as_matching() const {
    Matching m;
    m.student_channels = pairs.size();
    m.alpha = 1;
    m.owner.assign(teacher_channels, kShaved);
    for (std::size_t i = 0; i < pairs.size(); ++i) m.owner.at(pairs[i]) = i;
    return m;
  }

  friend bool operator==(const SparseMatching&, const SparseMatching&) = default;
};

// d[i][j] = sum_k (S[i,k] - T[j,k])^2 for one sample.
inline CostMatrix channel_distance(const FeatureMap& student, const FeatureMap& teacher) {
  if (student.cols() != teacher.cols()) {
    throw DimensionError("channel_distance: spatial size mismatch (" +
                         std::to_string(student.cols()) + " vs " + std::to_string(teacher.cols()) +
                         ")");
  }
  const std::size_t n = student.cols();
  CostMatrix d = CostMatrix::zeros(student.rows(), teacher.rows());
  d.sample_count = 1;
  for (std::size_t i = 0; i < student.rows(); ++i) {
    const double* s = student.row(i).data();
    for (std::size_t j = 0; j < teacher.rows(); ++j) {
      const double* t = teacher.row(j).data();
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double diff = s[k] - t[k];
        acc += diff * diff;
      }
      d.values(i, j) = acc;
    }
  }
  return d;
}

inline CostMatrix accumulate_cost(CostMatrix acc, const CostMatrix& batch) {
  require_same_shape(acc.values, batch.values, "accumulate_cost");
  auto dst = acc.values.values();
  auto src = batch.values.values();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  acc.sample_count += batch.sample_count;
  return acc;
}

namespace detail {

inline void require_wide(const CostMatrix& d, const char* who) {
  if (d.student_channels() == 0 || d.teacher_channels() < d.student_channels()) {
    throw DimensionError(std::string(who) + ": need 0 < C_S <= C_T, got C_S=" +
                         std::to_string(d.student_channels()) +
                         " C_T=" + std::to_string(d.teacher_channels()));
  }
}

}  // namespace detail

// Balanced matching through one square assignment: stack alpha copies of D,
// pad the remaining C_T - alpha*C_S rows with kBigCost, solve, then fold row r
// of the stack back onto student r mod C_S. Teacher channels taken by padding
// rows are shaved.
inline Matching solve_balanced(const CostMatrix& d) {
  detail::require_wide(d, "solve_balanced");
  const std::size_t cs = d.student_channels();
  const std::size_t ct = d.teacher_channels();
  const std::size_t alpha = ct / cs;
  const std::size_t real_rows = alpha * cs;

  Matrix square(ct, ct, kBigCost);
  for (std::size_t r = 0; r < real_rows; ++r) {
    const auto src = d.values.row(r % cs);
    std::copy(src.begin(), src.end(), square.row(r).begin());
  }
  const Assignment solved = hungarian(square);

  Matching m;
  m.alpha = alpha;
  m.student_channels = cs;
  m.owner.assign(ct, kShaved);
  for (std::size_t r = 0; r < real_rows; ++r) m.owner[solved.assign[r]] = r % cs;
  return m;
}

// One-to-one matching of every student channel to a distinct teacher channel,
// by padding D with C_T - C_S rows of kBigCost and keeping the first C_S rows.
inline SparseMatching solve_sparse(const CostMatrix& d) {
  detail::require_wide(d, "solve_sparse");
  const std::size_t cs = d.student_channels();
  const std::size_t ct = d.teacher_channels();
  Matrix square(ct, ct, kBigCost);
  for (std::size_t r = 0; r < cs; ++r) {
    const auto src = d.values.row(r);
    std::copy(src.begin(), src.end(), square.row(r).begin());
  }
  const Assignment solved = hungarian(square);
  SparseMatching sm;
  sm.teacher_channels = ct;
  sm.pairs.assign(solved.assign.begin(), solved.assign.begin() + static_cast<std::ptrdiff_t>(cs));
  return sm;
}

// trace(D^T M): sum of d[owner[j]][j] over non-shaved teacher channels.
inline double matching_cost(const CostMatrix& d, const Matching& m) {
  if (m.teacher_channels() != d.teacher_channels() ||
      m.student_channels != d.student_channels()) {
    throw DimensionError("matching_cost: matching does not fit cost matrix");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < m.owner.size(); ++j) {
    if (m.owner[j] == kShaved) continue;
    total += d(m.owner[j], j);
  }
  return total;
}

inline double matching_cost(const CostMatrix& d, const SparseMatching& m) {
  if (m.pairs.size() != d.student_channels() || m.teacher_channels != d.teacher_channels()) {
    throw DimensionError("matching_cost: sparse matching does not fit cost matrix");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m.pairs.size(); ++i) total += d(i, m.pairs[i]);
  return total;
}

// Text form:
//   # C_S=<cs> C_T=<ct> alpha=<alpha>
//   <teacher> -> <student>      (one line per teacher channel, "x" if shaved)
inline void write_matching(std::ostream& os, const Matching& m) {
  os << "# C_S=" << m.student_channels << " C_T=" << m.teacher_channels()
     << " alpha=" << m.alpha << '\n';
  for (std::size_t j = 0; j < m.owner.size(); ++j) {
    os << j << " -> ";
    if (m.owner[j] == kShaved) {
      os << 'x';
    } else {
      os << m.owner[j];
    }
    os << '\n';
  }
}

inline std::string format_matching(const Matching& m) {
  std::ostringstream os;
  write_matching(os, m);
  return os.str();
}

// Parses one block written by write_matching. Leaves the stream positioned
// after the last channel line.
inline Matching read_matching(std::istream& is) {
  std::string line;
  while (std::getline(is, line) && line.rfind("# C_S=", 0) != 0) {
  }
  if (line.rfind("# C_S=", 0) != 0) throw ValueError("read_matching: missing header");
  std::size_t cs = 0, ct = 0, alpha = 0;
  if (std::sscanf(line.c_str(), "# C_S=%zu C_T=%zu alpha=%zu", &cs, &ct, &alpha) != 3) {
    throw ValueError("read_matching: malformed header '" + line + "'");
  }
  Matching m;
  m.student_channels = cs;
  m.alpha = alpha;
  m.owner.assign(ct, kShaved);
  for (std::size_t k = 0; k < ct; ++k) {
    if (!std::getline(is, line)) throw ValueError("read_matching: truncated block");
    std::istringstream ls(line);
    std::size_t teacher = 0;
    std::string arrow, target;
    if (!(ls >> teacher >> arrow >> target) || arrow != "->" || teacher >= ct) {
      throw ValueError("read_matching: malformed line '" + line + "'");
    }
    m.owner[teacher] = target == "x" ? kShaved : std::stoul(target);
  }
  return m;
}

}  // namespace mgd
