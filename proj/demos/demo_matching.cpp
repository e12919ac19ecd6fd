// Solves a small balanced matching and shows how each reducer collapses the
// matched teacher channels.

#include <iomanip>
#include <iostream>
#include <random>

#include "mgd/loss.hpp"
#include "mgd/matching.hpp"
#include "mgd/reduction.hpp"

using namespace mgd;

namespace {

FeatureMap random_features(std::size_t channels, std::size_t positions, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMap f(channels, positions);
  for (double& v : f.values()) v = n(rng);
  return f;
}

void print(const char* name, const FeatureMap& f) {
  std::cout << name << '\n';
  for (std::size_t c = 0; c < f.rows(); ++c) {
    std::cout << "  ";
    for (double v : f.row(c)) std::cout << (v >= 0 ? " " : "") << std::fixed << std::setprecision(2) << v << ' ';
    std::cout << '\n';
  }
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  const std::size_t cs = 3, ct = 7, positions = 5;
  const auto student = random_features(cs, positions, rng);
  const auto teacher = random_features(ct, positions, rng);

  const CostMatrix d = channel_distance(student, teacher);
  const Matching m = solve_balanced(d);
  std::cout << "balanced matching, cost " << matching_cost(d, m) << " (contiguous blocks "
            << matching_cost(d, Matching::contiguous_blocks(cs, ct)) << ")\n";
  write_matching(std::cout, m);

  print("teacher", teacher);
  print("student", student);
  for (auto kind : {ReducerKind::RD, ReducerKind::AMP, ReducerKind::MP, ReducerKind::AvgP}) {
    print(std::string(to_string(kind)).c_str(), reduce(kind, teacher, m, CounterRng(1)));
  }
  const SparseMatching sm = solve_sparse(d);
  print("sm", reduce_sm(teacher, sm));

  const auto margins = estimate_margins(std::span<const FeatureMap>(&teacher, 1));
  std::cout << "distill loss (amp): "
            << distill_loss(teacher, student, m, ReducerKind::AMP, margins, CounterRng(1)) << '\n';
}
