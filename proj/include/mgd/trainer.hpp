#pragma once

// Coordinate-descent distillation: matching rounds (both nets in inference
// mode over a random training subset) alternate with SGD epochs on the student
// while the matching stays fixed.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mgd/loss.hpp"
#include "mgd/matching.hpp"
#include "mgd/nets.hpp"
#include "mgd/reduction.hpp"
#include "mgd/synth_data.hpp"

namespace mgd {

enum class MatchingMode { Solve, FixedBlocks };

struct TrainConfig {
  std::vector<std::size_t> widths{4, 8, 16};
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double lr = 0.02;
  std::vector<std::size_t> lr_decay_epochs;  // empty: 50% and 75% of epochs
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool distill = true;
  double gamma = 1.0;
  ReducerKind reducer = ReducerKind::AMP;
  MatchingMode matching = MatchingMode::Solve;
  std::size_t match_update_period = 2;
  double match_subset_fraction = 0.25;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& c) {
  if (c.widths.empty()) throw ValueError("TrainConfig: widths must be non-empty");
  if (c.epochs == 0) throw ValueError("TrainConfig: epochs must be >= 1");
  if (c.batch_size == 0) throw ValueError("TrainConfig: batch_size must be >= 1");
  if (!(c.lr >= 0.0)) throw ValueError("TrainConfig: lr must be >= 0");
  if (!(c.lr_decay_factor > 0.0)) throw ValueError("TrainConfig: lr_decay_factor must be > 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ValueError("TrainConfig: momentum in [0,1)");
  if (!(c.weight_decay >= 0.0)) throw ValueError("TrainConfig: weight_decay must be >= 0");
  if (!(c.gamma >= 0.0)) throw ValueError("TrainConfig: gamma must be >= 0");
  if (c.match_update_period < 1) throw ValueError("TrainConfig: match_update_period must be >= 1");
  if (!(c.match_subset_fraction > 0.0 && c.match_subset_fraction <= 1.0)) {
    throw ValueError("TrainConfig: match_subset_fraction must be in (0, 1]");
  }
}

inline double learning_rate(const TrainConfig& c, std::size_t epoch) {
  std::vector<std::size_t> steps = c.lr_decay_epochs;
  if (steps.empty()) steps = {c.epochs / 2, (3 * c.epochs) / 4};
  double lr = c.lr;
  for (auto s : steps) {
    if (epoch >= s) lr *= c.lr_decay_factor;
  }
  return lr;
}

// Independent engine per purpose so that e.g. matching-subset draws never
// perturb the minibatch order.
enum class RngStream : std::uint64_t { Init = 1, Shuffle = 2, Subset = 3, RandomDrop = 4 };

inline std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline double accuracy(const ToyNet& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto pass = net.forward(data.images[s]);
    correct += argmax(pass.logits) == data.labels[s];
  }
  return 100.0 * double(correct) / double(data.size());
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double task_loss = 0.0;
  double distill_loss = 0.0;
  double train_acc = 0.0;  // percent
  double val_acc = 0.0;    // percent

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct MatchingRound {
  std::size_t round = 0;
  std::size_t epoch = 0;
  std::vector<double> costs;  // per tap, trace objective per matching sample
  std::vector<Matching> matchings;

  double total_cost() const { return std::accumulate(costs.begin(), costs.end(), 0.0); }
  friend bool operator==(const MatchingRound&, const MatchingRound&) = default;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  std::vector<MatchingRound> rounds;

  double final_val_acc() const { return epochs.empty() ? 0.0 : epochs.back().val_acc; }
  friend bool operator==(const RunLog&, const RunLog&) = default;
};

// Matching state of one distillation position.
struct TapState {
  Matching matching;               // alpha = 1 form when the reducer is SM
  std::optional<SparseMatching> sparse;
  MarginVector margins;            // per teacher channel
};

class Trainer {
 public:
  // `teacher` may be null only when config.distill is false. The teacher must
  // outlive the trainer and is never modified.
  Trainer(TrainConfig config, const DataSplit& data, const ToyNet* teacher)
      : config_(std::move(config)),
        data_(&data),
        teacher_(teacher),
        shuffle_rng_(make_rng(config_.seed, RngStream::Shuffle)),
        subset_rng_(make_rng(config_.seed, RngStream::Subset)),
        rd_rng_(config_.seed, static_cast<std::uint64_t>(RngStream::RandomDrop)) {
    validate(config_);
    if (data.train.size() == 0) throw ValueError("Trainer: empty training set");
    student_ = ToyNet(NetSpec{1, data.train.image_size, config_.widths, data.train.n_classes});
    auto init_rng = make_rng(config_.seed, RngStream::Init);
    student_.init(init_rng);
    opt_ = Sgd(student_.parameter_count());
    if (config_.distill) {
      if (!teacher_) throw ValueError("Trainer: distillation needs a teacher");
      check_compatible();
      cache_teacher_taps();
      taps_.resize(student_.stage_count());
    }
  }

  const TrainConfig& config() const noexcept { return config_; }
  const ToyNet& student() const noexcept { return student_; }
  ToyNet& student() noexcept { return student_; }
  const std::vector<TapState>& taps() const noexcept { return taps_; }
  const std::vector<CostMatrix>& last_costs() const noexcept { return last_costs_; }
  std::size_t epoch() const noexcept { return epoch_; }
  const RunLog& log() const noexcept { return log_; }

  // Draws a fresh random subset of the training set and re-solves.
  MatchingRound update_matchings() {
    const std::size_t n = data_->train.size();
    const auto k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(config_.match_subset_fraction * double(n))), 1, n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), subset_rng_);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return update_matchings(order);
  }

  // Accumulates channel costs over `subset` (training indices, in the given
  // order), re-estimates teacher margins, and replaces every tap's matching.
  MatchingRound update_matchings(std::span<const std::size_t> subset) {
    if (!config_.distill) throw std::logic_error("update_matchings: distillation disabled");
    if (subset.empty()) throw ValueError("update_matchings: empty subset");
    const std::size_t n_taps = taps_.size();
    std::vector<CostMatrix> costs;
    std::vector<MarginEstimator> margins(n_taps);
    for (std::size_t p = 0; p < n_taps; ++p) {
      costs.push_back(CostMatrix::zeros(student_.stage_width(p), teacher_->stage_width(p)));
    }
    for (auto idx : subset) {
      const auto pass = student_.forward(data_->train.images.at(idx));
      const auto& teacher_taps = teacher_taps_.at(idx);
      for (std::size_t p = 0; p < n_taps; ++p) {
        costs[p] = accumulate_cost(std::move(costs[p]),
                                   channel_distance(pass.taps[p], teacher_taps[p]));
        margins[p].add(teacher_taps[p]);
      }
    }

    MatchingRound round;
    round.round = log_.rounds.size();
    round.epoch = epoch_;
    for (std::size_t p = 0; p < n_taps; ++p) {
      TapState& tap = taps_[p];
      tap.margins = margins[p].finish();
      const double per_sample = 1.0 / double(costs[p].sample_count);
      if (config_.reducer == ReducerKind::SM) {
        SparseMatching sm = config_.matching == MatchingMode::Solve
                                ? solve_sparse(costs[p])
                                : block_sparse(costs[p]);
        round.costs.push_back(matching_cost(costs[p], sm) * per_sample);
        tap.matching = sm.as_matching();
        tap.sparse = std::move(sm);
      } else {
        tap.matching = config_.matching == MatchingMode::Solve
                           ? solve_balanced(costs[p])
                           : Matching::contiguous_blocks(costs[p].student_channels(),
                                                         costs[p].teacher_channels());
        tap.sparse.reset();
        round.costs.push_back(matching_cost(costs[p], tap.matching) * per_sample);
      }
      round.matchings.push_back(tap.matching);
    }
    last_costs_ = std::move(costs);
    rebuild_targets();
    return round;
  }

  // One SGD epoch (plus the scheduled matching round when distilling).
  EpochRecord run_epoch() {
    if (config_.distill && epoch_ % config_.match_update_period == 0) {
      log_.rounds.push_back(update_matchings());
    }
    const Dataset& train = data_->train;
    const double lr = learning_rate(config_, epoch_);
    const SgdParams sgd{lr, config_.momentum, config_.weight_decay};
    const bool use_distill = config_.distill && config_.gamma > 0.0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng_);

    double task_sum = 0.0, distill_sum = 0.0;
    std::size_t correct = 0;
    std::vector<FeatureMap> d_taps;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config_.batch_size);
      const double inv_b = 1.0 / double(stop - start);
      student_.zero_grad();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t idx = order[b];
        const auto pass = student_.forward(train.images[idx]);
        auto ce = softmax_cross_entropy(pass.logits, train.labels[idx]);
        task_sum += ce.loss;
        correct += argmax(pass.logits) == train.labels[idx];
        for (double& g : ce.grad) g *= inv_b;
        d_taps.clear();
        if (use_distill) {
          for (std::size_t p = 0; p < taps_.size(); ++p) {
            const FeatureMap target = target_for(idx, p);
            DistillTerm term = distill_term(target, pass.taps[p]);
            distill_sum += term.loss;
            const double scale = config_.gamma * inv_b;
            for (double& g : term.grad.values()) g *= scale;
            d_taps.push_back(std::move(term.grad));
          }
        }
        student_.backward(pass, ce.grad, d_taps);
      }
      opt_.step(student_, sgd);
      ++step_;
    }

    EpochRecord rec;
    rec.epoch = epoch_;
    rec.lr = lr;
    rec.task_loss = task_sum / double(train.size());
    rec.distill_loss = distill_sum / double(train.size());
    rec.train_acc = 100.0 * double(correct) / double(train.size());
    rec.val_acc = accuracy(student_, data_->val);
    log_.epochs.push_back(rec);
    ++epoch_;
    return rec;
  }

  const RunLog& run() {
    while (epoch_ < config_.epochs) run_epoch();
    return log_;
  }

 private:
  void check_compatible() const {
    if (teacher_->stage_count() != student_.stage_count()) {
      throw ValueError("Trainer: teacher and student need the same number of stages");
    }
    for (std::size_t p = 0; p < student_.stage_count(); ++p) {
      if (teacher_->tap_positions(p) != student_.tap_positions(p)) {
        throw DimensionError("Trainer: spatial size differs at tap " + std::to_string(p));
      }
      if (teacher_->stage_width(p) < student_.stage_width(p)) {
        throw DimensionError("Trainer: teacher narrower than student at tap " + std::to_string(p));
      }
    }
  }

  void cache_teacher_taps() {
    teacher_taps_.reserve(data_->train.size());
    for (const auto& img : data_->train.images) teacher_taps_.push_back(teacher_->forward(img).taps);
  }

  // Pairs each student channel with the first teacher channel of its block.
  static SparseMatching block_sparse(const CostMatrix& d) {
    const auto blocks = Matching::contiguous_blocks(d.student_channels(), d.teacher_channels());
    SparseMatching sm;
    sm.teacher_channels = d.teacher_channels();
    for (std::size_t i = 0; i < d.student_channels(); ++i) sm.pairs.push_back(i * blocks.alpha);
    return sm;
  }

  // Every reducer except RD yields a fixed target for the whole round.
  void rebuild_targets() {
    targets_.clear();
    if (config_.reducer == ReducerKind::RD) return;
    targets_.resize(teacher_taps_.size());
    for (std::size_t s = 0; s < teacher_taps_.size(); ++s) {
      for (std::size_t p = 0; p < taps_.size(); ++p) {
        targets_[s].push_back(distill_target(teacher_taps_[s][p], taps_[p].matching,
                                             config_.reducer, taps_[p].margins, rd_rng_));
      }
    }
  }

  FeatureMap target_for(std::size_t sample, std::size_t p) const {
    if (config_.reducer != ReducerKind::RD) return targets_[sample][p];
    // Fresh draws every step, keyed on (step, sample, tap).
    const CounterRng rng = rd_rng_.substream(step_).substream(sample).substream(p);
    return distill_target(teacher_taps_[sample][p], taps_[p].matching, ReducerKind::RD,
                          taps_[p].margins, rng);
  }

  TrainConfig config_;
  const DataSplit* data_;
  const ToyNet* teacher_;
  ToyNet student_;
  Sgd opt_;
  std::mt19937_64 shuffle_rng_;
  std::mt19937_64 subset_rng_;
  CounterRng rd_rng_;
  std::vector<std::vector<FeatureMap>> teacher_taps_;  // [train sample][tap]
  std::vector<std::vector<FeatureMap>> targets_;       // [train sample][tap]
  std::vector<TapState> taps_;
  std::vector<CostMatrix> last_costs_;
  RunLog log_;
  std::size_t epoch_ = 0;
  std::uint64_t step_ = 0;
};

struct TrainResult {
  RunLog log;
  ToyNet student;
};

inline TrainResult train(const TrainConfig& config, const DataSplit& data, const ToyNet* teacher) {
  Trainer t(config, data, teacher);
  t.run();
  return {t.log(), t.student()};
}

// Same loop with the matching pinned to contiguous teacher blocks.
inline TrainResult ablation_no_matching(TrainConfig config, const DataSplit& data,
                                        const ToyNet* teacher) {
  config.matching = MatchingMode::FixedBlocks;
  return train(config, data, teacher);
}

struct TeacherConfig {
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  friend bool operator==(const TeacherConfig&, const TeacherConfig&) = default;
};

// Plain supervised training of the (wide) teacher.
inline TrainResult train_teacher(const TeacherConfig& tc, const DataSplit& data,
                                 std::uint64_t seed) {
  TrainConfig c;
  c.widths = tc.widths;
  c.epochs = tc.epochs;
  c.batch_size = tc.batch_size;
  c.lr = tc.lr;
  c.momentum = tc.momentum;
  c.weight_decay = tc.weight_decay;
  c.distill = false;
  c.gamma = 0.0;
  c.seed = seed ^ 0x7eac4e7ULL;
  return train(c, data, nullptr);
}

// ---- persistence -----------------------------------------------------------

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_epochs_csv(std::ostream& os, const RunLog& log) {
  os << "epoch,lr,task_loss,distill_loss,train_acc,val_acc\n";
  for (const auto& e : log.epochs) {
    os << e.epoch << ',' << format_number(e.lr) << ',' << format_number(e.task_loss) << ','
       << format_number(e.distill_loss) << ',' << format_number(e.train_acc) << ','
       << format_number(e.val_acc) << '\n';
  }
}

inline void write_matching_round(std::ostream& os, const MatchingRound& r) {
  os << "# round " << r.round << " epoch " << r.epoch << '\n';
  for (std::size_t p = 0; p < r.matchings.size(); ++p) {
    os << "# tap " << p << " cost " << std::setprecision(17) << r.costs[p] << '\n';
    write_matching(os, r.matchings[p]);
  }
}

}  // namespace mgd
