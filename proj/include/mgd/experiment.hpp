#pragma once

// Experiment runner behind the command-line tool: JSON configuration, seeded
// arms, CSV/text/PGM artifacts and the run manifest.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgd/io.hpp"
#include "mgd/loss.hpp"
#include "mgd/trainer.hpp"

namespace mgd {

inline constexpr const char* kVersion = "0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Arm { Baseline, SM, RD, AMP, MP, AvgP, NoMatching };

inline constexpr Arm kAllArms[] = {Arm::Baseline, Arm::SM, Arm::RD, Arm::AMP,
                                   Arm::MP, Arm::AvgP, Arm::NoMatching};

inline std::string to_string(Arm a) {
  switch (a) {
    case Arm::Baseline: return "baseline";
    case Arm::SM: return "sm";
    case Arm::RD: return "rd";
    case Arm::AMP: return "amp";
    case Arm::MP: return "mp";
    case Arm::AvgP: return "avgp";
    case Arm::NoMatching: return "no-matching";
  }
  return "?";
}

inline Arm parse_arm(const std::string& name) {
  for (Arm a : kAllArms) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown arm '" + name + "'");
}

inline std::vector<Arm> parse_arm_list(const std::string& csv) {
  std::vector<Arm> arms;
  std::stringstream ss(csv);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) arms.push_back(parse_arm(item));
  }
  if (arms.empty()) throw ConfigError("arm list is empty");
  return arms;
}

struct ExperimentConfig {
  SynthSpec synth;
  double val_fraction = 0.2;
  bool standardize = true;  // zero-mean, unit-variance inputs from training stats
  TeacherConfig teacher;
  TrainConfig train;  // seed and reducer/matching are set per arm
  std::vector<Arm> arms{Arm::Baseline, Arm::AMP};
  std::size_t seeds = 5;
  std::uint64_t base_seed = 0;
  std::string out_dir = "runs/default";
  std::size_t dump_sample = 0;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// ---- JSON ------------------------------------------------------------------

namespace detail {

using nlohmann::json;

// Reads `key` into `out` when present; type errors become ConfigError.
template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known,
                           const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw ConfigError(std::string("unknown field '") + it.key() + "' in " + where);
    }
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json arms = json::array();
  for (Arm a : c.arms) arms.push_back(to_string(a));
  return json{
      {"synth",
       {{"n_classes", c.synth.n_classes},
        {"samples_per_class", c.synth.samples_per_class},
        {"image_size", c.synth.image_size},
        {"noise_sigma", c.synth.noise_sigma}}},
      {"val_fraction", c.val_fraction},
      {"standardize", c.standardize},
      {"teacher",
       {{"widths", c.teacher.widths},
        {"epochs", c.teacher.epochs},
        {"batch_size", c.teacher.batch_size},
        {"lr", c.teacher.lr},
        {"momentum", c.teacher.momentum},
        {"weight_decay", c.teacher.weight_decay}}},
      {"train",
       {{"widths", c.train.widths},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"lr_decay_epochs", c.train.lr_decay_epochs},
        {"lr_decay_factor", c.train.lr_decay_factor},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"gamma", c.train.gamma},
        {"match_update_period", c.train.match_update_period},
        {"match_subset_fraction", c.train.match_subset_fraction}}},
      {"arms", arms},
      {"seeds", c.seeds},
      {"base_seed", c.base_seed},
      {"out_dir", c.out_dir},
      {"dump_sample", c.dump_sample},
  };
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  using detail::read_field;
  detail::reject_unknown(j,
                         {"synth", "val_fraction", "standardize", "teacher", "train", "arms",
                          "seeds", "base_seed", "out_dir", "dump_sample"},
                         "config");
  ExperimentConfig c;
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::reject_unknown(s, {"n_classes", "samples_per_class", "image_size", "noise_sigma"},
                           "synth");
    read_field(s, "n_classes", c.synth.n_classes);
    read_field(s, "samples_per_class", c.synth.samples_per_class);
    read_field(s, "image_size", c.synth.image_size);
    read_field(s, "noise_sigma", c.synth.noise_sigma);
  }
  read_field(j, "val_fraction", c.val_fraction);
  read_field(j, "standardize", c.standardize);
  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    detail::reject_unknown(t, {"widths", "epochs", "batch_size", "lr", "momentum", "weight_decay"},
                           "teacher");
    read_field(t, "widths", c.teacher.widths);
    read_field(t, "epochs", c.teacher.epochs);
    read_field(t, "batch_size", c.teacher.batch_size);
    read_field(t, "lr", c.teacher.lr);
    read_field(t, "momentum", c.teacher.momentum);
    read_field(t, "weight_decay", c.teacher.weight_decay);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown(t,
                           {"widths", "epochs", "batch_size", "lr", "lr_decay_epochs",
                            "lr_decay_factor", "momentum", "weight_decay", "gamma",
                            "match_update_period", "match_subset_fraction"},
                           "train");
    read_field(t, "widths", c.train.widths);
    read_field(t, "epochs", c.train.epochs);
    read_field(t, "batch_size", c.train.batch_size);
    read_field(t, "lr", c.train.lr);
    read_field(t, "lr_decay_epochs", c.train.lr_decay_epochs);
    read_field(t, "lr_decay_factor", c.train.lr_decay_factor);
    read_field(t, "momentum", c.train.momentum);
    read_field(t, "weight_decay", c.train.weight_decay);
    read_field(t, "gamma", c.train.gamma);
    read_field(t, "match_update_period", c.train.match_update_period);
    read_field(t, "match_subset_fraction", c.train.match_subset_fraction);
  }
  if (j.contains("arms")) {
    std::vector<std::string> names;
    read_field(j, "arms", names);
    c.arms.clear();
    for (const auto& n : names) c.arms.push_back(parse_arm(n));
  }
  read_field(j, "seeds", c.seeds);
  read_field(j, "base_seed", c.base_seed);
  read_field(j, "out_dir", c.out_dir);
  read_field(j, "dump_sample", c.dump_sample);
  return c;
}

inline ExperimentConfig parse_experiment(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return experiment_from_json(j);
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment(ss.str());
}

// Checks every invariant a run depends on; throws ConfigError.
inline void validate(const ExperimentConfig& c) {
  if (c.arms.empty()) throw ConfigError("arms must be non-empty");
  if (c.seeds == 0) throw ConfigError("seeds must be >= 1");
  if (c.out_dir.empty()) throw ConfigError("out_dir must be set");
  if (c.teacher.widths.size() != c.train.widths.size()) {
    throw ConfigError("teacher and student need the same number of stages");
  }
  for (std::size_t p = 0; p < c.train.widths.size(); ++p) {
    if (c.teacher.widths[p] < c.train.widths[p]) {
      throw ConfigError("teacher width must be >= student width at every stage");
    }
  }
  if (c.dump_sample >= c.synth.n_classes * c.synth.samples_per_class) {
    throw ConfigError("dump_sample is outside the dataset");
  }
  try {
    validate(c.synth);
    validate(c.train);
    split(Dataset{}, c.val_fraction, 0);
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
}

inline std::string config_hash(const ExperimentConfig& c) {
  const std::string text = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::uint64_t seed_at(const ExperimentConfig& c, std::size_t k) { return c.base_seed + k; }

inline TrainConfig arm_config(const ExperimentConfig& c, Arm arm, std::uint64_t seed) {
  TrainConfig t = c.train;
  t.seed = seed;
  t.distill = arm != Arm::Baseline;
  t.matching = arm == Arm::NoMatching ? MatchingMode::FixedBlocks : MatchingMode::Solve;
  switch (arm) {
    case Arm::SM: t.reducer = ReducerKind::SM; break;
    case Arm::RD: t.reducer = ReducerKind::RD; break;
    case Arm::MP: t.reducer = ReducerKind::MP; break;
    case Arm::AvgP: t.reducer = ReducerKind::AvgP; break;
    default: t.reducer = ReducerKind::AMP; break;
  }
  return t;
}

inline DataSplit seeded_data(const ExperimentConfig& c, std::uint64_t seed) {
  SynthSpec s = c.synth;
  s.seed = seed;
  DataSplit data = split(generate(s), c.val_fraction, seed);
  if (c.standardize) standardize(data);
  return data;
}

// Sample `index` of the unsplit dataset for `seed`, preprocessed exactly as
// the training inputs were.
inline FeatureMap seeded_image(const ExperimentConfig& c, std::uint64_t seed, std::size_t index) {
  SynthSpec s = c.synth;
  s.seed = seed;
  const Dataset full = generate(s);
  if (index >= full.size()) throw ValueError("sample index out of range");
  FeatureMap img = full.images[index];
  if (c.standardize) {
    const auto st = pixel_stats(split(full, c.val_fraction, seed).train);
    for (double& v : img.values()) v = (v - st.mean) / st.stddev;
  }
  return img;
}

inline NetSpec teacher_spec(const ExperimentConfig& c) {
  return {1, c.synth.image_size, c.teacher.widths, c.synth.n_classes};
}

inline NetSpec student_spec(const ExperimentConfig& c) {
  return {1, c.synth.image_size, c.train.widths, c.synth.n_classes};
}

// ---- results ---------------------------------------------------------------

struct ArmRun {
  Arm arm;
  std::uint64_t seed;
  RunLog log;
};

struct ArmSummary {
  Arm arm;
  std::size_t runs = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // sample standard deviation over seeds
  double mean_first_cost = 0.0;
  double mean_final_cost = 0.0;
};

struct ExperimentResult {
  std::vector<ArmRun> runs;
  std::vector<double> teacher_acc;  // per seed
  std::vector<ArmSummary> summary;

  const ArmSummary* find(Arm a) const {
    for (const auto& s : summary) {
      if (s.arm == a) return &s;
    }
    return nullptr;
  }
};

inline std::vector<ArmSummary> summarize(const std::vector<Arm>& arms,
                                         const std::vector<ArmRun>& runs) {
  std::vector<ArmSummary> out;
  for (Arm a : arms) {
    ArmSummary s{a};
    std::vector<double> acc;
    for (const auto& r : runs) {
      if (r.arm != a) continue;
      acc.push_back(r.log.final_val_acc());
      if (!r.log.rounds.empty()) {
        s.mean_first_cost += r.log.rounds.front().total_cost();
        s.mean_final_cost += r.log.rounds.back().total_cost();
      }
    }
    s.runs = acc.size();
    if (s.runs == 0) continue;
    for (double v : acc) s.mean_acc += v;
    s.mean_acc /= double(s.runs);
    s.mean_first_cost /= double(s.runs);
    s.mean_final_cost /= double(s.runs);
    if (s.runs > 1) {
      double ss = 0.0;
      for (double v : acc) ss += (v - s.mean_acc) * (v - s.mean_acc);
      s.std_acc = std::sqrt(ss / double(s.runs - 1));
    }
    out.push_back(s);
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, const std::vector<ArmSummary>& summary) {
  os << "arm,runs,mean_val_acc,std_val_acc,mean_first_cost,mean_final_cost\n";
  for (const auto& s : summary) {
    os << to_string(s.arm) << ',' << s.runs << ',' << format_number(s.mean_acc) << ','
       << format_number(s.std_acc) << ',' << format_number(s.mean_first_cost) << ','
       << format_number(s.mean_final_cost) << '\n';
  }
}

// ---- feature dumps ---------------------------------------------------------

struct FeatureDumpRequest {
  std::size_t sample = 0;       // index into the generated (unsplit) dataset
  std::size_t tap = 0;
  std::optional<std::size_t> max_channels;  // student channels to dump
};

// For each student channel i at the tap: the owned teacher channels, the
// reduced teacher channel and the student channel, each as its own PGM, plus
// a side-by-side montage. Returns the written image paths.
inline std::vector<std::filesystem::path> dump_features(
    const ToyNet& teacher, const ToyNet& student, const Matching& m, ReducerKind reducer,
    const FeatureMap& image, const FeatureDumpRequest& req, const std::filesystem::path& dir,
    const std::string& prefix) {
  if (req.tap >= student.stage_count()) throw ValueError("dump_features: tap out of range");
  std::filesystem::create_directories(dir);
  const FeatureMap t = teacher.forward(image).taps[req.tap];
  const FeatureMap s = student.forward(image).taps[req.tap];
  const FeatureMap reduced = reduce(reducer, t, m, CounterRng(0));
  const std::size_t side = student.tap_side(req.tap);
  const auto groups = m.groups();
  const std::size_t n = std::min(groups.size(), req.max_channels.value_or(groups.size()));
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const GrayImage& img) {
    const auto path = dir / (prefix + "_tap" + std::to_string(req.tap) + "_" + name + ".pgm");
    save_pgm(path, img);
    written.push_back(path);
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<GrayImage> panels;
    const std::string tag = "s" + std::to_string(i);
    for (std::size_t j : groups[i]) {
      panels.push_back(normalize_to_gray(t.row(j), side, side));
      emit(tag + "_teacher" + std::to_string(j), panels.back());
    }
    panels.push_back(normalize_to_gray(reduced.row(i), side, side));
    emit(tag + "_reduced", panels.back());
    panels.push_back(normalize_to_gray(s.row(i), side, side));
    emit(tag + "_student", panels.back());
    emit(tag + "_montage", montage(panels));
  }
  return written;
}

// ---- the runner ------------------------------------------------------------

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path epochs(Arm a, std::uint64_t seed) const {
    return root / ("epochs_" + to_string(a) + "_" + std::to_string(seed) + ".csv");
  }
  std::filesystem::path matching(Arm a, std::uint64_t seed, std::size_t round) const {
    return root / ("matching_" + to_string(a) + "_" + std::to_string(seed) + "_round" +
                   std::to_string(round) + ".txt");
  }
  std::string teacher_ckpt(std::uint64_t seed) const {
    return (root / "checkpoints" / ("teacher_" + std::to_string(seed))).string();
  }
  std::string student_ckpt(Arm a, std::uint64_t seed) const {
    return (root / "checkpoints" / ("student_" + to_string(a) + "_" + std::to_string(seed)))
        .string();
  }
  std::filesystem::path features() const { return root / "features"; }
  std::filesystem::path summary() const { return root / "summary.csv"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

inline nlohmann::json manifest_json(const ExperimentConfig& c) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < c.seeds; ++k) seeds.push_back(seed_at(c, k));
  return {{"config", to_json(c)},
          {"config_hash", config_hash(c)},
          {"seeds", seeds},
          {"code_version", std::string("mgd ") + kVersion}};
}

// The final matching of a finished arm, read back from its last trace file.
inline std::vector<Matching> read_final_matchings(const RunPaths& paths, Arm arm,
                                                  std::uint64_t seed) {
  std::size_t round = 0;
  while (std::filesystem::exists(paths.matching(arm, seed, round + 1))) ++round;
  std::ifstream is(paths.matching(arm, seed, round));
  if (!is) throw std::runtime_error("no matching trace for arm " + to_string(arm));
  std::vector<Matching> out;
  while (is.peek() != EOF) {
    try {
      out.push_back(read_matching(is));
    } catch (const ValueError&) {
      if (out.empty()) throw;
      break;
    }
  }
  return out;
}

inline ReducerKind arm_reducer(Arm a) { return arm_config(ExperimentConfig{}, a, 0).reducer; }

struct RunOptions {
  bool write = true;
  std::function<void(const std::string&)> progress;
};

inline ExperimentResult run_experiment(const ExperimentConfig& c, const RunOptions& opt = {}) {
  validate(c);
  const RunPaths paths{c.out_dir};
  auto note = [&](const std::string& msg) {
    if (opt.progress) opt.progress(msg);
  };
  if (opt.write) {
    std::filesystem::create_directories(paths.root / "checkpoints");
    std::ofstream(paths.manifest()) << manifest_json(c).dump(2) << '\n';
  }

  ExperimentResult result;
  for (std::size_t k = 0; k < c.seeds; ++k) {
    const std::uint64_t seed = seed_at(c, k);
    const DataSplit data = seeded_data(c, seed);
    const auto teacher = train_teacher(c.teacher, data, seed);
    result.teacher_acc.push_back(teacher.log.final_val_acc());
    note("seed " + std::to_string(seed) + " teacher val_acc " +
         format_number(teacher.log.final_val_acc()));
    if (opt.write) save_checkpoint(teacher.student, paths.teacher_ckpt(seed));

    for (Arm arm : c.arms) {
      auto run = train(arm_config(c, arm, seed), data, &teacher.student);
      note("seed " + std::to_string(seed) + " arm " + to_string(arm) + " val_acc " +
           format_number(run.log.final_val_acc()));
      if (opt.write) {
        std::ofstream csv(paths.epochs(arm, seed));
        write_epochs_csv(csv, run.log);
        for (const auto& r : run.log.rounds) {
          std::ofstream txt(paths.matching(arm, seed, r.round));
          write_matching_round(txt, r);
        }
        save_checkpoint(run.student, paths.student_ckpt(arm, seed));
        if (k == 0 && !run.log.rounds.empty()) {
          const FeatureMap image = seeded_image(c, seed, c.dump_sample);
          const auto& final_round = run.log.rounds.back();
          for (std::size_t p = 0; p < final_round.matchings.size(); ++p) {
            FeatureDumpRequest req{c.dump_sample, p, 1};
            dump_features(teacher.student, run.student, final_round.matchings[p],
                          arm_reducer(arm), image, req, paths.features(),
                          to_string(arm) + "_" + std::to_string(seed));
          }
        }
      }
      result.runs.push_back({arm, seed, std::move(run.log)});
    }
  }
  result.summary = summarize(c.arms, result.runs);
  if (opt.write) {
    std::ofstream os(paths.summary());
    write_summary_csv(os, result.summary);
  }
  return result;
}

// Re-creates the feature dump for a finished run from its manifest,
// checkpoints and final matching trace.
inline std::vector<std::filesystem::path> dump_features_from_run(
    const std::filesystem::path& run_dir, Arm arm, std::uint64_t seed,
    const FeatureDumpRequest& req, const std::filesystem::path& out_dir) {
  if (arm == Arm::Baseline) throw ValueError("dump_features: baseline arm has no matching");
  std::ifstream mf(run_dir / "manifest.json");
  if (!mf) throw std::runtime_error("dump_features: no manifest.json in " + run_dir.string());
  const auto manifest = nlohmann::json::parse(mf);
  const ExperimentConfig c = experiment_from_json(manifest.at("config"));
  const RunPaths paths{run_dir};
  const ToyNet teacher = load_checkpoint(teacher_spec(c), paths.teacher_ckpt(seed));
  const ToyNet student = load_checkpoint(student_spec(c), paths.student_ckpt(arm, seed));
  const auto matchings = read_final_matchings(paths, arm, seed);
  if (req.tap >= matchings.size()) throw ValueError("dump_features: tap out of range");
  return dump_features(teacher, student, matchings[req.tap], arm_reducer(arm),
                       seeded_image(c, seed, req.sample), req, out_dir,
                       to_string(arm) + "_" + std::to_string(seed) + "_sample" +
                           std::to_string(req.sample));
}

}  // namespace mgd
