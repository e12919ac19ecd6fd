// Trains a wide teacher on the synthetic shapes, then a thin student with and
// without feature distillation, printing the per-epoch log.

#include <iostream>

#include "mgd/experiment.hpp"

using namespace mgd;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 1;
  ExperimentConfig c;
  c.teacher.epochs = 15;
  c.train.epochs = 20;
  const DataSplit data = seeded_data(c, seed);
  std::cout << "train " << data.train.size() << " / val " << data.val.size() << " images\n";

  const auto teacher = train_teacher(c.teacher, data, seed);
  std::cout << "teacher val acc " << teacher.log.final_val_acc() << "\n\n";

  for (Arm arm : {Arm::Baseline, Arm::AMP}) {
    const auto run = train(arm_config(c, arm, seed), data, &teacher.student);
    std::cout << to_string(arm) << '\n';
    write_epochs_csv(std::cout, run.log);
    for (const auto& r : run.log.rounds) {
      std::cout << "  round " << r.round << " epoch " << r.epoch << " cost " << r.total_cost()
                << '\n';
    }
    std::cout << '\n';
  }
}
