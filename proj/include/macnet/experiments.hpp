#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "macnet/model.hpp"

namespace macnet {

struct ExperimentData {
  std::vector<babi::Sample> train;
  std::vector<babi::Sample> test;
};

// One train+evaluate run; asserts the splits are disjoint first.
struct RunOutcome {
  TrainResult train;
  EvalReport test_report;
};
RunOutcome run_training(const ModelConfig& cfg, const ExperimentData& data,
                        std::ostream* log = nullptr);

struct StepsSweepRow {
  int p = 0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  std::vector<EpochStat> curve;
};
struct StepsSweepResult {
  std::vector<StepsSweepRow> rows;
  std::string to_tsv() const;
  // Long-format per-epoch validation curves for overlaying.
  std::string curves_tsv() const;
};
// Trains one model per step count on identical data and seed.
StepsSweepResult sweep_steps(const ModelConfig& base, const ExperimentData& data,
                             const std::vector<int>& p_values, std::ostream* log = nullptr);

// Maps an ablation name onto the config flag it disables.
// Names: separate_lstm, no_story_reread, no_prev_memory, no_graph.
ModelConfig apply_ablation(const ModelConfig& base, const std::string& name);
const std::vector<std::string>& ablation_names();

struct AblationOutcome {
  std::string name;
  EvalReport baseline;
  EvalReport ablated;
  double delta_overall = 0.0;  // ablated - baseline
  std::string to_tsv() const;
};
// Baseline and ablated runs share seed and data; pass a precomputed baseline
// report to reuse it across several ablations.
AblationOutcome run_ablation(const ModelConfig& base, const ExperimentData& data,
                             const std::string& name, std::ostream* log = nullptr,
                             const EvalReport* cached_baseline = nullptr);

struct FractionRow {
  double fraction = 0.0;
  int n_train = 0;
  double test_acc = 0.0;
};
struct FractionSweepResult {
  std::vector<FractionRow> rows;
  std::string to_tsv() const;
};
FractionSweepResult sweep_fraction(const ModelConfig& base, const ExperimentData& data,
                                   const std::vector<double>& fractions,
                                   std::ostream* log = nullptr);

// Finite-difference check of the full model at the small desk configuration
// (d=8, short random sequences, tiny vocabulary).
GradCheckReport desk_gradcheck(int p, uint64_t seed, int n_samples = 2);

}  // namespace macnet
