#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "macnet/babi.hpp"
#include "macnet/encoder.hpp"
#include "macnet/mac_cell.hpp"
#include "macnet/tensor.hpp"

namespace macnet {

struct ModelConfig {
  int d = 40;
  int lstm_h = 20;
  int embed_e = 20;
  int p = 2;
  int batch = 32;
  double lr = 1e-3;
  double clip = 5.0;
  int epochs = 100;
  int patience = 10;
  uint64_t seed = 0;
  bool shared_encoder = true;
  bool use_prev_memory_in_control = true;
  bool reread_story = true;
  bool use_graph_reasoning = true;
  bool use_gate = true;
  bool question_proj_d_form = false;
  double fraction = 1.0;        // training-set fraction (stratified)
  std::vector<int> tasks;       // empty = all tasks found in the data dir

  CellConfig cell() const;
  EncoderConfig encoder(int vocab_size) const;
  void validate() const;  // rejects d != 2*lstm_h and p < 1
  bool operator==(const ModelConfig&) const = default;
};

struct Checkpoint {
  int format_version = 1;
  ModelConfig config;
  std::vector<std::string> vocab_tokens;
  // Parameter payload, name -> (shape, values); always double precision.
  std::map<std::string, std::pair<Shape, std::vector<double>>> params;
  std::array<uint64_t, 4> store_rng{};
  std::array<uint64_t, 4> train_rng{};
  int epoch = 0;
  double best_val_acc = 0.0;
};

class Model {
 public:
  Model(ModelConfig cfg, babi::Vocabulary vocab);
  static Model from_checkpoint(const Checkpoint& ckpt);

  struct Forward {
    Tensor logits;                 // [vocab_size]
    std::vector<StepTrace> steps;  // p entries when traces were captured
    bool trace_captured = false;
  };

  // One sample through encoder -> p MAC steps -> classifier. Masks mark
  // non-PAD positions; ids may carry a PAD tail.
  Forward forward_ids(const std::vector<int>& story_ids, const std::vector<bool>& story_mask,
                      const std::vector<int>& question_ids, const std::vector<bool>& question_mask,
                      bool capture_trace = false);
  Forward forward(const babi::Sample& sample, bool capture_trace = false);
  int predict(const babi::Sample& sample);

  ParameterStore& store() { return store_; }
  const ModelConfig& config() const { return cfg_; }
  const babi::Vocabulary& vocab() const { return vocab_; }

  Checkpoint to_checkpoint() const;
  void load_params(const Checkpoint& ckpt);  // shape-guarded

 private:
  ModelConfig cfg_;
  babi::Vocabulary vocab_;
  ParameterStore store_;
};

// Negative log softmax probability of the answer.
Tensor loss_op(const Tensor& logits, int answer_id);

struct EvalReport {
  std::map<int, int> per_task_n;        // all 20 task ids present
  std::map<int, int> per_task_correct;
  int n = 0;
  int correct = 0;
  double overall = 0.0;
  // (gold, predicted, count) for wrong answers, most frequent first.
  std::vector<std::tuple<std::string, std::string, int>> top_confusions;

  double task_accuracy(int task) const;
  std::string to_tsv() const;
};

// Argmax evaluation; pure, optionally fanned out over read-only workers.
EvalReport evaluate(Model& model, const std::vector<babi::Sample>& samples, int workers = 1);

struct EpochStat {
  int epoch = 0;          // 0 = before any update
  double train_loss = 0;  // NaN at epoch 0
  double val_acc = 0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochStat> history;
  double best_val_acc = 0.0;
  int best_epoch = 0;
};

// Mixed-task mini-batch training with per-epoch validation and early
// stopping; deterministic given config.seed. The validation split is the
// last tenth of each task's samples.
TrainResult train_model(const ModelConfig& cfg, const std::vector<babi::Sample>& train_samples,
                        std::ostream* log = nullptr);

// Guard against test leakage; throws UsageError on overlap.
void assert_disjoint(const std::vector<babi::Sample>& train,
                     const std::vector<babi::Sample>& test);

}  // namespace macnet
