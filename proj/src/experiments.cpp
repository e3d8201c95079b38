#include "macnet/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace macnet {

namespace {
std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}
}  // namespace

RunOutcome run_training(const ModelConfig& cfg, const ExperimentData& data, std::ostream* log) {
  assert_disjoint(data.train, data.test);
  RunOutcome out;
  out.train = train_model(cfg, data.train, log);
  Model best = Model::from_checkpoint(out.train.best);
  out.test_report = evaluate(best, data.test);
  return out;
}

std::string StepsSweepResult::to_tsv() const {
  std::ostringstream os;
  os << "p\tbest_val_acc\ttest_acc\n";
  for (const auto& r : rows)
    os << r.p << "\t" << fmt4(r.best_val_acc) << "\t" << fmt4(r.test_acc) << "\n";
  return os.str();
}

std::string StepsSweepResult::curves_tsv() const {
  std::ostringstream os;
  os << "p\tepoch\tval_acc\n";
  for (const auto& r : rows)
    for (const auto& e : r.curve) os << r.p << "\t" << e.epoch << "\t" << fmt4(e.val_acc) << "\n";
  return os.str();
}

StepsSweepResult sweep_steps(const ModelConfig& base, const ExperimentData& data,
                             const std::vector<int>& p_values, std::ostream* log) {
  StepsSweepResult result;
  for (int p : p_values) {
    ModelConfig cfg = base;
    cfg.p = p;
    if (log) *log << "[sweep-steps] p=" << p << "\n";
    RunOutcome run = run_training(cfg, data, log);
    StepsSweepRow row;
    row.p = p;
    row.best_val_acc = run.train.best_val_acc;
    row.test_acc = run.test_report.overall;
    row.curve = run.train.history;
    result.rows.push_back(std::move(row));
  }
  return result;
}

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names = {"separate_lstm", "no_story_reread",
                                                 "no_prev_memory", "no_graph"};
  return names;
}

ModelConfig apply_ablation(const ModelConfig& base, const std::string& name) {
  ModelConfig cfg = base;
  if (name == "separate_lstm")
    cfg.shared_encoder = false;
  else if (name == "no_story_reread")
    cfg.reread_story = false;
  else if (name == "no_prev_memory")
    cfg.use_prev_memory_in_control = false;
  else if (name == "no_graph")
    cfg.use_graph_reasoning = false;
  else
    throw UsageError("unknown ablation '" + name + "'");
  return cfg;
}

std::string AblationOutcome::to_tsv() const {
  std::ostringstream os;
  os << "task\tbaseline\tablated\tdelta\n";
  for (const auto& [task, n] : baseline.per_task_n) {
    if (n == 0) continue;
    const double b = baseline.task_accuracy(task);
    const double a = ablated.task_accuracy(task);
    os << task << "\t" << fmt4(b) << "\t" << fmt4(a) << "\t" << fmt4(a - b) << "\n";
  }
  os << "overall\t" << fmt4(baseline.overall) << "\t" << fmt4(ablated.overall) << "\t"
     << fmt4(delta_overall) << "\n";
  return os.str();
}

AblationOutcome run_ablation(const ModelConfig& base, const ExperimentData& data,
                             const std::string& name, std::ostream* log,
                             const EvalReport* cached_baseline) {
  AblationOutcome out;
  out.name = name;
  if (cached_baseline) {
    out.baseline = *cached_baseline;
  } else {
    if (log) *log << "[ablate] baseline\n";
    out.baseline = run_training(base, data, log).test_report;
  }
  if (log) *log << "[ablate] " << name << "\n";
  out.ablated = run_training(apply_ablation(base, name), data, log).test_report;
  out.delta_overall = out.ablated.overall - out.baseline.overall;
  return out;
}

std::string FractionSweepResult::to_tsv() const {
  std::ostringstream os;
  os << "fraction\tn_train\ttest_acc\n";
  for (const auto& r : rows) {
    char frac[32];
    std::snprintf(frac, sizeof(frac), "%.2f", r.fraction);
    os << frac << "\t" << r.n_train << "\t" << fmt4(r.test_acc) << "\n";
  }
  return os.str();
}

FractionSweepResult sweep_fraction(const ModelConfig& base, const ExperimentData& data,
                                   const std::vector<double>& fractions, std::ostream* log) {
  FractionSweepResult result;
  for (double f : fractions) {
    ModelConfig cfg = base;
    cfg.fraction = f;
    if (log) *log << "[sweep-fraction] fraction=" << f << "\n";
    RunOutcome run = run_training(cfg, data, log);
    FractionRow row;
    row.fraction = f;
    row.n_train = static_cast<int>(std::ceil(f * static_cast<double>(data.train.size())));
    row.test_acc = run.test_report.overall;
    result.rows.push_back(row);
  }
  return result;
}

GradCheckReport desk_gradcheck(int p, uint64_t seed, int n_samples) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.lstm_h = 4;
  cfg.embed_e = 4;
  cfg.p = p;
  cfg.seed = seed;

  babi::Vocabulary vocab;
  for (int i = 0; i < 17; ++i) vocab.add("t" + std::to_string(i));  // vocab size 20

  Rng rng(seed ^ 0xabcdef12345ULL);
  struct Probe {
    std::vector<int> story, question;
    int answer;
  };
  std::vector<Probe> probes;
  for (int s = 0; s < n_samples; ++s) {
    Probe probe;
    const int ls = 2 + static_cast<int>(rng.next_below(5));  // <= 6
    const int lq = 1 + static_cast<int>(rng.next_below(4));  // <= 4
    for (int i = 0; i < ls; ++i)
      probe.story.push_back(3 + static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab.size() - 3))));
    for (int i = 0; i < lq; ++i)
      probe.question.push_back(3 + static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab.size() - 3))));
    probe.answer = 3 + static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab.size() - 3)));
    probes.push_back(std::move(probe));
  }

  Model model(cfg, vocab);
  auto forward = [&] {
    Tensor total;
    for (const auto& probe : probes) {
      Model::Forward f = model.forward_ids(probe.story, std::vector<bool>(probe.story.size(), true),
                                           probe.question,
                                           std::vector<bool>(probe.question.size(), true), false);
      Tensor l = loss_op(f.logits, probe.answer);
      total = total.defined() ? add(total, l) : l;
    }
    return scale_by(Tensor::scalar(1.0 / static_cast<double>(probes.size())), total);
  };
  return grad_check(forward, model.store(), 1e-4, 1e-4);
}

}  // namespace macnet
