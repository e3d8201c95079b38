#include "macnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace macnet {

CellConfig ModelConfig::cell() const {
  CellConfig c;
  c.d = d;
  c.p = p;
  c.use_prev_memory_in_control = use_prev_memory_in_control;
  c.reread_story = reread_story;
  c.use_graph_reasoning = use_graph_reasoning;
  c.use_gate = use_gate;
  c.question_proj_d_form = question_proj_d_form;
  return c;
}

EncoderConfig ModelConfig::encoder(int vocab_size) const {
  EncoderConfig e;
  e.vocab_size = vocab_size;
  e.embed_e = embed_e;
  e.lstm_h = lstm_h;
  e.shared_encoder = shared_encoder;
  return e;
}

void ModelConfig::validate() const {
  if (d != 2 * lstm_h)
    throw UsageError("config: MAC state size d=" + std::to_string(d) +
                     " must equal 2*lstm_h=" + std::to_string(2 * lstm_h));
  if (p < 1) throw UsageError("config: p must be >= 1");
  if (batch < 1) throw UsageError("config: batch must be >= 1");
  if (embed_e < 1 || lstm_h < 1) throw UsageError("config: widths must be positive");
  if (!(fraction > 0.0) || fraction > 1.0) throw UsageError("config: fraction must lie in (0,1]");
}

Model::Model(ModelConfig cfg, babi::Vocabulary vocab)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), store_(cfg_.seed) {
  cfg_.validate();
  // Fixed creation order keeps initialization deterministic for a seed.
  init_encoder_params(store_, cfg_.encoder(vocab_.size()));
  init_cell_params(store_, cfg_.cell());
  store_.weight("clf.h.W", cfg_.d, 2 * cfg_.d);
  store_.bias("clf.h.b", cfg_.d);
  store_.weight("clf.out.W", vocab_.size(), cfg_.d);
  store_.bias("clf.out.b", vocab_.size());
}

Model Model::from_checkpoint(const Checkpoint& ckpt) {
  Model m(ckpt.config, babi::Vocabulary(ckpt.vocab_tokens));
  m.load_params(ckpt);
  return m;
}

Model::Forward Model::forward_ids(const std::vector<int>& story_ids,
                                  const std::vector<bool>& story_mask,
                                  const std::vector<int>& question_ids,
                                  const std::vector<bool>& question_mask, bool capture_trace) {
  const EncoderConfig enc_cfg = cfg_.encoder(vocab_.size());
  Encoded story = encode_sequence(store_, enc_cfg, story_ids, story_mask, SeqKind::Story);
  Encoded question = encode_sequence(store_, enc_cfg, question_ids, question_mask, SeqKind::Question);

  const CellConfig cell_cfg = cfg_.cell();
  MACState state = MACState::initial(cfg_.d);
  Tensor q = question.final;  // q_0
  const Tensor q0 = q;
  std::vector<Tensor> control_history, memory_history;

  Forward out;
  out.trace_captured = capture_trace;
  for (int i = 0; i < cfg_.p; ++i) {
    StepResult step = mac_step(store_, cell_cfg, state, q, story, question, control_history,
                               memory_history);
    state = step.state;
    q = step.q;
    if (capture_trace) out.steps.push_back(std::move(step.trace));
  }

  Tensor hidden = elu(apply_linear(store_, concat_last_axis(state.m, q0), "clf.h", cfg_.d));
  out.logits = apply_linear(store_, hidden, "clf.out", vocab_.size());
  return out;
}

Model::Forward Model::forward(const babi::Sample& sample, bool capture_trace) {
  std::vector<int> story_ids, question_ids;
  story_ids.reserve(sample.story.size());
  for (const auto& t : sample.story) story_ids.push_back(vocab_.id(t));
  for (const auto& t : sample.question) question_ids.push_back(vocab_.id(t));
  return forward_ids(story_ids, std::vector<bool>(story_ids.size(), true), question_ids,
                     std::vector<bool>(question_ids.size(), true), capture_trace);
}

int Model::predict(const babi::Sample& sample) {
  Forward f = forward(sample, false);
  const auto& v = f.logits.values();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

Checkpoint Model::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = cfg_;
  ckpt.vocab_tokens = vocab_.tokens();
  for (const auto& [name, t] : store_) ckpt.params[name] = {t.shape, t.values()};
  ckpt.store_rng = store_.rng().state();
  return ckpt;
}

void Model::load_params(const Checkpoint& ckpt) {
  if (ckpt.params.size() != store_.size())
    throw FormatError("checkpoint has " + std::to_string(ckpt.params.size()) +
                      " parameters, model expects " + std::to_string(store_.size()));
  for (auto& [name, t] : store_) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw FormatError("checkpoint missing parameter '" + name + "'");
    if (it->second.first != t.shape)
      throw FormatError("checkpoint parameter '" + name + "' has shape " +
                        shape_str(it->second.first) + ", model expects " + shape_str(t.shape));
    t.values() = it->second.second;
  }
  store_.rng().set_state(ckpt.store_rng);
}

Tensor loss_op(const Tensor& logits, int answer_id) { return cross_entropy(logits, answer_id); }

double EvalReport::task_accuracy(int task) const {
  auto n = per_task_n.find(task);
  if (n == per_task_n.end() || n->second == 0) return std::nan("");
  return static_cast<double>(per_task_correct.at(task)) / static_cast<double>(n->second);
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << "task\tn\tcorrect\taccuracy\n";
  char buf[32];
  for (const auto& [task, count] : per_task_n) {
    os << task << "\t" << count << "\t" << per_task_correct.at(task) << "\t";
    if (count == 0) {
      os << "-";
    } else {
      std::snprintf(buf, sizeof(buf), "%.4f", task_accuracy(task));
      os << buf;
    }
    os << "\n";
  }
  std::snprintf(buf, sizeof(buf), "%.4f", overall);
  os << "overall\t" << n << "\t" << correct << "\t" << buf << "\n";
  return os.str();
}

EvalReport evaluate(Model& model, const std::vector<babi::Sample>& samples, int workers) {
  if (workers < 1) throw UsageError("evaluate: workers must be >= 1");
  std::vector<int> predictions(samples.size(), -1);

  auto run_range = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) predictions[i] = model.predict(samples[i]);
  };
  const size_t n = samples.size();
  const size_t pool = std::min<size_t>(static_cast<size_t>(workers), std::max<size_t>(n, 1));
  if (pool <= 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> threads;
    const size_t chunk = (n + pool - 1) / pool;
    for (size_t w = 0; w < pool; ++w) {
      const size_t b = w * chunk;
      const size_t e = std::min(n, b + chunk);
      if (b >= e) break;
      threads.emplace_back(run_range, b, e);
    }
    for (auto& t : threads) t.join();
  }

  EvalReport report;
  for (int t = 1; t <= 20; ++t) {
    report.per_task_n[t] = 0;
    report.per_task_correct[t] = 0;
  }
  std::map<std::pair<std::string, std::string>, int> confusion;
  for (size_t i = 0; i < samples.size(); ++i) {
    const babi::Sample& s = samples[i];
    const std::string predicted = model.vocab().token(predictions[i]);
    report.per_task_n[s.task_id] += 1;
    report.n += 1;
    if (predicted == s.answer) {
      report.per_task_correct[s.task_id] += 1;
      report.correct += 1;
    } else {
      confusion[{s.answer, predicted}] += 1;
    }
  }
  report.overall = report.n ? static_cast<double>(report.correct) / report.n : 0.0;

  std::vector<std::tuple<std::string, std::string, int>> pairs;
  for (const auto& [key, count] : confusion) pairs.push_back({key.first, key.second, count});
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<2>(a) != std::get<2>(b)) return std::get<2>(a) > std::get<2>(b);
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::get<1>(a) < std::get<1>(b);
  });
  if (pairs.size() > 10) pairs.resize(10);
  report.top_confusions = std::move(pairs);
  return report;
}

void assert_disjoint(const std::vector<babi::Sample>& train,
                     const std::vector<babi::Sample>& test) {
  std::set<std::string> train_ids;
  for (const auto& s : train) train_ids.insert(s.uid);
  for (const auto& s : test)
    if (train_ids.count(s.uid))
      throw UsageError("train/test leak: sample '" + s.uid + "' appears in both sets");
}

namespace {

struct Split {
  std::vector<babi::Sample> train;
  std::vector<babi::Sample> val;
};

// Last tenth of each task's samples (file order) becomes validation.
Split split_train_val(const std::vector<babi::Sample>& samples) {
  std::map<int, std::vector<size_t>> by_task;
  for (size_t i = 0; i < samples.size(); ++i) by_task[samples[i].task_id].push_back(i);
  std::vector<bool> is_val(samples.size(), false);
  for (const auto& [task, idx] : by_task) {
    const size_t n_val = std::max<size_t>(1, idx.size() / 10);
    for (size_t k = idx.size() - n_val; k < idx.size(); ++k) is_val[idx[k]] = true;
  }
  Split out;
  for (size_t i = 0; i < samples.size(); ++i)
    (is_val[i] ? out.val : out.train).push_back(samples[i]);
  return out;
}

}  // namespace

TrainResult train_model(const ModelConfig& cfg, const std::vector<babi::Sample>& train_samples,
                        std::ostream* log) {
  cfg.validate();
  if (train_samples.empty()) throw UsageError("train: no training samples");

  std::vector<babi::Sample> pool = train_samples;
  if (cfg.fraction < 1.0) pool = babi::subsample(pool, cfg.fraction, cfg.seed);

  babi::Vocabulary vocab = babi::build_vocab(pool);
  Split split = split_train_val(pool);
  Model model(cfg, vocab);
  Rng train_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam;

  TrainResult result;
  auto snapshot_best = [&](int epoch, double val_acc) {
    result.best = model.to_checkpoint();
    result.best.train_rng = train_rng.state();
    result.best.epoch = epoch;
    result.best.best_val_acc = val_acc;
    result.best_val_acc = val_acc;
    result.best_epoch = epoch;
  };

  double val_acc = evaluate(model, split.val).overall;
  result.history.push_back({0, std::nan(""), val_acc});
  snapshot_best(0, val_acc);
  if (log) *log << "epoch 0 val_acc " << val_acc << "\n";

  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = babi::make_batches(split.train, vocab, cfg.batch, train_rng.next_u64(), true);
    double loss_total = 0.0;
    size_t loss_count = 0;
    for (const auto& batch : batches) {
      try {
        Tape tape;
        Tensor batch_loss;
        for (int b = 0; b < batch.size(); ++b) {
          Model::Forward f = model.forward_ids(batch.story[static_cast<size_t>(b)],
                                               batch.story_mask[static_cast<size_t>(b)],
                                               batch.question[static_cast<size_t>(b)],
                                               batch.question_mask[static_cast<size_t>(b)], false);
          Tensor l = loss_op(f.logits, batch.answers[static_cast<size_t>(b)]);
          batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
        }
        batch_loss = scale_by(Tensor::scalar(1.0 / batch.size()), batch_loss);
        const double loss_value = batch_loss.item();
        if (!std::isfinite(loss_value)) throw NumericError("train: non-finite batch loss");
        backward(batch_loss);
        loss_total += loss_value;
        loss_count += 1;
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << e.what() << "; batch samples:";
        for (size_t idx : batch.sample_index) os << " " << split.train[idx].uid;
        throw NumericError(os.str());
      }
      adam_step(model.store(), adam, cfg.lr, cfg.clip);
    }
    const double train_loss = loss_count ? loss_total / static_cast<double>(loss_count) : 0.0;

    val_acc = evaluate(model, split.val).overall;
    result.history.push_back({epoch, train_loss, val_acc});
    if (log)
      *log << "epoch " << epoch << " train_loss " << train_loss << " val_acc " << val_acc << "\n";

    if (val_acc > result.best_val_acc) {
      snapshot_best(epoch, val_acc);
      since_best = 0;
    } else {
      since_best += 1;
      if (since_best >= cfg.patience) break;
    }
  }
  return result;
}

}  // namespace macnet
