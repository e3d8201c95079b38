#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "macnet/errors.hpp"
#include "macnet/rng.hpp"

namespace macnet::babi {

// One question with the story context seen so far. Story tokens carry an
// explicit sentence-boundary marker after each sentence so attention can be
// re-aggregated to sentence granularity.
struct Sample {
  int task_id = 0;
  std::string uid;  // "<file stem>:<question line index>", unique per corpus
  std::vector<std::string> story;
  std::vector<std::string> question;
  std::string answer;
  // 1-based indices into the story's fact sentences (analysis only; never
  // fed to the model).
  std::vector<int> supporting_facts;

  int sentence_count() const;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kEos = 2;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";
  static constexpr const char* kEosToken = "<eos>";

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // token list indexed by id

  int add(const std::string& token);
  int id(const std::string& token) const;  // kUnk when unknown
  const std::string& token(int id) const;
  bool contains(const std::string& token) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct Batch {
  std::vector<std::vector<int>> story;          // [B][L_s_max], PAD-padded
  std::vector<std::vector<int>> question;       // [B][L_q_max]
  std::vector<std::vector<bool>> story_mask;    // true exactly on non-PAD
  std::vector<std::vector<bool>> question_mask;
  std::vector<int> answers;
  std::vector<int> task_ids;
  std::vector<size_t> sample_index;  // positions in the source sample list

  int size() const { return static_cast<int>(answers.size()); }
};

struct CorpusStats {
  std::map<int, int> per_task;             // keys 1..20 always present
  std::map<int, int> sentence_length_hist; // story length in sentences
  std::map<int, int> token_length_hist;    // story length in tokens
  int answer_vocab_size = 0;
  int total_samples = 0;
  double fraction_token_length_below_50 = 0.0;

  std::string to_tsv() const;
};

// Lowercases and splits whitespace; trailing '.'/'?' become their own tokens.
std::vector<std::string> tokenize(const std::string& text);
// Inverse of tokenize up to normalization: tokens joined by single spaces,
// sentence-boundary markers rendered as newlines.
std::string detokenize(const std::vector<std::string>& tokens);

std::vector<Sample> parse_babi_file(const std::string& path, int task_id);
// Same parser over an in-memory buffer; `origin` seeds the sample uids.
std::vector<Sample> parse_babi_text(const std::string& text, int task_id, const std::string& origin);

Vocabulary build_vocab(const std::vector<Sample>& samples);

std::vector<Batch> make_batches(const std::vector<Sample>& samples, const Vocabulary& vocab,
                                int batch_size, uint64_t seed, bool mix_tasks);

// Stratified subsample: each task keeps ~fraction of its samples; the total
// is exactly ceil(fraction * N). Deterministic given seed.
std::vector<Sample> subsample(const std::vector<Sample>& samples, double fraction, uint64_t seed);

CorpusStats corpus_stats(const std::vector<Sample>& samples);

}  // namespace macnet::babi
