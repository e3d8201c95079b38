#include "macnet/babi.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace macnet::babi {

int Sample::sentence_count() const {
  int n = 0;
  for (const auto& t : story)
    if (t == Vocabulary::kEosToken) ++n;
  return n;
}

Vocabulary::Vocabulary() {
  id_to_token_ = {kPadToken, kUnkToken, kEosToken};
  for (int i = 0; i < 3; ++i) token_to_id_[id_to_token_[i]] = i;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : id_to_token_(std::move(tokens)) {
  if (id_to_token_.size() < 3 || id_to_token_[0] != kPadToken || id_to_token_[1] != kUnkToken ||
      id_to_token_[2] != kEosToken)
    throw FormatError("vocabulary must start with the reserved pad/unk/eos tokens");
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<int>(i));
    (void)it;
    if (!inserted) throw FormatError("duplicate vocabulary token '" + id_to_token_[i] + "'");
  }
}

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int new_id = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_[token] = new_id;
  return new_id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw UsageError("vocabulary id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::string punct;
    while (!word.empty() && (word.back() == '.' || word.back() == '?')) {
      punct.insert(punct.begin(), word.back());
      word.pop_back();
    }
    if (!word.empty()) out.push_back(word);
    for (char c : punct) out.emplace_back(1, c);
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool at_line_start = true;
  for (const auto& t : tokens) {
    if (t == Vocabulary::kEosToken) {
      out += '\n';
      at_line_start = true;
      continue;
    }
    if (!at_line_start) out += ' ';
    out += t;
    at_line_start = false;
  }
  while (!out.empty() && out.back() == '\n') out.pop_back();
  return out;
}

namespace {

struct StoryState {
  std::vector<std::string> tokens;      // flat story with eos markers
  std::map<int, int> line_to_sentence;  // file line number -> 1-based fact index
  int fact_count = 0;

  void reset() {
    tokens.clear();
    line_to_sentence.clear();
    fact_count = 0;
  }
};

std::vector<std::string> split_tabs(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == '\t') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  return parts;
}

}  // namespace

std::vector<Sample> parse_babi_text(const std::string& text, int task_id,
                                    const std::string& origin) {
  std::vector<Sample> samples;
  StoryState story;
  std::istringstream in(text);
  std::string line;
  int file_line = 0;
  while (std::getline(in, line)) {
    ++file_line;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const size_t sp = line.find(' ');
    if (sp == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(file_line) + ": missing line number prefix");
    int line_no = 0;
    try {
      size_t used = 0;
      line_no = std::stoi(line.substr(0, sp), &used);
      if (used != sp) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw ParseError(origin + ":" + std::to_string(file_line) + ": non-numeric line prefix '" +
                       line.substr(0, sp) + "'");
    }
    if (line_no == 1) story.reset();
    const std::string rest = line.substr(sp + 1);

    if (rest.find('\t') != std::string::npos) {
      auto parts = split_tabs(rest);
      if (parts.size() < 3)
        throw ParseError(origin + ":" + std::to_string(file_line) +
                         ": question line lacks <question>\\t<answer>\\t<supports>");
      Sample s;
      s.task_id = task_id;
      s.uid = origin + ":" + std::to_string(file_line);
      s.story = story.tokens;
      s.question = tokenize(parts[0]);
      auto answer_tokens = tokenize(parts[1]);
      if (answer_tokens.size() != 1)
        throw ParseError(origin + ":" + std::to_string(file_line) + ": answer '" + parts[1] +
                         "' is not a single token");
      s.answer = answer_tokens[0];
      std::istringstream sup(parts[2]);
      int ref = 0;
      while (sup >> ref) {
        auto it = story.line_to_sentence.find(ref);
        if (it == story.line_to_sentence.end())
          throw ParseError(origin + ":" + std::to_string(file_line) + ": supporting fact " +
                           std::to_string(ref) + " does not name a prior fact line");
        s.supporting_facts.push_back(it->second);
      }
      if (s.story.empty())
        throw ParseError(origin + ":" + std::to_string(file_line) + ": question with empty story");
      if (s.question.empty())
        throw ParseError(origin + ":" + std::to_string(file_line) + ": empty question");
      samples.push_back(std::move(s));
    } else {
      if (rest.find('?') != std::string::npos)
        throw ParseError(origin + ":" + std::to_string(file_line) +
                         ": '?' line without the tab-separated answer triple");
      auto toks = tokenize(rest);
      if (toks.empty())
        throw ParseError(origin + ":" + std::to_string(file_line) + ": empty fact sentence");
      story.tokens.insert(story.tokens.end(), toks.begin(), toks.end());
      story.tokens.push_back(Vocabulary::kEosToken);
      story.fact_count += 1;
      story.line_to_sentence[line_no] = story.fact_count;
    }
  }
  return samples;
}

std::vector<Sample> parse_babi_file(const std::string& path, int task_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string stem = path;
  const size_t slash = stem.find_last_of('/');
  if (slash != std::string::npos) stem = stem.substr(slash + 1);
  const size_t dot = stem.find_last_of('.');
  if (dot != std::string::npos) stem = stem.substr(0, dot);
  return parse_babi_text(buf.str(), task_id, stem);
}

Vocabulary build_vocab(const std::vector<Sample>& samples) {
  if (samples.empty()) throw UsageError("build_vocab: empty sample list");
  Vocabulary vocab;
  for (const auto& s : samples) {
    for (const auto& t : s.story) vocab.add(t);
    for (const auto& t : s.question) vocab.add(t);
    vocab.add(s.answer);
  }
  return vocab;
}

std::vector<Batch> make_batches(const std::vector<Sample>& samples, const Vocabulary& vocab,
                                int batch_size, uint64_t seed, bool mix_tasks) {
  if (batch_size < 1) throw UsageError("make_batches: batch_size must be >= 1");
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (mix_tasks) {
    Rng rng(seed);
    rng.shuffle(order);
  }

  std::vector<Batch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    Batch b;
    size_t ls = 0, lq = 0;
    for (size_t k = start; k < end; ++k) {
      ls = std::max(ls, samples[order[k]].story.size());
      lq = std::max(lq, samples[order[k]].question.size());
    }
    for (size_t k = start; k < end; ++k) {
      const Sample& s = samples[order[k]];
      std::vector<int> story(ls, Vocabulary::kPad), question(lq, Vocabulary::kPad);
      std::vector<bool> smask(ls, false), qmask(lq, false);
      for (size_t i = 0; i < s.story.size(); ++i) {
        story[i] = vocab.id(s.story[i]);
        smask[i] = true;
      }
      for (size_t i = 0; i < s.question.size(); ++i) {
        question[i] = vocab.id(s.question[i]);
        qmask[i] = true;
      }
      b.story.push_back(std::move(story));
      b.question.push_back(std::move(question));
      b.story_mask.push_back(std::move(smask));
      b.question_mask.push_back(std::move(qmask));
      b.answers.push_back(vocab.id(s.answer));
      b.task_ids.push_back(s.task_id);
      b.sample_index.push_back(order[k]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Sample> subsample(const std::vector<Sample>& samples, double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw UsageError("subsample: fraction must lie in (0, 1]");
  const size_t target = static_cast<size_t>(std::ceil(fraction * static_cast<double>(samples.size())));

  std::map<int, std::vector<size_t>> by_task;
  for (size_t i = 0; i < samples.size(); ++i) by_task[samples[i].task_id].push_back(i);

  // Per-task floor, then hand out the remainder by largest fractional part
  // (ties broken by task id) so totals are exact and tasks stay balanced.
  std::map<int, size_t> take;
  std::vector<std::pair<double, int>> remainders;
  size_t assigned = 0;
  for (const auto& [task, idx] : by_task) {
    const double exact = fraction * static_cast<double>(idx.size());
    size_t base = static_cast<size_t>(std::floor(exact));
    base = std::min(base, idx.size());
    take[task] = base;
    assigned += base;
    remainders.push_back({exact - std::floor(exact), task});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& [frac, task] : remainders) {
    if (assigned >= target) break;
    if (take[task] < by_task[task].size()) {
      take[task] += 1;
      ++assigned;
    }
  }
  // Rounding can still leave a shortfall when some task saturates.
  for (auto& [task, idx] : by_task) {
    while (assigned < target && take[task] < idx.size()) {
      take[task] += 1;
      ++assigned;
    }
  }

  Rng rng(seed);
  std::vector<size_t> chosen;
  for (auto& [task, idx] : by_task) {
    std::vector<size_t> pool = idx;
    rng.shuffle(pool);
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<long>(take[task]));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<Sample> out;
  out.reserve(chosen.size());
  for (size_t i : chosen) out.push_back(samples[i]);
  return out;
}

CorpusStats corpus_stats(const std::vector<Sample>& samples) {
  if (samples.empty()) throw UsageError("corpus_stats: empty sample list");
  CorpusStats st;
  for (int t = 1; t <= 20; ++t) st.per_task[t] = 0;
  std::set<std::string> answers;
  int below_50 = 0;
  for (const auto& s : samples) {
    st.per_task[s.task_id] += 1;
    st.sentence_length_hist[s.sentence_count()] += 1;
    const int tokens = static_cast<int>(s.story.size());
    st.token_length_hist[tokens] += 1;
    if (tokens < 50) ++below_50;
    answers.insert(s.answer);
  }
  st.answer_vocab_size = static_cast<int>(answers.size());
  st.total_samples = static_cast<int>(samples.size());
  st.fraction_token_length_below_50 =
      static_cast<double>(below_50) / static_cast<double>(samples.size());
  return st;
}

std::string CorpusStats::to_tsv() const {
  std::ostringstream os;
  os << "task\tcount\n";
  for (const auto& [task, n] : per_task) os << task << "\t" << n << "\n";
  os << "total\t" << total_samples << "\n";
  os << "answer_vocab\t" << answer_vocab_size << "\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", fraction_token_length_below_50);
  os << "frac_story_tokens_lt_50\t" << buf << "\n";
  os << "\nstory_sentences\tcount\n";
  for (const auto& [len, n] : sentence_length_hist) os << len << "\t" << n << "\n";
  os << "\nstory_tokens\tcount\n";
  for (const auto& [len, n] : token_length_hist) os << len << "\t" << n << "\n";
  return os.str();
}

}  // namespace macnet::babi
