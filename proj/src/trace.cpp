#include "macnet/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace macnet {

namespace {

double round_sig6(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return std::strtod(buf, nullptr);
}

nlohmann::json round_vec(const std::vector<double>& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : v) arr.push_back(round_sig6(x));
  return arr;
}

}  // namespace

ReasoningTrace record_trace(const Model& model, const babi::Sample& sample,
                            const Model::Forward& forward) {
  if (!forward.trace_captured)
    throw UsageError("record_trace: forward pass ran without trace capture");
  ReasoningTrace t;
  t.sample_id = sample.uid;
  t.task_id = sample.task_id;
  t.story_tokens = sample.story;
  t.question_tokens = sample.question;
  for (size_t i = 0; i < sample.story.size(); ++i)
    if (sample.story[i] == babi::Vocabulary::kEosToken) t.sentence_ends.push_back(static_cast<int>(i));
  t.gold = sample.answer;
  const auto& logits = forward.logits.values();
  const int arg =
      static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  t.predicted = model.vocab().token(arg);
  t.supporting_facts = sample.supporting_facts;

  for (const StepTrace& s : forward.steps) {
    StepTrace trimmed;
    trimmed.cv.assign(s.cv.begin(), s.cv.begin() + static_cast<long>(sample.question.size()));
    trimmed.rv.assign(s.rv.begin(), s.rv.begin() + static_cast<long>(sample.story.size()));
    trimmed.gate = s.gate;
    trimmed.sa = s.sa;
    t.steps.push_back(std::move(trimmed));
  }
  return t;
}

std::string trace_to_line(const ReasoningTrace& trace) {
  nlohmann::json j;
  j["schema_version"] = trace.schema_version;
  j["sample_id"] = trace.sample_id;
  j["task_id"] = trace.task_id;
  j["story"] = trace.story_tokens;
  j["sentence_ends"] = trace.sentence_ends;
  j["question"] = trace.question_tokens;
  j["predicted"] = trace.predicted;
  j["gold"] = trace.gold;
  j["supporting_facts"] = trace.supporting_facts;
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"cv", round_vec(s.cv)},
                     {"rv", round_vec(s.rv)},
                     {"gate", round_sig6(s.gate)},
                     {"sa", round_vec(s.sa)}});
  }
  j["steps"] = steps;
  return j.dump();
}

ReasoningTrace trace_from_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace line is not valid JSON: ") + e.what());
  }
  ReasoningTrace t;
  try {
    t.schema_version = j.at("schema_version").get<int>();
    if (t.schema_version != 1)
      throw FormatError("unsupported trace schema version " +
                        std::to_string(t.schema_version));
    t.sample_id = j.at("sample_id").get<std::string>();
    t.task_id = j.at("task_id").get<int>();
    t.story_tokens = j.at("story").get<std::vector<std::string>>();
    t.sentence_ends = j.at("sentence_ends").get<std::vector<int>>();
    t.question_tokens = j.at("question").get<std::vector<std::string>>();
    t.predicted = j.at("predicted").get<std::string>();
    t.gold = j.at("gold").get<std::string>();
    t.supporting_facts = j.at("supporting_facts").get<std::vector<int>>();
    for (const auto& s : j.at("steps")) {
      StepTrace step;
      step.cv = s.at("cv").get<std::vector<double>>();
      step.rv = s.at("rv").get<std::vector<double>>();
      step.gate = s.at("gate").get<double>();
      step.sa = s.at("sa").get<std::vector<double>>();
      t.steps.push_back(std::move(step));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trace field missing or mistyped: ") + e.what());
  }
  return t;
}

void export_traces(const std::vector<ReasoningTrace>& traces, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write trace file '" + path + "'");
  for (const auto& t : traces) out << trace_to_line(t) << "\n";
  out.flush();
  if (!out) throw IoError("write failed for trace file '" + path + "'");
}

std::vector<ReasoningTrace> import_traces(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace file '" + path + "'");
  std::vector<ReasoningTrace> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(trace_from_line(line));
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<double> aggregate_by_sentence(const ReasoningTrace& trace,
                                          const std::vector<double>& rv) {
  if (rv.size() != trace.story_tokens.size())
    throw DimensionError("aggregate_by_sentence: attention/token length mismatch");
  std::vector<double> out;
  size_t start = 0;
  for (int end : trace.sentence_ends) {
    double total = 0.0;
    for (size_t i = start; i <= static_cast<size_t>(end); ++i) total += rv[i];
    out.push_back(total);
    start = static_cast<size_t>(end) + 1;
  }
  // Tokens after the final boundary (none in well-formed stories) fold into
  // the last sentence so mass is preserved exactly.
  if (start < rv.size() && !out.empty()) {
    for (size_t i = start; i < rv.size(); ++i) out.back() += rv[i];
  }
  return out;
}

namespace {

std::string fmt(double v, const char* spec = "%.2f") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::vector<std::string> sentence_texts(const ReasoningTrace& trace) {
  std::vector<std::string> out;
  std::string cur;
  for (const auto& tok : trace.story_tokens) {
    if (tok == babi::Vocabulary::kEosToken) {
      out.push_back(cur);
      cur.clear();
      continue;
    }
    if (!cur.empty()) cur += ' ';
    cur += tok;
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

std::string render_text(const ReasoningTrace& trace) {
  std::ostringstream os;
  os << "sample " << trace.sample_id << "  task " << trace.task_id << "\n";
  os << "question: " << babi::detokenize(trace.question_tokens) << "\n";
  os << "predicted: " << trace.predicted << "   gold: " << trace.gold << "\n";
  const auto sentences = sentence_texts(trace);

  for (size_t step = 0; step < trace.steps.size(); ++step) {
    const StepTrace& s = trace.steps[step];
    os << std::string(60, '-') << "\n";
    os << "step " << (step + 1) << "  gate " << fmt(s.gate) << "\n";

    const size_t q_max =
        std::max_element(s.cv.begin(), s.cv.end()) - s.cv.begin();
    os << "  question:";
    for (size_t i = 0; i < trace.question_tokens.size(); ++i) {
      os << " " << trace.question_tokens[i] << "[" << (i == q_max ? "*" : "")
         << fmt(s.cv[i]) << "]";
    }
    os << "\n";

    const auto agg = aggregate_by_sentence(trace, s.rv);
    std::vector<size_t> order(agg.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return agg[a] > agg[b]; });
    os << "  story (sentences by attention):\n";
    for (size_t i : order) {
      os << "    " << fmt(agg[i]) << "  #" << (i + 1) << " " << sentences[i] << "\n";
    }
    if (!s.sa.empty()) {
      os << "  memory self-attention:";
      for (size_t i = 0; i < s.sa.size(); ++i)
        os << " m" << (i + 1) << "[" << fmt(s.sa[i]) << "]";
      os << "\n";
    }
  }
  return os.str();
}

namespace {

void svg_panel(std::ostringstream& os, const std::string& title,
               const std::vector<std::string>& tokens,
               const std::vector<std::vector<double>>& rows, int x0, int y0, int cell,
               int label_h) {
  os << "<text x=\"" << x0 << "\" y=\"" << (y0 - 8) << "\" font-size=\"12\">" << title
     << "</text>\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    os << "<text x=\"" << (x0 - 6) << "\" y=\""
       << (y0 + static_cast<int>(r) * cell + cell / 2 + 4)
       << "\" font-size=\"10\" text-anchor=\"end\">s" << (r + 1) << "</text>\n";
    for (size_t c = 0; c < rows[r].size(); ++c) {
      os << "<rect x=\"" << (x0 + static_cast<int>(c) * cell) << "\" y=\""
         << (y0 + static_cast<int>(r) * cell) << "\" width=\"" << cell << "\" height=\"" << cell
         << "\" fill=\"#20609f\" fill-opacity=\"" << fmt(rows[r][c], "%.6f")
         << "\" stroke=\"#cccccc\" stroke-width=\"0.5\"/>\n";
    }
  }
  const int ty = y0 + static_cast<int>(rows.size()) * cell + label_h;
  for (size_t c = 0; c < tokens.size(); ++c) {
    std::string tok = tokens[c];
    std::string escaped;
    for (char ch : tok) {
      if (ch == '<')
        escaped += "&lt;";
      else if (ch == '>')
        escaped += "&gt;";
      else if (ch == '&')
        escaped += "&amp;";
      else
        escaped += ch;
    }
    os << "<text x=\"" << (x0 + static_cast<int>(c) * cell + cell / 2) << "\" y=\"" << ty
       << "\" font-size=\"9\" text-anchor=\"start\" transform=\"rotate(60 "
       << (x0 + static_cast<int>(c) * cell + cell / 2) << " " << ty << ")\">" << escaped
       << "</text>\n";
  }
}

}  // namespace

std::string render_svg_string(const ReasoningTrace& trace) {
  const int cell = 16;
  const int x0 = 40;
  const int label_h = 14;
  const int label_space = 90;
  const int q_w = x0 + cell * static_cast<int>(trace.question_tokens.size()) + 20;
  const int s_w = x0 + cell * static_cast<int>(trace.story_tokens.size()) + 20;
  const int width = std::max(q_w, s_w) + 20;
  const int panel_h = cell * static_cast<int>(trace.steps.size()) + label_space;
  const int height = 2 * (panel_h + 40) + 20;

  std::vector<std::vector<double>> q_rows, s_rows;
  for (const auto& s : trace.steps) {
    q_rows.push_back(s.cv);
    s_rows.push_back(s.rv);
  }

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
     << "\" fill=\"#ffffff\"/>\n";
  svg_panel(os, "question attention (" + trace.sample_id + ")", trace.question_tokens, q_rows, x0,
            30, cell, label_h);
  svg_panel(os, "story attention", trace.story_tokens, s_rows, x0, panel_h + 70, cell, label_h);
  os << "</svg>\n";
  return os.str();
}

void render_svg(const ReasoningTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write svg '" + path + "'");
  out << render_svg_string(trace);
  out.flush();
  if (!out) throw IoError("write failed for svg '" + path + "'");
}

std::optional<double> support_alignment(const ReasoningTrace& trace) {
  if (trace.supporting_facts.empty()) return std::nullopt;
  if (trace.steps.empty()) return std::nullopt;
  int hits = 0;
  for (const auto& s : trace.steps) {
    const auto agg = aggregate_by_sentence(trace, s.rv);
    if (agg.empty()) return std::nullopt;
    const int arg = static_cast<int>(
        std::max_element(agg.begin(), agg.end()) - agg.begin());
    const int sentence_1based = arg + 1;
    if (std::find(trace.supporting_facts.begin(), trace.supporting_facts.end(), sentence_1based) !=
        trace.supporting_facts.end())
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(trace.steps.size());
}

double support_chance_rate(const ReasoningTrace& trace) {
  const size_t sentences = trace.sentence_ends.size();
  if (sentences == 0) return 0.0;
  return static_cast<double>(trace.supporting_facts.size()) / static_cast<double>(sentences);
}

}  // namespace macnet
