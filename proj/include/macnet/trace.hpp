#pragma once

#include <optional>
#include <string>
#include <vector>

#include "macnet/model.hpp"

namespace macnet {

// Full per-sample reasoning record: the inputs as text, every step's
// attention distributions, and the outcome. The story token list includes
// the sentence-boundary markers the model attends over.
struct ReasoningTrace {
  int schema_version = 1;
  std::string sample_id;
  int task_id = 0;
  std::vector<std::string> story_tokens;
  std::vector<int> sentence_ends;  // 0-based story index of each boundary marker
  std::vector<std::string> question_tokens;
  std::vector<StepTrace> steps;
  std::string predicted;
  std::string gold;
  std::vector<int> supporting_facts;  // 1-based sentence indices; may be empty
};

// Assembles a trace from a forward pass run with capture enabled; attention
// vectors are trimmed to the sample's true lengths (PAD removed).
ReasoningTrace record_trace(const Model& model, const babi::Sample& sample,
                            const Model::Forward& forward);

// Line-delimited JSON, one trace per line, attention values rounded to six
// significant digits. Schema version is embedded in every record.
void export_traces(const std::vector<ReasoningTrace>& traces, const std::string& path);
std::string trace_to_line(const ReasoningTrace& trace);
ReasoningTrace trace_from_line(const std::string& line);
// Single streaming pass over the file.
std::vector<ReasoningTrace> import_traces(const std::string& path);

// Sums a word-level story attention vector within sentence boundaries;
// preserves total mass.
std::vector<double> aggregate_by_sentence(const ReasoningTrace& trace,
                                          const std::vector<double>& rv);

// Monospace rendering: per step, bracketed question attentions and story
// sentences ranked by aggregated attention.
std::string render_text(const ReasoningTrace& trace);

// Deterministic standalone SVG heatmap: one panel for question attention,
// one for story attention; rows are steps, cell opacity is the weight.
std::string render_svg_string(const ReasoningTrace& trace);
void render_svg(const ReasoningTrace& trace, const std::string& path);

// Fraction of steps whose argmax story sentence is an annotated supporting
// fact; nullopt when the sample carries no annotations.
std::optional<double> support_alignment(const ReasoningTrace& trace);

// Chance rate of hitting a supporting sentence by uniform guessing.
double support_chance_rate(const ReasoningTrace& trace);

}  // namespace macnet
