#pragma once

#include <utility>
#include <vector>

#include "macnet/encoder.hpp"
#include "macnet/tensor.hpp"

namespace macnet {

struct CellConfig {
  int d = 40;  // control/memory width; must equal 2 * lstm_h
  int p = 2;   // reasoning steps
  bool use_prev_memory_in_control = true;  // off: ablation "no_prev_memory"
  bool reread_story = true;                // off: ablation "no_story_reread"
  bool use_graph_reasoning = true;         // off: ablation "no_graph"
  bool use_gate = true;
  // Alternative question projection q_i = W q_{i-1} + b instead of the
  // default W [q_{i-1}; m_{i-1}] + b.
  bool question_proj_d_form = false;
};

struct MACState {
  Tensor c;  // control vector [d]
  Tensor m;  // memory vector [d]
  int i = 0;

  static MACState initial(int d) { return {Tensor::zeros({d}), Tensor::zeros({d}), 0}; }
};

// Per-step attention record. cv/rv cover the padded lengths they were
// computed over (masked positions are exactly zero); sa covers steps
// 1..i-1 and is empty at the first step or with graph reasoning off.
struct StepTrace {
  std::vector<double> cv;
  std::vector<double> rv;
  double gate = 0.0;
  std::vector<double> sa;
};

// Creates all cell and classifier parameters in a fixed order. Cell
// parameters are shared across steps except the per-step question
// projection. The write gate bias starts at +1.
void init_cell_params(ParameterStore& store, const CellConfig& cfg);

// Per-step linear projection feeding the control unit.
Tensor question_step(ParameterStore& store, const CellConfig& cfg, int step, const Tensor& q_prev,
                     const Tensor& m_prev);

// Attention over question word states; returns (c_i, cv).
std::pair<Tensor, Tensor> control_unit(ParameterStore& store, const CellConfig& cfg,
                                       const Tensor& c_prev, const Tensor& q_i,
                                       const Tensor& m_prev, const Tensor& cw,
                                       const std::vector<bool>& q_mask);

// Two-stage attention over story states; returns (r_i, rv).
std::pair<Tensor, Tensor> read_unit(ParameterStore& store, const CellConfig& cfg,
                                    const Tensor& m_prev, const Tensor& c_i, const Tensor& S,
                                    const std::vector<bool>& s_mask);

struct WriteResult {
  Tensor m;     // new memory [d]
  Tensor gate;  // scalar in (0,1); 0 when the gate is disabled
  Tensor sa;    // [i-1] self-attention weights; undefined when empty
};

// Candidate memory from (m_prev, r_i), optional self-attention over earlier
// memories, optional gated carry-over of m_prev.
WriteResult write_unit(ParameterStore& store, const CellConfig& cfg, const Tensor& m_prev,
                       const Tensor& r_i, const Tensor& c_i,
                       const std::vector<Tensor>& memory_history,
                       const std::vector<Tensor>& control_history);

struct StepResult {
  MACState state;
  Tensor q;  // q_i, input to the next step
  StepTrace trace;
};

// One full reasoning step; appends c_i/m_i to the histories.
StepResult mac_step(ParameterStore& store, const CellConfig& cfg, const MACState& state,
                    const Tensor& q_prev, const Encoded& story, const Encoded& question,
                    std::vector<Tensor>& control_history, std::vector<Tensor>& memory_history);

}  // namespace macnet
