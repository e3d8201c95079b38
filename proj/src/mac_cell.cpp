#include "macnet/mac_cell.hpp"

namespace macnet {

void init_cell_params(ParameterStore& store, const CellConfig& cfg) {
  if (cfg.p < 1) throw UsageError("cell: step count p must be >= 1");
  if (cfg.d < 2 || cfg.d % 2 != 0) throw UsageError("cell: state size d must be even");
  const int d = cfg.d;
  for (int i = 1; i <= cfg.p; ++i) {
    const std::string name = "mac.q." + std::to_string(i);
    store.weight(name + ".W", d, cfg.question_proj_d_form ? d : 2 * d);
    store.bias(name + ".b", d);
  }
  store.weight("mac.ctrl.cq.W", d, 3 * d);
  store.bias("mac.ctrl.cq.b", d);
  store.weight("mac.ctrl.attn.W", 1, d);
  store.bias("mac.ctrl.attn.b", 1);

  store.weight("mac.read.story.W", d, d);
  store.bias("mac.read.story.b", d);
  store.weight("mac.read.mem.W", d, d);
  store.bias("mac.read.mem.b", d);
  store.weight("mac.read.inter.W", d, d);
  store.bias("mac.read.inter.b", d);
  store.weight("mac.read.reread.W", d, 2 * d);
  store.bias("mac.read.reread.b", d);
  store.weight("mac.read.attn.W", 1, d);
  store.bias("mac.read.attn.b", 1);

  store.weight("mac.write.info.W", d, 2 * d);
  store.bias("mac.write.info.b", d);
  store.weight("mac.write.gate.W", 1, d);
  Tensor& gb = store.bias("mac.write.gate.b", 1);
  gb.values()[0] = 1.0;  // favor carry-over early in training
  store.weight("mac.write.sa_attn.W", 1, d);
  store.bias("mac.write.sa_attn.b", 1);
  store.weight("mac.write.sa_out.W", d, d);
  store.weight("mac.write.info_out.W", d, d);
  store.bias("mac.write.out.b", d);
}

Tensor question_step(ParameterStore& store, const CellConfig& cfg, int step, const Tensor& q_prev,
                     const Tensor& m_prev) {
  if (step < 1 || step > cfg.p)
    throw UsageError("question_step: step " + std::to_string(step) + " outside 1.." +
                     std::to_string(cfg.p));
  const std::string name = "mac.q." + std::to_string(step);
  if (cfg.question_proj_d_form) return apply_linear(store, q_prev, name, cfg.d);
  return apply_linear(store, concat_last_axis(q_prev, m_prev), name, cfg.d);
}

std::pair<Tensor, Tensor> control_unit(ParameterStore& store, const CellConfig& cfg,
                                       const Tensor& c_prev, const Tensor& q_i,
                                       const Tensor& m_prev, const Tensor& cw,
                                       const std::vector<bool>& q_mask) {
  const Tensor m_used =
      cfg.use_prev_memory_in_control ? m_prev : Tensor::zeros({cfg.d});
  Tensor cq = apply_linear(store, concat_last_axis(concat_last_axis(c_prev, q_i), m_used),
                           "mac.ctrl.cq", cfg.d);
  Tensor ca = reshape(apply_linear(store, mul_rows(cw, cq), "mac.ctrl.attn", 1),
                      {cw.shape[0]});
  Tensor cv = softmax_masked(ca, q_mask);
  Tensor c_i = weighted_sum(cv, cw);
  return {c_i, cv};
}

std::pair<Tensor, Tensor> read_unit(ParameterStore& store, const CellConfig& cfg,
                                    const Tensor& m_prev, const Tensor& c_i, const Tensor& S,
                                    const std::vector<bool>& s_mask) {
  Tensor s_proj = apply_linear(store, S, "mac.read.story", cfg.d);
  Tensor m_proj = apply_linear(store, m_prev, "mac.read.mem", cfg.d);
  Tensor inter = apply_linear(store, add_rows(s_proj, m_proj), "mac.read.inter", cfg.d);
  Tensor combined = cfg.reread_story
                        ? apply_linear(store, concat_last_axis(inter, S), "mac.read.reread", cfg.d)
                        : inter;
  Tensor ra = reshape(apply_linear(store, mul_rows(combined, c_i), "mac.read.attn", 1),
                      {S.shape[0]});
  Tensor rv = softmax_masked(ra, s_mask);
  Tensor r_i = weighted_sum(rv, S);
  return {r_i, rv};
}

WriteResult write_unit(ParameterStore& store, const CellConfig& cfg, const Tensor& m_prev,
                       const Tensor& r_i, const Tensor& c_i,
                       const std::vector<Tensor>& memory_history,
                       const std::vector<Tensor>& control_history) {
  if (memory_history.size() != control_history.size())
    throw UsageError("write_unit: history lengths differ");

  Tensor m_info = apply_linear(store, concat_last_axis(m_prev, r_i), "mac.write.info", cfg.d);

  WriteResult out;
  Tensor m_cand = m_info;
  if (cfg.use_graph_reasoning && !control_history.empty()) {
    Tensor C = stack_rows(control_history);
    const int k = C.shape[0];
    Tensor sa_logits =
        reshape(apply_linear(store, mul_rows(C, c_i), "mac.write.sa_attn", 1), {k});
    Tensor sa = softmax_masked(sa_logits, std::vector<bool>(static_cast<size_t>(k), true));
    Tensor m_sa = weighted_sum(sa, stack_rows(memory_history));
    m_cand = add(add(linear(store.at("mac.write.sa_out.W"), Tensor(), m_sa),
                     linear(store.at("mac.write.info_out.W"), Tensor(), m_info)),
                 store.at("mac.write.out.b"));
    out.sa = sa;
  }

  if (cfg.use_gate) {
    Tensor g = sigmoid(apply_linear(store, c_i, "mac.write.gate", 1));
    out.m = add(scale_by(g, m_prev), scale_by(one_minus(g), m_cand));
    out.gate = g;
  } else {
    out.m = m_cand;
    out.gate = Tensor::scalar(0.0);
  }
  return out;
}

StepResult mac_step(ParameterStore& store, const CellConfig& cfg, const MACState& state,
                    const Tensor& q_prev, const Encoded& story, const Encoded& question,
                    std::vector<Tensor>& control_history, std::vector<Tensor>& memory_history) {
  if (state.i >= cfg.p)
    throw UsageError("mac_step: step " + std::to_string(state.i + 1) + " exceeds p=" +
                     std::to_string(cfg.p));
  const int step = state.i + 1;
  Tensor q_i = question_step(store, cfg, step, q_prev, state.m);
  auto [c_i, cv] = control_unit(store, cfg, state.c, q_i, state.m, question.states, question.mask);
  auto [r_i, rv] = read_unit(store, cfg, state.m, c_i, story.states, story.mask);
  WriteResult w = write_unit(store, cfg, state.m, r_i, c_i, memory_history, control_history);

  control_history.push_back(c_i);
  memory_history.push_back(w.m);

  StepResult out;
  out.state = {c_i, w.m, step};
  out.q = q_i;
  out.trace.cv = cv.values();
  out.trace.rv = rv.values();
  out.trace.gate = w.gate.item();
  if (w.sa.defined()) out.trace.sa = w.sa.values();
  return out;
}

}  // namespace macnet
