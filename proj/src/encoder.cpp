#include "macnet/encoder.hpp"

#include <algorithm>

#include "macnet/babi.hpp"

namespace macnet {

namespace {

std::string encoder_prefix(const EncoderConfig& cfg, SeqKind kind) {
  if (cfg.shared_encoder) return "enc";
  return kind == SeqKind::Story ? "enc.story" : "enc.question";
}

void init_lstm_direction(ParameterStore& store, const std::string& prefix, int e, int h) {
  store.weight(prefix + ".Wx", 4 * h, e);
  store.weight(prefix + ".Wh", 4 * h, h);
  Tensor& b = store.bias(prefix + ".b", 4 * h);
  // Forget-gate slice starts at 1 so early steps carry state.
  for (int i = h; i < 2 * h; ++i) b.values()[static_cast<size_t>(i)] = 1.0;
}

void init_lstm_pair(ParameterStore& store, const std::string& prefix, int e, int h) {
  init_lstm_direction(store, prefix + ".fw", e, h);
  init_lstm_direction(store, prefix + ".bw", e, h);
}

}  // namespace

void init_encoder_params(ParameterStore& store, const EncoderConfig& cfg) {
  if (cfg.vocab_size < 3) throw UsageError("encoder: vocabulary not built");
  Tensor& table = store.weight("embed.table", cfg.vocab_size, cfg.embed_e);
  for (int j = 0; j < cfg.embed_e; ++j) table.values()[static_cast<size_t>(j)] = 0.0;
  if (cfg.shared_encoder) {
    init_lstm_pair(store, "enc", cfg.embed_e, cfg.lstm_h);
  } else {
    init_lstm_pair(store, "enc.story", cfg.embed_e, cfg.lstm_h);
    init_lstm_pair(store, "enc.question", cfg.embed_e, cfg.lstm_h);
  }
}

Tensor embed_tokens(ParameterStore& store, const std::vector<int>& ids) {
  return embedding_lookup(store.at("embed.table"), ids, babi::Vocabulary::kPad);
}

std::pair<Tensor, Tensor> lstm_step(ParameterStore& store, const std::string& prefix,
                                    const Tensor& x, const Tensor& h, const Tensor& c) {
  const int hs = h.shape.at(0);
  Tensor z = add(linear(store.at(prefix + ".Wx"), store.at(prefix + ".b"), x),
                 linear(store.at(prefix + ".Wh"), Tensor(), h));
  Tensor i = sigmoid(slice(z, 0, hs));
  Tensor f = sigmoid(slice(z, hs, hs));
  Tensor g = tanh_op(slice(z, 2 * hs, hs));
  Tensor o = sigmoid(slice(z, 3 * hs, hs));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh_op(c_next));
  return {h_next, c_next};
}

Encoded encode_sequence(ParameterStore& store, const EncoderConfig& cfg,
                        const std::vector<int>& ids, const std::vector<bool>& mask, SeqKind kind) {
  if (ids.empty()) throw UsageError("encode_sequence: empty sequence");
  if (ids.size() != mask.size()) throw DimensionError("encode_sequence: mask/id length mismatch");
  int len = 0;
  while (len < static_cast<int>(mask.size()) && mask[static_cast<size_t>(len)]) ++len;
  for (size_t i = static_cast<size_t>(len); i < mask.size(); ++i)
    if (mask[i]) throw UsageError("encode_sequence: PAD positions must form a suffix");
  if (len == 0) throw UsageError("encode_sequence: sequence is all PAD");

  const int L = static_cast<int>(ids.size());
  const int h = cfg.lstm_h;
  const std::string prefix = encoder_prefix(cfg, kind);

  std::vector<int> active(ids.begin(), ids.begin() + len);
  Tensor emb = embed_tokens(store, active);  // [len, e]

  std::vector<Tensor> fwd(static_cast<size_t>(len)), bwd(static_cast<size_t>(len));
  {
    Tensor hh = Tensor::zeros({h});
    Tensor cc = Tensor::zeros({h});
    for (int t = 0; t < len; ++t) {
      auto [h2, c2] = lstm_step(store, prefix + ".fw", take_row(emb, t), hh, cc);
      fwd[static_cast<size_t>(t)] = h2;
      hh = h2;
      cc = c2;
    }
  }
  {
    Tensor hh = Tensor::zeros({h});
    Tensor cc = Tensor::zeros({h});
    for (int t = len - 1; t >= 0; --t) {
      auto [h2, c2] = lstm_step(store, prefix + ".bw", take_row(emb, t), hh, cc);
      bwd[static_cast<size_t>(t)] = h2;
      hh = h2;
      cc = c2;
    }
  }

  std::vector<Tensor> rows(static_cast<size_t>(L));
  for (int t = 0; t < len; ++t)
    rows[static_cast<size_t>(t)] = concat_last_axis(fwd[static_cast<size_t>(t)], bwd[static_cast<size_t>(t)]);
  for (int t = len; t < L; ++t) rows[static_cast<size_t>(t)] = Tensor::zeros({2 * h});

  Encoded out;
  out.states = stack_rows(rows);
  out.final = concat_last_axis(fwd[static_cast<size_t>(len - 1)], bwd[0]);
  out.mask = mask;
  out.len = len;
  return out;
}

}  // namespace macnet
