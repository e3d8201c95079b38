#pragma once

#include <utility>
#include <vector>

#include "macnet/tensor.hpp"

namespace macnet {

struct EncoderConfig {
  int vocab_size = 0;
  int embed_e = 20;
  int lstm_h = 20;            // per direction; word states are 2h wide
  bool shared_encoder = true; // one LSTM for story and question
};

enum class SeqKind { Story, Question };

struct Encoded {
  Tensor states;           // [L, 2h], PAD rows zero
  Tensor final;            // [2h] = [fwd at last unpadded; bwd at position 0]
  std::vector<bool> mask;  // true on non-PAD positions
  int len = 0;             // unpadded length
};

// Creates the embedding table and LSTM parameters in a fixed order
// (forget-gate bias slice set to 1, PAD embedding row zeroed).
void init_encoder_params(ParameterStore& store, const EncoderConfig& cfg);

// Row lookup into the embedding table; the PAD row stays zero and frozen.
Tensor embed_tokens(ParameterStore& store, const std::vector<int>& ids);

// One LSTM recurrence with the parameters under `prefix` (gate order
// input/forget/candidate/output). Returns (h', c').
std::pair<Tensor, Tensor> lstm_step(ParameterStore& store, const std::string& prefix,
                                    const Tensor& x, const Tensor& h, const Tensor& c);

// Bidirectional encoding over the unpadded prefix of `ids`; PAD tail rows of
// `states` are zero and never touch the recurrences.
Encoded encode_sequence(ParameterStore& store, const EncoderConfig& cfg,
                        const std::vector<int>& ids, const std::vector<bool>& mask, SeqKind kind);

}  // namespace macnet
