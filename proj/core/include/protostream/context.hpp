#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "protostream/memory.hpp"
#include "protostream/params.hpp"
#include "protostream/tape.hpp"

namespace protostream {

using StagedParams = std::unordered_map<std::string, Tape::NodeId>;

// ---------------------------------------------------------------------------
// LSTM cell. Parameters live under <prefix>/{wx,wh,b}_{i,f,o,g}; the forget
// gate bias starts at 1.0, everything else at fan-in uniform / zero.

struct LstmSpec {
  int input_dim = 0;
  int hidden_dim = 0;
};

void add_lstm_params(ParameterStore& store, const std::string& prefix,
                     const LstmSpec& spec, RngStream& rng);

struct LstmState {
  Tape::NodeId h = kNoNode;
  Tape::NodeId c = kNoNode;
};

LstmState lstm_zero_state(Tape& tape, int hidden_dim);

LstmState lstm_step(Tape& tape, const StagedParams& staged,
                    const std::string& prefix, Tape::NodeId x,
                    const LstmState& state);

// ---------------------------------------------------------------------------
// Control head: one affine map from the LSTM output to
// [h_ctx (F), m_raw (F), beta_r, gamma_r_raw, beta_w, gamma_w_raw].
// The beta bias entries start at 10.0; gammas are softplus(raw + 1).

struct ControlHeadSpec {
  int lstm_hidden = 0;
  int feature_dim = 0;
  int output_dim() const { return 2 * feature_dim + 4; }
};

void add_control_head_params(ParameterStore& store, const std::string& prefix,
                             const ControlHeadSpec& spec, RngStream& rng);

struct ControlStep {
  Tape::NodeId context_bias = kNoNode;  // additive bias on the embedding
  ControlNodes control;                 // metric + thresholds/temperatures
};

ControlStep control_step(Tape& tape, const StagedParams& staged,
                         const std::string& prefix, const ControlHeadSpec& spec,
                         Tape::NodeId lstm_out);

// Learned scalar controls for learners without the contextual head. Stored
// raw; betas start at 10.0 and gammas pass through softplus(raw + 1) so the
// two parameterizations match exactly. Learners that never write (the
// exemplar store) only carry the read pair.
void add_scalar_control_params(ParameterStore& store, const std::string& prefix,
                               bool write_pair = true);
ControlNodes scalar_controls(Tape& tape, const StagedParams& staged,
                             const std::string& prefix,
                             bool write_pair = true);

// ---------------------------------------------------------------------------
// Feature encoder: affine+tanh stack with a linear output layer, or identity
// for pre-embedded inputs.

struct EncoderSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;
  bool identity = false;
};

void add_encoder_params(ParameterStore& store, const std::string& prefix,
                        const EncoderSpec& spec, RngStream& rng);

Tape::NodeId encode(Tape& tape, const StagedParams& staged,
                    const std::string& prefix, const EncoderSpec& spec,
                    Tape::NodeId x);

}  // namespace protostream
