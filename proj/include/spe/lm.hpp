#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "spe/tape.hpp"
#include "spe/vocab.hpp"

namespace spe {

enum class SoftmaxMode { kRelaxed, kVanilla };

const char* softmax_mode_name(SoftmaxMode m);
SoftmaxMode softmax_mode_from(const std::string& name);

struct LmConfig {
  int64_t vocab_size = 0;
  int64_t embedding_dim = 200;
  int64_t hidden_dim = 600;
  int64_t num_layers = 2;
  SoftmaxMode softmax = SoftmaxMode::kRelaxed;
  double dropout = 0.5;

  nlohmann::json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
  bool operator==(const LmConfig&) const = default;
};

struct LstmLayer {
  Parameter w_input;  // [in x 4H], gate order i, f, g, o
  Parameter w_recur;  // [H x 4H]
  Parameter bias;     // [4H], forget slice starts at 1
};

std::vector<LstmLayer> make_lstm_stack(const std::string& prefix, int64_t in_dim, int64_t hidden,
                                       int64_t layers, Rng& rng);

// Word-level recurrent LM: trainable embedding, two gated recurrent layers,
// linear projection with one extra temperature node, output logits against
// the transposed input embedding (tied; no separate output matrix).
class LmParams {
 public:
  LmParams(LmConfig cfg, Rng& rng);

  LmConfig config;
  Parameter embedding;  // [V x d_emb]
  std::vector<LstmLayer> layers;
  Parameter proj_w;  // [H x (d_emb + 1)]
  Parameter proj_b;  // [d_emb + 1]

  std::vector<Parameter*> all_params();
  std::vector<const Parameter*> all_params() const;

  void copy_values_from(const LmParams& other);
};

// Per-layer recurrent state. Row r of each tensor belongs to sequence r.
struct LmState {
  std::vector<Tensor> h;
  std::vector<Tensor> c;

  static LmState zeros(const LmConfig& cfg, int64_t rows = 1);
};

struct LmStateVars {
  std::vector<Var> h;
  std::vector<Var> c;
};

// --- graph builders (shared by training, losses and scoring) --------------

struct SweepResult {
  std::vector<Var> top_h;  // per step, [R x H], before head dropout
  LmStateVars final_state;
};

// Runs the stack over same-length rows of already-embedded inputs.
SweepResult lstm_sweep(Tape& tape, std::vector<LstmLayer>& layers, const std::vector<Var>& step_inputs,
                       const LmStateVars* init, double dropout_rate, bool train, Rng& rng);

// Dropout, projection, temperature, tied-embedding logits, log softmax.
Var lm_head(Tape& tape, LmParams& params, Var h_top, bool train, Rng& rng);

// Embeds one time step of token ids (one id per row).
Var embed_step(Tape& tape, Parameter& embedding, const std::vector<int64_t>& ids);

struct ContextBatch {
  Var boundary_logprobs;  // [B x V]: next-token distribution after each context
  LmStateVars states;     // final states, row i = context i
  int64_t count = 0;
};

// Consumes <BOS> + a for every context (grouped by length internally).
ContextBatch encode_contexts(Tape& tape, LmParams& params,
                             const std::vector<const std::vector<int64_t>*>& contexts, bool train,
                             Rng& rng);

struct CondRef {
  int64_t context_index;
  const std::vector<int64_t>* tokens;  // the b sentence
};

// log p(b | a) per combo: boundary pick of b[0] plus the run over b with the
// context's final state, scoring b[1..] and <EOS>. Output order = input order.
Var conditional_logprobs(Tape& tape, LmParams& params, const ContextBatch& ctx,
                         const std::vector<CondRef>& combos, bool train, Rng& rng);

// log p(b) per sentence from the zero state: <BOS> + b scoring b and <EOS>.
Var unconditional_logprobs(Tape& tape, LmParams& params,
                           const std::vector<const std::vector<int64_t>*>& sentences, bool train,
                           Rng& rng);

// --- single-sequence API ---------------------------------------------------

struct ForwardResult {
  std::vector<Tensor> step_log_probs;  // step i: log p(w_{i+1} | w_1..w_i, init)
  LmState final_state;
};

// Plain forward pass. Dropout is active only in train mode (rng required).
ForwardResult lm_forward(LmParams& params, const std::vector<int64_t>& tokens, const LmState* init,
                         bool train = false, Rng* rng = nullptr);

// --- relaxed softmax --------------------------------------------------------

inline constexpr double kTemperatureFloor = 1e-2;

double temperature_of(double t_raw);  // softplus(t_raw) + floor
Tensor softmax_with_temperature(const Tensor& logits, double tau);
Tensor relaxed_softmax(const Tensor& logits, double t_raw);

}  // namespace spe
