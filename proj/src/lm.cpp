#include "spe/lm.hpp"

#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace spe {

namespace {
constexpr double kInitRange = 0.05;
}

const char* softmax_mode_name(SoftmaxMode m) {
  return m == SoftmaxMode::kRelaxed ? "relaxed" : "vanilla";
}

SoftmaxMode softmax_mode_from(const std::string& name) {
  if (name == "relaxed") return SoftmaxMode::kRelaxed;
  if (name == "vanilla") return SoftmaxMode::kVanilla;
  throw DataError("unknown softmax mode: " + name);
}

nlohmann::json LmConfig::to_json() const {
  return {
      {"vocab_size", vocab_size},     {"embedding_dim", embedding_dim},
      {"hidden_dim", hidden_dim},     {"num_layers", num_layers},
      {"softmax", softmax_mode_name(softmax)}, {"dropout", dropout},
  };
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.embedding_dim = j.at("embedding_dim").get<int64_t>();
  c.hidden_dim = j.at("hidden_dim").get<int64_t>();
  c.num_layers = j.at("num_layers").get<int64_t>();
  c.softmax = softmax_mode_from(j.at("softmax").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  return c;
}

std::vector<LstmLayer> make_lstm_stack(const std::string& prefix, int64_t in_dim, int64_t hidden,
                                       int64_t layers, Rng& rng) {
  std::vector<LstmLayer> stack;
  for (int64_t l = 0; l < layers; ++l) {
    const int64_t in = l == 0 ? in_dim : hidden;
    const std::string base = prefix + std::to_string(l);
    LstmLayer layer{
        Parameter(base + ".w_input", Tensor::uniform({in, 4 * hidden}, rng, -kInitRange, kInitRange)),
        Parameter(base + ".w_recur", Tensor::uniform({hidden, 4 * hidden}, rng, -kInitRange, kInitRange)),
        Parameter(base + ".bias", Tensor::zeros({4 * hidden})),
    };
    // forget-gate bias starts at 1
    for (int64_t i = hidden; i < 2 * hidden; ++i) layer.bias.value[i] = 1.0;
    stack.push_back(std::move(layer));
  }
  return stack;
}

LmParams::LmParams(LmConfig cfg, Rng& rng)
    : config(cfg),
      embedding("embedding",
                Tensor::uniform({cfg.vocab_size, cfg.embedding_dim}, rng, -kInitRange, kInitRange)),
      layers(make_lstm_stack("lstm", cfg.embedding_dim, cfg.hidden_dim, cfg.num_layers, rng)),
      proj_w("proj.w",
             Tensor::uniform({cfg.hidden_dim, cfg.embedding_dim + 1}, rng, -kInitRange, kInitRange)),
      proj_b("proj.b", Tensor::zeros({cfg.embedding_dim + 1})) {
  check(cfg.vocab_size > 0, "LmParams: vocab_size must be positive");
}

std::vector<Parameter*> LmParams::all_params() {
  std::vector<Parameter*> out{&embedding};
  for (auto& l : layers) {
    out.push_back(&l.w_input);
    out.push_back(&l.w_recur);
    out.push_back(&l.bias);
  }
  out.push_back(&proj_w);
  out.push_back(&proj_b);
  return out;
}

std::vector<const Parameter*> LmParams::all_params() const {
  auto mut = const_cast<LmParams*>(this)->all_params();
  return {mut.begin(), mut.end()};
}

void LmParams::copy_values_from(const LmParams& other) {
  check(config == other.config, "copy_values_from: config mismatch");
  auto dst = all_params();
  auto src = other.all_params();
  for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

LmState LmState::zeros(const LmConfig& cfg, int64_t rows) {
  LmState s;
  for (int64_t l = 0; l < cfg.num_layers; ++l) {
    s.h.push_back(Tensor::zeros({rows, cfg.hidden_dim}));
    s.c.push_back(Tensor::zeros({rows, cfg.hidden_dim}));
  }
  return s;
}

SweepResult lstm_sweep(Tape& tape, std::vector<LstmLayer>& layers, const std::vector<Var>& step_inputs,
                       const LmStateVars* init, double dropout_rate, bool train, Rng& rng) {
  check(!step_inputs.empty(), "lstm_sweep: empty input");
  const int64_t rows = step_inputs[0].value().rows();
  const int64_t hidden = layers[0].w_recur.value.shape()[0];

  std::vector<Var> h(layers.size()), c(layers.size());
  for (size_t l = 0; l < layers.size(); ++l) {
    if (init) {
      h[l] = init->h[l];
      c[l] = init->c[l];
    } else {
      h[l] = tape.input(Tensor::zeros({rows, hidden}));
      c[l] = tape.input(Tensor::zeros({rows, hidden}));
    }
  }

  SweepResult out;
  out.top_h.reserve(step_inputs.size());
  for (const Var& x_step : step_inputs) {
    Var x = x_step;
    for (size_t l = 0; l < layers.size(); ++l) {
      LstmLayer& layer = layers[l];
      Var gates = tape.linear2(x, tape.param(layer.w_input), h[l], tape.param(layer.w_recur),
                               tape.param(layer.bias));
      auto [h_new, c_new] = tape.lstm_cell(gates, c[l]);
      h[l] = h_new;
      c[l] = c_new;
      x = h[l];
      if (train && dropout_rate > 0 && l + 1 < layers.size()) {
        x = tape.dropout(x, dropout_rate, rng);
      }
    }
    out.top_h.push_back(x);
  }
  out.final_state.h = std::move(h);
  out.final_state.c = std::move(c);
  return out;
}

Var lm_head(Tape& tape, LmParams& params, Var h_top, bool train, Rng& rng) {
  const int64_t d = params.config.embedding_dim;
  Var h = h_top;
  if (train && params.config.dropout > 0) h = tape.dropout(h, params.config.dropout, rng);
  Var proj = tape.add_row(tape.matmul(h, tape.param(params.proj_w)), tape.param(params.proj_b));
  Var y = tape.slice_cols(proj, 0, d);
  Var logits = tape.matmul(y, tape.param(params.embedding), false, true);
  if (params.config.softmax == SoftmaxMode::kRelaxed) {
    Var t_raw = tape.slice_cols(proj, d, d + 1);
    Var tau = tape.add_const(tape.softplus(t_raw), kTemperatureFloor);
    logits = tape.div_by_col(logits, tau);
  }
  return tape.log_softmax_rows(logits);
}

Var embed_step(Tape& tape, Parameter& embedding, const std::vector<int64_t>& ids) {
  const int64_t vocab = embedding.value.shape()[0];
  for (int64_t id : ids) {
    check(0 <= id && id < vocab, "token id out of vocabulary range: " + std::to_string(id));
  }
  return tape.gather_rows(tape.param(embedding), ids);
}

namespace {

// Indices grouped by sequence length, lengths ascending, original order kept
// inside each group. Deterministic, so dropout streams reproduce.
std::map<size_t, std::vector<int64_t>> group_by_length(
    const std::vector<const std::vector<int64_t>*>& seqs) {
  std::map<size_t, std::vector<int64_t>> groups;
  for (size_t i = 0; i < seqs.size(); ++i) {
    groups[seqs[i]->size()].push_back(static_cast<int64_t>(i));
  }
  return groups;
}

// Restores row order after grouped processing: parts are concatenated in
// group order; concat_order[i] = original slot of concatenated row i.
std::vector<int64_t> inverse_order(const std::vector<int64_t>& concat_order, int64_t total) {
  std::vector<int64_t> inverse(static_cast<size_t>(total));
  for (size_t i = 0; i < concat_order.size(); ++i) {
    inverse[static_cast<size_t>(concat_order[i])] = static_cast<int64_t>(i);
  }
  return inverse;
}

Var reorder_rows(Tape& tape, const std::vector<Var>& parts, const std::vector<int64_t>& concat_order,
                 int64_t total) {
  Var stacked = parts.size() == 1 ? parts[0] : tape.concat_rows(parts);
  return tape.gather_rows(stacked, inverse_order(concat_order, total));
}

Var reorder_vec(Tape& tape, const std::vector<Var>& parts, const std::vector<int64_t>& concat_order,
                int64_t total) {
  Var stacked = parts.size() == 1 ? parts[0] : tape.concat_vec(parts);
  return tape.gather_vec(stacked, inverse_order(concat_order, total));
}

}  // namespace

ContextBatch encode_contexts(Tape& tape, LmParams& params,
                             const std::vector<const std::vector<int64_t>*>& contexts, bool train,
                             Rng& rng) {
  check(!contexts.empty(), "encode_contexts: empty context list");
  const auto groups = group_by_length(contexts);

  std::vector<std::vector<Var>> h_parts(params.layers.size()), c_parts(params.layers.size());
  std::vector<Var> top_parts;
  std::vector<int64_t> concat_order;

  for (const auto& [len, idxs] : groups) {
    const int64_t rows = static_cast<int64_t>(idxs.size());
    const size_t steps = len + 1;  // <BOS> + a
    std::vector<Var> inputs;
    inputs.reserve(steps);
    for (size_t t = 0; t < steps; ++t) {
      std::vector<int64_t> ids(static_cast<size_t>(rows));
      for (int64_t r = 0; r < rows; ++r) {
        const auto& seq = *contexts[static_cast<size_t>(idxs[static_cast<size_t>(r)])];
        ids[static_cast<size_t>(r)] = t == 0 ? Vocabulary::kBos : seq[t - 1];
      }
      inputs.push_back(embed_step(tape, params.embedding, ids));
    }
    auto sweep = lstm_sweep(tape, params.layers, inputs, nullptr, params.config.dropout, train, rng);
    top_parts.push_back(sweep.top_h.back());
    for (size_t l = 0; l < params.layers.size(); ++l) {
      h_parts[l].push_back(sweep.final_state.h[l]);
      c_parts[l].push_back(sweep.final_state.c[l]);
    }
    concat_order.insert(concat_order.end(), idxs.begin(), idxs.end());
  }

  const int64_t total = static_cast<int64_t>(contexts.size());
  ContextBatch out;
  out.count = total;
  Var ordered_top = reorder_rows(tape, top_parts, concat_order, total);
  out.boundary_logprobs = lm_head(tape, params, ordered_top, train, rng);
  for (size_t l = 0; l < params.layers.size(); ++l) {
    out.states.h.push_back(reorder_rows(tape, h_parts[l], concat_order, total));
    out.states.c.push_back(reorder_rows(tape, c_parts[l], concat_order, total));
  }
  return out;
}

Var conditional_logprobs(Tape& tape, LmParams& params, const ContextBatch& ctx,
                         const std::vector<CondRef>& combos, bool train, Rng& rng) {
  check(!combos.empty(), "conditional_logprobs: empty combo list");
  std::vector<const std::vector<int64_t>*> seqs;
  seqs.reserve(combos.size());
  for (const auto& cb : combos) {
    check(cb.tokens && !cb.tokens->empty(), "conditional_logprobs: empty sentence");
    check(0 <= cb.context_index && cb.context_index < ctx.count, "conditional_logprobs: bad context index");
    seqs.push_back(cb.tokens);
  }
  const auto groups = group_by_length(seqs);

  // boundary term: log p(b[0] | a) from the context head
  std::vector<std::pair<int64_t, int64_t>> boundary_entries;
  boundary_entries.reserve(combos.size());
  for (const auto& cb : combos) {
    boundary_entries.emplace_back(cb.context_index, (*cb.tokens)[0]);
  }
  Var total = tape.pick(ctx.boundary_logprobs, std::move(boundary_entries));

  std::vector<Var> sum_parts;
  std::vector<int64_t> concat_order;
  for (const auto& [len, idxs] : groups) {
    const int64_t rows = static_cast<int64_t>(idxs.size());

    LmStateVars init;
    std::vector<int64_t> ctx_rows(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
      ctx_rows[static_cast<size_t>(r)] = combos[static_cast<size_t>(idxs[static_cast<size_t>(r)])].context_index;
    }
    for (size_t l = 0; l < params.layers.size(); ++l) {
      init.h.push_back(tape.gather_rows(ctx.states.h[l], ctx_rows));
      init.c.push_back(tape.gather_rows(ctx.states.c[l], ctx_rows));
    }

    std::vector<Var> inputs;
    inputs.reserve(len);
    for (size_t t = 0; t < len; ++t) {
      std::vector<int64_t> ids(static_cast<size_t>(rows));
      for (int64_t r = 0; r < rows; ++r) {
        ids[static_cast<size_t>(r)] = (*seqs[static_cast<size_t>(idxs[static_cast<size_t>(r)])])[t];
      }
      inputs.push_back(embed_step(tape, params.embedding, ids));
    }
    auto sweep = lstm_sweep(tape, params.layers, inputs, &init, params.config.dropout, train, rng);

    Var group_sum;
    for (size_t t = 0; t < len; ++t) {
      Var logp = lm_head(tape, params, sweep.top_h[t], train, rng);
      std::vector<std::pair<int64_t, int64_t>> entries(static_cast<size_t>(rows));
      for (int64_t r = 0; r < rows; ++r) {
        const auto& seq = *seqs[static_cast<size_t>(idxs[static_cast<size_t>(r)])];
        entries[static_cast<size_t>(r)] = {r, t + 1 < len ? seq[t + 1] : Vocabulary::kEos};
      }
      Var picked = tape.pick(logp, std::move(entries));
      group_sum = t == 0 ? picked : tape.add(group_sum, picked);
    }
    sum_parts.push_back(group_sum);
    concat_order.insert(concat_order.end(), idxs.begin(), idxs.end());
  }

  Var ordered = reorder_vec(tape, sum_parts, concat_order, static_cast<int64_t>(combos.size()));
  return tape.add(total, ordered);
}

Var unconditional_logprobs(Tape& tape, LmParams& params,
                           const std::vector<const std::vector<int64_t>*>& sentences, bool train,
                           Rng& rng) {
  check(!sentences.empty(), "unconditional_logprobs: empty sentence list");
  for (const auto* s : sentences) check(s && !s->empty(), "unconditional_logprobs: empty sentence");
  const auto groups = group_by_length(sentences);

  std::vector<Var> sum_parts;
  std::vector<int64_t> concat_order;
  for (const auto& [len, idxs] : groups) {
    const int64_t rows = static_cast<int64_t>(idxs.size());
    const size_t steps = len + 1;  // <BOS> + b
    std::vector<Var> inputs;
    inputs.reserve(steps);
    for (size_t t = 0; t < steps; ++t) {
      std::vector<int64_t> ids(static_cast<size_t>(rows));
      for (int64_t r = 0; r < rows; ++r) {
        const auto& seq = *sentences[static_cast<size_t>(idxs[static_cast<size_t>(r)])];
        ids[static_cast<size_t>(r)] = t == 0 ? Vocabulary::kBos : seq[t - 1];
      }
      inputs.push_back(embed_step(tape, params.embedding, ids));
    }
    auto sweep = lstm_sweep(tape, params.layers, inputs, nullptr, params.config.dropout, train, rng);

    Var group_sum;
    for (size_t t = 0; t < steps; ++t) {
      Var logp = lm_head(tape, params, sweep.top_h[t], train, rng);
      std::vector<std::pair<int64_t, int64_t>> entries(static_cast<size_t>(rows));
      for (int64_t r = 0; r < rows; ++r) {
        const auto& seq = *sentences[static_cast<size_t>(idxs[static_cast<size_t>(r)])];
        entries[static_cast<size_t>(r)] = {r, t < len ? seq[t] : Vocabulary::kEos};
      }
      Var picked = tape.pick(logp, std::move(entries));
      group_sum = t == 0 ? picked : tape.add(group_sum, picked);
    }
    sum_parts.push_back(group_sum);
    concat_order.insert(concat_order.end(), idxs.begin(), idxs.end());
  }

  return reorder_vec(tape, sum_parts, concat_order, static_cast<int64_t>(sentences.size()));
}

ForwardResult lm_forward(LmParams& params, const std::vector<int64_t>& tokens, const LmState* init,
                         bool train, Rng* rng) {
  check(!tokens.empty(), "lm_forward: empty token sequence");
  check(!train || rng, "lm_forward: train mode requires an rng");
  Rng fallback(0);
  Rng& r = rng ? *rng : fallback;

  Tape tape;
  LmStateVars init_vars;
  const LmStateVars* init_ptr = nullptr;
  if (init) {
    check(static_cast<int64_t>(init->h.size()) == params.config.num_layers, "lm_forward: init layer count");
    for (int64_t l = 0; l < params.config.num_layers; ++l) {
      check(init->h[static_cast<size_t>(l)].numel() == params.config.hidden_dim &&
                init->c[static_cast<size_t>(l)].numel() == params.config.hidden_dim,
            "lm_forward: init state shape mismatch");
      Tensor h({1, params.config.hidden_dim});
      Tensor c({1, params.config.hidden_dim});
      std::copy(init->h[static_cast<size_t>(l)].data(),
                init->h[static_cast<size_t>(l)].data() + params.config.hidden_dim, h.data());
      std::copy(init->c[static_cast<size_t>(l)].data(),
                init->c[static_cast<size_t>(l)].data() + params.config.hidden_dim, c.data());
      init_vars.h.push_back(tape.input(std::move(h)));
      init_vars.c.push_back(tape.input(std::move(c)));
    }
    init_ptr = &init_vars;
  }

  std::vector<Var> inputs;
  inputs.reserve(tokens.size());
  for (int64_t tok : tokens) inputs.push_back(embed_step(tape, params.embedding, {tok}));
  auto sweep = lstm_sweep(tape, params.layers, inputs, init_ptr, params.config.dropout, train, r);

  ForwardResult out;
  for (const Var& h : sweep.top_h) {
    Var logp = lm_head(tape, params, h, train, r);
    Tensor row({params.config.vocab_size});
    std::copy(logp.value().data(), logp.value().data() + params.config.vocab_size, row.data());
    out.step_log_probs.push_back(std::move(row));
  }
  for (int64_t l = 0; l < params.config.num_layers; ++l) {
    out.final_state.h.push_back(sweep.final_state.h[static_cast<size_t>(l)].value());
    out.final_state.c.push_back(sweep.final_state.c[static_cast<size_t>(l)].value());
  }
  return out;
}

double temperature_of(double t_raw) {
  const double sp = t_raw > 0 ? t_raw + std::log1p(std::exp(-t_raw)) : std::log1p(std::exp(t_raw));
  return sp + kTemperatureFloor;
}

Tensor softmax_with_temperature(const Tensor& logits, double tau) {
  check(tau > 0, "softmax temperature must be positive");
  Tensor out = logits;
  double mx = out[0] / tau;
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) mx = std::max(mx, out[i] / tau);
  double sum = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = std::exp(out[i] / tau - mx);
    sum += out[i];
  }
  for (int64_t i = 0; i < n; ++i) out[i] /= sum;
  return out;
}

Tensor relaxed_softmax(const Tensor& logits, double t_raw) {
  return softmax_with_temperature(logits, temperature_of(t_raw));
}

}  // namespace spe
