#include "spe/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "spe/adam.hpp"

namespace spe {

std::vector<std::vector<const std::vector<int64_t>*>> batch_negatives(
    const std::vector<const SentencePair*>& batch) {
  const int64_t b = static_cast<int64_t>(batch.size());
  check_data(b >= 2, "batch_negatives: batch NCE needs at least two pairs");
  std::vector<std::vector<const std::vector<int64_t>*>> out(batch.size());
  for (int64_t i = 0; i < b; ++i) {
    auto& negs = out[static_cast<size_t>(i)];
    negs.reserve(static_cast<size_t>(b - 1));
    for (int64_t j = 0; j < b; ++j) {
      if (j != i) negs.push_back(&batch[static_cast<size_t>(j)]->b);
    }
  }
  return out;
}

MaskedSentence mask_tokens(const std::vector<int64_t>& sentence, double rate, Rng& rng) {
  check(!sentence.empty(), "mask_tokens: empty sentence");
  check(0.0 <= rate && rate <= 1.0, "mask_tokens: rate must be in [0, 1]");
  MaskedSentence out;
  out.tokens = sentence;
  for (size_t i = 0; i < sentence.size(); ++i) {
    if (rng.bernoulli(rate)) {
      out.positions.push_back(static_cast<int64_t>(i));
      out.originals.push_back(sentence[i]);
      out.tokens[i] = Vocabulary::kMask;
    }
  }
  if (out.positions.empty()) {
    const auto pos = static_cast<size_t>(rng.uniform_int(sentence.size()));
    out.positions.push_back(static_cast<int64_t>(pos));
    out.originals.push_back(sentence[pos]);
    out.tokens[pos] = Vocabulary::kMask;
  }
  return out;
}

nlohmann::json BiLmConfig::to_json() const {
  return {
      {"vocab_size", vocab_size}, {"embedding_dim", embedding_dim}, {"hidden_dim", hidden_dim},
      {"num_layers", num_layers}, {"dropout", dropout},             {"mask_rate", mask_rate},
  };
}

BiLmConfig BiLmConfig::from_json(const nlohmann::json& j) {
  BiLmConfig c;
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.embedding_dim = j.at("embedding_dim").get<int64_t>();
  c.hidden_dim = j.at("hidden_dim").get<int64_t>();
  c.num_layers = j.at("num_layers").get<int64_t>();
  c.dropout = j.at("dropout").get<double>();
  c.mask_rate = j.at("mask_rate").get<double>();
  return c;
}

BiLmParams::BiLmParams(BiLmConfig cfg, Rng& rng)
    : config(cfg),
      embedding("bilm.embedding",
                Tensor::uniform({cfg.vocab_size, cfg.embedding_dim}, rng, -0.05, 0.05)),
      fwd_layers(make_lstm_stack("bilm.fwd", cfg.embedding_dim, cfg.hidden_dim, cfg.num_layers, rng)),
      bwd_layers(make_lstm_stack("bilm.bwd", cfg.embedding_dim, cfg.hidden_dim, cfg.num_layers, rng)),
      comb_fwd("bilm.comb_fwd", Tensor::uniform({cfg.hidden_dim, cfg.embedding_dim}, rng, -0.05, 0.05)),
      comb_bwd("bilm.comb_bwd", Tensor::uniform({cfg.hidden_dim, cfg.embedding_dim}, rng, -0.05, 0.05)),
      comb_b("bilm.comb_b", Tensor::zeros({cfg.embedding_dim})) {
  check(cfg.vocab_size > 0, "BiLmParams: vocab_size must be positive");
}

std::vector<Parameter*> BiLmParams::all_params() {
  std::vector<Parameter*> out{&embedding};
  for (auto* stack : {&fwd_layers, &bwd_layers}) {
    for (auto& l : *stack) {
      out.push_back(&l.w_input);
      out.push_back(&l.w_recur);
      out.push_back(&l.bias);
    }
  }
  out.push_back(&comb_fwd);
  out.push_back(&comb_bwd);
  out.push_back(&comb_b);
  return out;
}

std::vector<const Parameter*> BiLmParams::all_params() const {
  auto mut = const_cast<BiLmParams*>(this)->all_params();
  return {mut.begin(), mut.end()};
}

std::vector<Var> bilm_position_logprobs(Tape& tape, BiLmParams& bilm,
                                        const std::vector<const std::vector<int64_t>*>& rows,
                                        bool train, Rng& rng) {
  check(!rows.empty(), "bilm_position_logprobs: no rows");
  const size_t len = rows[0]->size();
  check(len > 0, "bilm_position_logprobs: empty sentence");
  for (const auto* r : rows) check(r->size() == len, "bilm_position_logprobs: rows must share a length");
  const int64_t nrows = static_cast<int64_t>(rows.size());

  auto embed = [&](auto id_of_row) {
    std::vector<int64_t> ids(static_cast<size_t>(nrows));
    for (int64_t r = 0; r < nrows; ++r) ids[static_cast<size_t>(r)] = id_of_row(r);
    return embed_step(tape, bilm.embedding, ids);
  };

  // forward stack over <BOS>, w_0 .. w_{T-2}: step t covers tokens < t
  std::vector<Var> fwd_inputs;
  fwd_inputs.reserve(len);
  for (size_t t = 0; t < len; ++t) {
    fwd_inputs.push_back(embed([&](int64_t r) {
      return t == 0 ? Vocabulary::kBos : (*rows[static_cast<size_t>(r)])[t - 1];
    }));
  }
  auto fwd = lstm_sweep(tape, bilm.fwd_layers, fwd_inputs, nullptr, bilm.config.dropout, train, rng);

  // backward stack over <EOS>, w_{T-1} .. w_1: step t covers tokens > T-1-t
  std::vector<Var> bwd_inputs;
  bwd_inputs.reserve(len);
  for (size_t t = 0; t < len; ++t) {
    bwd_inputs.push_back(embed([&](int64_t r) {
      return t == 0 ? Vocabulary::kEos : (*rows[static_cast<size_t>(r)])[len - t];
    }));
  }
  auto bwd = lstm_sweep(tape, bilm.bwd_layers, bwd_inputs, nullptr, bilm.config.dropout, train, rng);

  std::vector<Var> out;
  out.reserve(len);
  for (size_t i = 0; i < len; ++i) {
    Var hf = fwd.top_h[i];
    Var hb = bwd.top_h[len - 1 - i];
    if (train && bilm.config.dropout > 0) {
      hf = tape.dropout(hf, bilm.config.dropout, rng);
      hb = tape.dropout(hb, bilm.config.dropout, rng);
    }
    Var v = tape.add_row(tape.add(tape.matmul(hf, tape.param(bilm.comb_fwd)),
                                  tape.matmul(hb, tape.param(bilm.comb_bwd))),
                         tape.param(bilm.comb_b));
    Var logits = tape.matmul(v, tape.param(bilm.embedding), false, true);
    out.push_back(tape.log_softmax_rows(logits));
  }
  return out;
}

Var bilm_masked_ce_loss(Tape& tape, BiLmParams& bilm, const std::vector<const MaskedSentence*>& batch,
                        bool train, Rng& rng) {
  check(!batch.empty(), "bilm_masked_ce_loss: empty batch");

  std::map<size_t, std::vector<int64_t>> groups;
  for (size_t i = 0; i < batch.size(); ++i) groups[batch[i]->tokens.size()].push_back(static_cast<int64_t>(i));

  std::vector<Var> picked_parts;
  for (const auto& [len, idxs] : groups) {
    std::vector<const std::vector<int64_t>*> rows;
    rows.reserve(idxs.size());
    for (int64_t i : idxs) rows.push_back(&batch[static_cast<size_t>(i)]->tokens);
    auto logprobs = bilm_position_logprobs(tape, bilm, rows, train, rng);

    for (size_t t = 0; t < len; ++t) {
      std::vector<std::pair<int64_t, int64_t>> entries;
      for (size_t r = 0; r < idxs.size(); ++r) {
        const MaskedSentence& m = *batch[static_cast<size_t>(idxs[r])];
        for (size_t p = 0; p < m.positions.size(); ++p) {
          if (m.positions[p] == static_cast<int64_t>(t)) {
            entries.emplace_back(static_cast<int64_t>(r), m.originals[p]);
          }
        }
      }
      if (!entries.empty()) picked_parts.push_back(tape.pick(logprobs[t], std::move(entries)));
    }
  }
  check(!picked_parts.empty(), "bilm_masked_ce_loss: no masked positions in batch");
  Var all = picked_parts.size() == 1 ? picked_parts[0] : tape.concat_vec(picked_parts);
  return tape.neg(tape.mean(all));
}

std::vector<BiLmEpochLog> train_bilm(BiLmParams& bilm, const std::vector<std::vector<int64_t>>& sentences,
                                     const BiLmTrainOptions& opts) {
  check_data(!sentences.empty(), "train_bilm: empty corpus");
  for (const auto& s : sentences) check_data(!s.empty(), "train_bilm: empty sentence in corpus");
  check(opts.epochs >= 0 && opts.batch_size >= 1, "train_bilm: bad options");

  Adam adam(AdamConfig{opts.lr, 0.9, 0.999, 1e-8});
  Rng base(opts.seed);

  std::vector<BiLmEpochLog> logs;
  for (int64_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::vector<int64_t> order(sentences.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
    Rng order_rng = base.derive("bilm-order", static_cast<uint64_t>(epoch));
    order_rng.shuffle(order);

    double loss_sum = 0;
    int64_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
      Rng mask_rng = base.derive("bilm-mask", static_cast<uint64_t>(epoch * 1000003 + batches));
      Rng drop_rng = base.derive("bilm-drop", static_cast<uint64_t>(epoch * 1000003 + batches));

      std::vector<MaskedSentence> masked;
      masked.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        masked.push_back(mask_tokens(sentences[static_cast<size_t>(order[i])], bilm.config.mask_rate, mask_rng));
      }
      std::vector<const MaskedSentence*> ptrs;
      ptrs.reserve(masked.size());
      for (const auto& m : masked) ptrs.push_back(&m);

      Tape tape;
      Var loss = bilm_masked_ce_loss(tape, bilm, ptrs, true, drop_rng);
      const double value = loss.value().item();
      check(std::isfinite(value), "train_bilm: non-finite loss");
      GradMap grads = tape.backward(loss);
      clip_by_batch_norm(grads, static_cast<int64_t>(end - start));
      adam.step(grads);
      loss_sum += value;
      ++batches;
    }
    logs.push_back({epoch, loss_sum / static_cast<double>(std::max<int64_t>(1, batches))});
  }
  return logs;
}

namespace {

int64_t sample_allowed(const Tensor& logprob_row, int64_t row, int64_t vocab, Rng& rng) {
  // exclude <MASK>, <PAD>, <BOS>, <EOS>; <UNK> stays eligible
  double total = 0;
  for (int64_t id = 0; id < vocab; ++id) {
    if (id != Vocabulary::kUnk && id < Vocabulary::kNumSpecials) continue;
    total += std::exp(logprob_row.at(row, id));
  }
  check(total > 0, "resample: degenerate distribution");
  double u = rng.uniform01() * total;
  int64_t last = Vocabulary::kUnk;
  for (int64_t id = 0; id < vocab; ++id) {
    if (id != Vocabulary::kUnk && id < Vocabulary::kNumSpecials) continue;
    u -= std::exp(logprob_row.at(row, id));
    last = id;
    if (u <= 0) return id;
  }
  return last;  // numerical tail
}

}  // namespace

std::vector<int64_t> resample(const MaskedSentence& masked, BiLmParams& bilm, Rng& rng) {
  std::vector<int64_t> out = masked.tokens;
  if (masked.positions.empty()) return out;

  Tape tape;
  Rng unused(0);
  std::vector<const std::vector<int64_t>*> rows{&masked.tokens};
  auto logprobs = bilm_position_logprobs(tape, bilm, rows, false, unused);
  for (size_t p = 0; p < masked.positions.size(); ++p) {
    const int64_t pos = masked.positions[p];
    out[static_cast<size_t>(pos)] =
        sample_allowed(logprobs[static_cast<size_t>(pos)].value(), 0, bilm.config.vocab_size, rng);
  }
  return out;
}

ResampledNegatives make_negatives_by_resampling(const std::vector<const SentencePair*>& batch,
                                                BiLmParams& bilm, int64_t nu, Rng& rng) {
  check(nu >= 1, "make_negatives_by_resampling: nu must be positive");
  ResampledNegatives out;
  out.negatives.resize(batch.size());
  out.attempts.resize(batch.size());

  for (size_t i = 0; i < batch.size(); ++i) {
    const std::vector<int64_t>& source = batch[i]->b;
    Rng pair_rng = rng.derive("resample-pair", static_cast<uint64_t>(i));
    auto& negs = out.negatives[i];
    auto& attempts = out.attempts[i];
    negs.reserve(static_cast<size_t>(nu));
    for (int64_t l = 0; l < nu; ++l) {
      std::vector<int64_t> candidate;
      int64_t tries = 0;
      do {
        ++tries;
        MaskedSentence m = mask_tokens(source, bilm.config.mask_rate, pair_rng);
        candidate = resample(m, bilm, pair_rng);
      } while (candidate == source && tries < kResampleRetryCap);
      if (candidate == source) ++out.kept_identical;
      negs.push_back(std::move(candidate));
      attempts.push_back(tries);
    }
  }
  return out;
}

}  // namespace spe
