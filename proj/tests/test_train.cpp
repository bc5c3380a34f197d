#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "spe/train.hpp"
#include "support/fixtures.hpp"

using namespace spe;
using spe::test::make_lm;
using spe::test::small_config;

namespace {

std::vector<std::vector<int64_t>> toy_sentences(int64_t n, int64_t vocab, uint64_t seed, int64_t len = 4) {
  // patterned sentences so word CE has something to learn
  std::vector<std::vector<int64_t>> out;
  Rng rng(seed);
  for (int64_t i = 0; i < n; ++i) {
    std::vector<int64_t> s;
    int64_t tok = 5 + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(vocab - 5)));
    for (int64_t t = 0; t < len; ++t) {
      s.push_back(tok);
      tok = 5 + (tok - 5 + 1) % (vocab - 5);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("pretrain: loss decreases, zero epochs is a no-op, seeds reproduce") {
  const auto sentences = toy_sentences(1000, 12, 3);
  LmConfig cfg = small_config(12, 8, 12);

  SUBCASE("zero epochs leaves the model unchanged") {
    LmParams params = make_lm(cfg, 1);
    LmParams reference = make_lm(cfg, 1);
    PretrainOptions opts;
    opts.epochs = 0;
    auto out = pretrain(params, sentences, {}, opts);
    CHECK(out.logs.empty());
    auto a = params.all_params();
    auto b = reference.all_params();
    for (size_t i = 0; i < a.size(); ++i) {
      for (int64_t k = 0; k < a[i]->value.numel(); ++k) CHECK(a[i]->value[k] == b[i]->value[k]);
    }
  }

  SUBCASE("training mean L_w strictly decreases on the toy corpus") {
    LmParams params = make_lm(cfg, 1);
    PretrainOptions opts;
    opts.epochs = 2;
    opts.batch_size = 20;
    opts.lr = 3e-3;
    opts.seed = 11;
    auto out = pretrain(params, sentences, sentences, opts);
    REQUIRE(out.logs.size() == 2);
    CHECK(out.logs[1].mean_lw < out.logs[0].mean_lw);
    CHECK(std::isfinite(out.logs[0].validation_mean_l));
  }

  SUBCASE("identical seeds give identical loss trajectories") {
    PretrainOptions opts;
    opts.epochs = 2;
    opts.batch_size = 20;
    opts.lr = 1e-3;
    opts.seed = 21;
    LmParams p1 = make_lm(cfg, 5);
    LmParams p2 = make_lm(cfg, 5);
    auto o1 = pretrain(p1, sentences, {}, opts);
    auto o2 = pretrain(p2, sentences, {}, opts);
    for (size_t e = 0; e < o1.logs.size(); ++e) CHECK(o1.logs[e].mean_lw == o2.logs[e].mean_lw);
  }

  SUBCASE("empty corpus is rejected") {
    LmParams params = make_lm(cfg, 1);
    PretrainOptions opts;
    CHECK_THROWS(pretrain(params, {}, {}, opts));
  }
}

TEST_CASE("train config validation: batch NCE pins nu to B - 1") {
  TrainConfig cfg;
  cfg.sampler = SamplerKind::kBatchNce;
  cfg.batch_size = 16;
  cfg.nu = 15;
  CHECK_NOTHROW(cfg.validate());
  cfg.nu = 14;
  CHECK_THROWS(cfg.validate());
  cfg.sampler = SamplerKind::kResampling;
  cfg.nu = 7;
  CHECK_NOTHROW(cfg.validate());
  cfg.nu = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("baseline equivalence: word-CE-only NCE training reproduces pretraining batch for batch") {
  // 40 pairs, batch 4: pair count divisible by the batch size so both paths
  // see identical batches.
  const int64_t vocab = 12;
  auto b_sentences = toy_sentences(40, vocab, 9);
  auto a_sentences = toy_sentences(40, vocab, 10);
  std::vector<SentencePair> pairs(40);
  for (size_t i = 0; i < 40; ++i) pairs[i] = {a_sentences[i], b_sentences[i], static_cast<int64_t>(i)};

  LmConfig cfg = small_config(vocab, 6, 8);
  LmParams via_pretrain = make_lm(cfg, 42);
  LmParams via_nce = make_lm(cfg, 42);

  PretrainOptions popts;
  popts.epochs = 3;
  popts.batch_size = 4;
  popts.lr = 1e-3;
  popts.seed = 77;
  auto pre_out = pretrain(via_pretrain, b_sentences, {}, popts);

  NceTrainOptions nopts;
  nopts.config.batch_size = 4;
  nopts.config.nu = 3;
  nopts.config.epochs = 3;
  nopts.config.lr = 1e-3;
  nopts.config.seed = 77;
  nopts.config.sampler = SamplerKind::kBatchNce;
  nopts.config.checkpoint_interval = 0;
  nopts.weights = {1.0, 0.0, 0.0};  // sentence-level path disabled
  auto nce_out = train_nce(via_nce, pairs, nopts);

  REQUIRE(pre_out.logs.size() == nce_out.logs.size());
  for (size_t e = 0; e < pre_out.logs.size(); ++e) {
    CHECK(std::abs(pre_out.logs[e].mean_lw - nce_out.logs[e].mean_lw) <= 1e-12);
    CHECK(std::abs(pre_out.logs[e].mean_l - nce_out.logs[e].mean_l) <= 1e-12);
  }
  auto p1 = via_pretrain.all_params();
  auto p2 = via_nce.all_params();
  for (size_t i = 0; i < p1.size(); ++i) {
    for (int64_t k = 0; k < p1[i]->value.numel(); ++k) {
      CHECK(std::abs(p1[i]->value[k] - p2[i]->value[k]) <= 1e-12);
    }
  }
}

TEST_CASE("nce training: fifty epochs at interval five give exactly ten checkpoints") {
  const int64_t vocab = 10;
  auto sentences = toy_sentences(8, vocab, 2, 3);
  std::vector<SentencePair> pairs(4);
  for (size_t i = 0; i < 4; ++i) pairs[i] = {sentences[i], sentences[i + 4], static_cast<int64_t>(i)};

  LmConfig cfg = small_config(vocab, 4, 4);
  LmParams params = make_lm(cfg, 3);

  NceTrainOptions opts;
  opts.config.batch_size = 2;
  opts.config.nu = 1;
  opts.config.epochs = 50;
  opts.config.lr = 1e-3;
  opts.config.seed = 5;
  opts.config.checkpoint_interval = 5;
  opts.weights = {0.1, 10.0, 0.1};
  opts.checkpoint_dir = temp_dir("spe_ckpt_count");

  auto out = train_nce(params, pairs, opts);
  CHECK(out.checkpoint_stems.size() == 10);
  CHECK(out.checkpoint_epochs.front() == 5);
  CHECK(out.checkpoint_epochs.back() == 50);
  for (const auto& log : out.logs) {
    CHECK(std::isfinite(log.mean_l));
    CHECK(log.mean_ls >= 0.0);
    CHECK(log.mean_lc >= 0.0);
  }
}

TEST_CASE("checkpoints reload bit for bit") {
  LmConfig cfg = small_config(11, 5, 6);
  LmParams params = make_lm(cfg, 8);
  const auto dir = temp_dir("spe_ckpt_roundtrip");

  CheckpointMeta meta{cfg, 7, softmax_mode_name(cfg.softmax), "vhash", "chash", 0.5};
  save_checkpoint(dir / "ckpt-00007", params, meta);

  CheckpointMeta loaded_meta;
  LmParams loaded = load_checkpoint(dir / "ckpt-00007", &loaded_meta);
  CHECK(loaded_meta.epoch == 7);
  CHECK(loaded_meta.vocab_hash == "vhash");
  CHECK(loaded_meta.validation_metric == 0.5);
  CHECK(loaded.config == cfg);

  auto a = params.all_params();
  auto b = loaded.all_params();
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->value.numel() == b[i]->value.numel());
    for (int64_t k = 0; k < a[i]->value.numel(); ++k) CHECK(a[i]->value[k] == b[i]->value[k]);
  }

  // evaluation outputs reproduce exactly
  std::vector<int64_t> sentence{5, 9, 6};
  CHECK(log_prob(params, sentence) == log_prob(loaded, sentence));
}

TEST_CASE("train_nce with the resampling sampler runs end to end") {
  const int64_t vocab = 12;
  auto sentences = toy_sentences(16, vocab, 4, 4);
  std::vector<SentencePair> pairs(8);
  for (size_t i = 0; i < 8; ++i) pairs[i] = {sentences[i], sentences[i + 8], static_cast<int64_t>(i)};

  BiLmConfig bc;
  bc.vocab_size = vocab;
  bc.embedding_dim = 4;
  bc.hidden_dim = 5;
  bc.num_layers = 1;
  bc.dropout = 0.5;
  bc.mask_rate = 0.15;
  Rng brng(2);
  BiLmParams bilm(bc, brng);

  LmParams params = make_lm(small_config(vocab, 4, 5), 6);
  NceTrainOptions opts;
  opts.config.batch_size = 4;
  opts.config.nu = 3;
  opts.config.epochs = 1;
  opts.config.sampler = SamplerKind::kResampling;
  opts.config.checkpoint_interval = 0;
  opts.config.seed = 3;
  opts.weights = {0.1, 10.0, 0.1};
  opts.bilm = &bilm;

  auto out = train_nce(params, pairs, opts);
  REQUIRE(out.logs.size() == 1);
  CHECK(std::isfinite(out.logs[0].mean_l));
  CHECK(out.logs[0].mean_ls >= 0.0);

  // the resampling sampler without a bilm is rejected
  NceTrainOptions bad = opts;
  bad.bilm = nullptr;
  LmParams params2 = make_lm(small_config(vocab, 4, 5), 6);
  CHECK_THROWS(train_nce(params2, pairs, bad));
}

TEST_CASE("epoch log json: null for terms that were never computed") {
  EpochLog log;
  log.epoch = 3;
  log.mean_l = 1.5;
  log.mean_lw = 1.5;
  const std::string j = epoch_log_json(log);
  CHECK(j.find("\"mean_ls\":null") != std::string::npos);
  CHECK(j.find("\"mean_lw\":1.5") != std::string::npos);
}
