// spe: contextual sentence probability estimation with sentence-level NCE.
//
// Pipeline subcommands: gen-toy, prep, pretrain, train-bilm, train-nce,
// gen-questions, evaluate, score. Every stage reads one config file, accepts
// a few overriding flags, writes its outputs plus a resolved-config echo
// under the output directory, and derives all randomness from a single seed.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "spe/cloze.hpp"
#include "spe/config.hpp"
#include "spe/corpus.hpp"
#include "spe/serialize.hpp"
#include "spe/toygen.hpp"
#include "spe/train.hpp"

namespace fs = std::filesystem;
using namespace spe;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string checkpoint;
  std::optional<int> criterion;
  std::string sampler;
  std::string weights;
  std::string out;
};

uint64_t stage_seed(uint64_t seed, const std::string& stage) {
  Rng rng(seed);
  return rng.derive(stage).next();
}

Config load_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config{} : Config::parse_file(args.config_path);
  if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  if (args.criterion) cfg.set("eval.criterion", std::to_string(*args.criterion));
  if (!args.sampler.empty()) cfg.set("train.sampler", args.sampler);
  if (!args.weights.empty()) cfg.set("train.weights", args.weights);
  if (!args.out.empty()) cfg.set("out", args.out);
  if (!args.checkpoint.empty()) cfg.set("checkpoint", args.checkpoint);
  return cfg;
}

fs::path out_dir(const Config& cfg) { return cfg.get_string("out", "out"); }

void echo_config(const Config& cfg, const std::string& stage) {
  const fs::path dir = out_dir(cfg);
  fs::create_directories(dir);
  write_file_atomic(dir / ("config-" + stage + ".txt"), cfg.resolved_text());
}

CorpusKind corpus_kind(const Config& cfg) {
  return corpus_kind_from(cfg.get_string("corpus.kind", "abc"));
}

std::vector<Document> load_corpus(const Config& cfg) {
  const fs::path path = cfg.require_string("corpus.path");
  check_data(fs::exists(path), "corpus file does not exist: " + path.string());
  return corpus_kind(cfg) == CorpusKind::kAbc
             ? load_abc_corpus(path, static_cast<int>(cfg.get_int("corpus.bars_per_sentence", 4)))
             : load_text_corpus(path);
}

uint64_t split_seed(const Config& cfg) {
  return static_cast<uint64_t>(cfg.get_int("corpus.split_seed", cfg.get_int("seed", 0)));
}

Vocabulary load_vocab(const Config& cfg) {
  const fs::path path = cfg.get_string("vocab.path", (out_dir(cfg) / "vocab.txt").string());
  check_data(fs::exists(path), "vocabulary file does not exist: " + path.string() + " (run prep first)");
  return Vocabulary::load(path);
}

LmConfig model_config(const Config& cfg, const Vocabulary& vocab) {
  LmConfig mc;
  mc.vocab_size = vocab.size();
  mc.embedding_dim = cfg.get_int("model.embedding_dim", 200);
  mc.hidden_dim = cfg.get_int("model.hidden_dim", 600);
  mc.num_layers = cfg.get_int("model.num_layers", 2);
  mc.softmax = softmax_mode_from(cfg.get_string("model.softmax", "relaxed"));
  mc.dropout = cfg.get_double("model.dropout", 0.5);
  return mc;
}

LossWeights loss_weights(const Config& cfg) {
  const auto triple = cfg.get_double_list("train.weights", {0.1, 10.0, 0.1});
  check_data(triple.size() == 3, "train.weights must be three comma-separated numbers");
  LossWeights w{triple[0], triple[1], triple[2]};
  w.validate();
  return w;
}

void require_vocab_match(const Vocabulary& vocab, const CheckpointMeta& meta, const std::string& what) {
  check_data(meta.vocab_hash == vocab.hash(),
             what + ": checkpoint vocabulary hash " + meta.vocab_hash +
                 " does not match the loaded vocabulary " + vocab.hash());
}

void write_epoch_logs(const fs::path& path, const std::vector<EpochLog>& logs) {
  std::ostringstream out;
  for (const auto& log : logs) out << epoch_log_json(log) << "\n";
  write_file_atomic(path, out.str());
}

// --- subcommands -----------------------------------------------------------

int cmd_gen_toy(const CommonArgs& args) {
  Config cfg = load_config(args);
  ToyGenConfig tg;
  tg.seed = static_cast<uint64_t>(cfg.get_int("toy.seed", cfg.get_int("seed", 7)));
  tg.tunes = cfg.get_int("toy.tunes", 1250);
  tg.sentences_per_tune = cfg.get_int("toy.sentences_per_tune", 5);
  tg.keys = cfg.get_int("toy.keys", 8);
  const fs::path path = cfg.get_string("corpus.path", (out_dir(cfg) / "toy_abc.txt").string());
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());

  auto lines = generate_toy_abc(tg);
  std::ostringstream text;
  for (const auto& line : lines) text << line << "\n";
  write_file_atomic(path, text.str());
  echo_config(cfg, "gen-toy");
  std::cout << "wrote " << lines.size() << " tunes to " << path << "\n";
  return 0;
}

int cmd_prep(const CommonArgs& args) {
  Config cfg = load_config(args);
  auto docs = load_corpus(cfg);
  check_data(!docs.empty(), "corpus is empty");
  CorpusSplit split = split_corpus(docs, split_seed(cfg));
  check_data(!split.train.empty(), "training split is empty");

  Vocabulary vocab =
      Vocabulary::build(all_sentences(split.train), cfg.get_int("vocab.cutoff", 3));

  const fs::path dir = out_dir(cfg);
  fs::create_directories(dir);
  vocab.save(cfg.get_string("vocab.path", (dir / "vocab.txt").string()));

  nlohmann::json assignment;
  for (const auto& doc : docs) {
    assignment[doc.id] = split_name(assign_split(doc.id, split_seed(cfg)));
  }
  nlohmann::json manifest{{"split_seed", split_seed(cfg)},
                          {"documents", docs.size()},
                          {"train_documents", split.train.size()},
                          {"validation_documents", split.validation.size()},
                          {"holdout_documents", split.holdout.size()},
                          {"vocab_hash", vocab.hash()},
                          {"assignment", assignment}};
  write_file_atomic(dir / "split.json", manifest.dump(2) + "\n");
  echo_config(cfg, "prep");
  std::cout << "vocabulary: " << vocab.size() << " ids (hash " << vocab.hash() << "); documents: train "
            << split.train.size() << ", validation " << split.validation.size() << ", holdout "
            << split.holdout.size() << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& args) {
  Config cfg = load_config(args);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
  Vocabulary vocab = load_vocab(cfg);
  auto docs = load_corpus(cfg);
  CorpusSplit split = split_corpus(docs, split_seed(cfg));

  Rng init_rng(stage_seed(seed, "init"));
  LmParams params(model_config(cfg, vocab), init_rng);

  PretrainOptions opts;
  opts.epochs = cfg.get_int("pretrain.epochs", 30);
  opts.batch_size = cfg.get_int("pretrain.batch_size", 20);
  opts.lr = cfg.get_double("pretrain.lr", 1e-4);
  opts.seed = stage_seed(seed, "pretrain");
  opts.checkpoint_interval = cfg.get_int("pretrain.checkpoint_interval", 0);
  opts.checkpoint_dir = out_dir(cfg) / "pretrain";
  opts.vocab_hash = vocab.hash();
  opts.config_hash = cfg.hash();

  fs::create_directories(opts.checkpoint_dir);
  auto result = pretrain(params, encode_sentences(split.train, vocab),
                         encode_sentences(split.validation, vocab), opts);
  write_epoch_logs(opts.checkpoint_dir / "log.jsonl", result.logs);

  CheckpointMeta meta{params.config, opts.epochs, softmax_mode_name(params.config.softmax),
                      vocab.hash(), cfg.hash(),
                      result.logs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : result.logs.back().validation_mean_l};
  save_checkpoint(opts.checkpoint_dir / "final", params, meta);
  echo_config(cfg, "pretrain");
  if (!result.logs.empty()) {
    std::cout << "pretrain done: epoch " << result.logs.back().epoch << " mean L_w "
              << result.logs.back().mean_lw << " validation " << result.logs.back().validation_mean_l
              << "\n";
  }
  return 0;
}

int cmd_train_bilm(const CommonArgs& args) {
  Config cfg = load_config(args);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
  Vocabulary vocab = load_vocab(cfg);
  auto docs = load_corpus(cfg);
  CorpusSplit split = split_corpus(docs, split_seed(cfg));

  BiLmConfig bc;
  bc.vocab_size = vocab.size();
  bc.embedding_dim = cfg.get_int("bilm.embedding_dim", cfg.get_int("model.embedding_dim", 200));
  bc.hidden_dim = cfg.get_int("bilm.hidden_dim", cfg.get_int("model.hidden_dim", 600));
  bc.num_layers = cfg.get_int("bilm.num_layers", 2);
  bc.dropout = cfg.get_double("bilm.dropout", 0.5);
  bc.mask_rate = cfg.get_double("bilm.mask_rate", 0.15);

  Rng init_rng(stage_seed(seed, "bilm-init"));
  BiLmParams bilm(bc, init_rng);

  BiLmTrainOptions opts;
  opts.epochs = cfg.get_int("bilm.epochs", 50);
  opts.batch_size = cfg.get_int("bilm.batch_size", 20);
  opts.lr = cfg.get_double("bilm.lr", 1e-4);
  opts.seed = stage_seed(seed, "train-bilm");

  auto logs = train_bilm(bilm, encode_sentences(split.train, vocab), opts);

  const fs::path dir = out_dir(cfg) / "bilm";
  fs::create_directories(dir);
  {
    std::ostringstream out;
    for (const auto& log : logs) {
      out << nlohmann::json{{"epoch", log.epoch}, {"mean_masked_ce", log.mean_masked_ce}}.dump() << "\n";
    }
    write_file_atomic(dir / "log.jsonl", out.str());
  }
  nlohmann::json extra{{"kind", "bilm-checkpoint"},
                       {"arch", bc.to_json()},
                       {"vocab_hash", vocab.hash()},
                       {"config_hash", cfg.hash()}};
  save_named_tensors(dir / "final", std::as_const(bilm).all_params(), extra);
  echo_config(cfg, "train-bilm");
  if (!logs.empty()) std::cout << "bilm done: mean masked CE " << logs.back().mean_masked_ce << "\n";
  return 0;
}

BiLmParams load_bilm(const Config& cfg, const Vocabulary& vocab) {
  const fs::path stem = cfg.get_string("bilm.checkpoint", (out_dir(cfg) / "bilm" / "final").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(stem.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad bilm manifest: " + std::string(e.what()));
  }
  check_data(manifest.value("kind", "") == "bilm-checkpoint", "not a bilm checkpoint: " + stem.string());
  check_data(manifest.value("vocab_hash", "") == vocab.hash(),
             "bilm checkpoint vocabulary hash does not match the loaded vocabulary");
  Rng rng(0);
  BiLmParams bilm(BiLmConfig::from_json(manifest.at("arch")), rng);
  load_named_tensors(stem, bilm.all_params());
  return bilm;
}

int cmd_train_nce(const CommonArgs& args) {
  Config cfg = load_config(args);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
  Vocabulary vocab = load_vocab(cfg);
  auto docs = load_corpus(cfg);
  CorpusSplit split = split_corpus(docs, split_seed(cfg));

  const std::string init_stem =
      cfg.get_string("checkpoint", (out_dir(cfg) / "pretrain" / "final").string());
  CheckpointMeta init_meta;
  LmParams params = load_checkpoint(init_stem, &init_meta);
  require_vocab_match(vocab, init_meta, "train-nce");

  NceTrainOptions opts;
  opts.config.batch_size = cfg.get_int("train.batch_size", 16);
  opts.config.sampler = sampler_kind_from(cfg.get_string("train.sampler", "batch-nce"));
  opts.config.nu = opts.config.sampler == SamplerKind::kBatchNce
                       ? opts.config.batch_size - 1
                       : cfg.get_int("train.nu", 15);
  opts.config.epochs = cfg.get_int("train.epochs", 50);
  opts.config.lr = cfg.get_double("train.lr", 1e-4);
  opts.config.seed = stage_seed(seed, "train-nce");
  opts.config.checkpoint_interval = cfg.get_int("train.checkpoint_interval", 5);
  opts.config.detach_noise = cfg.get_bool("train.detach_noise", false);
  opts.weights = loss_weights(cfg);
  opts.checkpoint_dir = cfg.get_string("train.out", (out_dir(cfg) / "nce").string());
  opts.vocab_hash = vocab.hash();
  opts.config_hash = cfg.hash();

  auto pairs = make_pairs(split.train, vocab);
  auto validation_pairs = make_pairs(split.validation, vocab);
  opts.validation_pairs = &validation_pairs;

  std::optional<BiLmParams> bilm;
  if (opts.config.sampler == SamplerKind::kResampling &&
      (opts.weights.beta > 0 || opts.weights.gamma > 0)) {
    bilm.emplace(load_bilm(cfg, vocab));
    opts.bilm = &*bilm;
  }

  cfg.set("train.nu", std::to_string(opts.config.nu));  // resolved value into the echo
  fs::create_directories(opts.checkpoint_dir);
  auto result = train_nce(params, pairs, opts);
  write_epoch_logs(opts.checkpoint_dir / "log.jsonl", result.logs);
  echo_config(cfg, "train-nce");
  std::cout << "train-nce done: " << result.checkpoint_stems.size() << " checkpoints under "
            << opts.checkpoint_dir << "\n";
  return 0;
}

int cmd_gen_questions(const CommonArgs& args) {
  Config cfg = load_config(args);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 0));
  Vocabulary vocab = load_vocab(cfg);
  auto docs = load_corpus(cfg);
  CorpusSplit split = split_corpus(docs, split_seed(cfg));

  GenerateOptions gopts;
  gopts.k = cfg.get_int("questions.k", 8);
  gopts.mode = cfg.get_string("questions.mode", "batch-neg") == "resampled" ? DistractorMode::kResampled
                                                                            : DistractorMode::kBatchNeg;
  gopts.questions_per_pair = cfg.get_int("questions.per_pair", 1);

  std::optional<BiLmParams> bilm;
  if (gopts.mode == DistractorMode::kResampled) bilm.emplace(load_bilm(cfg, vocab));

  const fs::path dir = out_dir(cfg) / "questions";
  fs::create_directories(dir);
  nlohmann::json summary;
  for (const auto& [name, docs_part] :
       {std::pair{std::string("validation"), &split.validation}, {std::string("holdout"), &split.holdout}}) {
    auto pairs = make_pairs(*docs_part, vocab);
    check_data(!pairs.empty(), "gen-questions: no " + name + " pairs");
    Rng rng(stage_seed(seed, "questions-" + name));
    auto result = generate_questions(pairs, vocab, gopts, bilm ? &*bilm : nullptr, rng);
    save_questions(dir / (name + ".jsonl"), result.questions);
    summary[name] = {{"questions", result.questions.size()}, {"dropped", result.dropped}};
    std::cout << name << ": " << result.questions.size() << " questions (" << result.dropped
              << " dropped)\n";
  }
  summary["vocab_hash"] = vocab.hash();
  summary["k"] = gopts.k;
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");
  echo_config(cfg, "gen-questions");
  return 0;
}

std::vector<fs::path> checkpoint_series(const fs::path& dir) {
  std::vector<fs::path> stems;
  if (!fs::is_directory(dir)) return stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("ckpt-", 0) == 0 && entry.path().extension() == ".json") {
      auto stem = entry.path();
      stem.replace_extension();
      stems.push_back(stem);
    }
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

int cmd_evaluate(const CommonArgs& args) {
  Config cfg = load_config(args);
  Vocabulary vocab = load_vocab(cfg);
  const CorpusKind kind = corpus_kind(cfg);
  const fs::path qdir = out_dir(cfg) / "questions";
  const fs::path vq_path = cfg.get_string("questions.validation", (qdir / "validation.jsonl").string());
  const fs::path hq_path = cfg.get_string("questions.holdout", (qdir / "holdout.jsonl").string());
  auto validation_questions = load_external_questions(vq_path);
  auto holdout_questions = load_external_questions(hq_path);

  // models: comma-separated name=checkpoint-dir entries
  std::vector<std::pair<std::string, fs::path>> models;
  {
    std::istringstream in(cfg.get_string("eval.models", "nce=" + (out_dir(cfg) / "nce").string()));
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto eq = item.find('=');
      check_data(eq != std::string::npos, "eval.models entries must be name=dir");
      models.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
  }
  if (cfg.has("checkpoint")) models = {{"checkpoint", cfg.require_string("checkpoint")}};

  std::vector<int> criteria{kCriterionCond, kCriterionCondMinusUncond};
  if (cfg.has("eval.criterion")) criteria = {static_cast<int>(cfg.get_int("eval.criterion", 2))};

  const fs::path eval_dir = out_dir(cfg) / "eval";
  fs::create_directories(eval_dir);

  nlohmann::json report;
  report["validation_questions"] = validation_questions.size();
  report["holdout_questions"] = holdout_questions.size();
  report["models"] = nlohmann::json::array();

  std::ostringstream table;
  table << "model                      criterion  best-epoch  validation  holdout\n";
  table << "-------------------------  ---------  ----------  ----------  -------\n";

  for (const auto& [name, dir] : models) {
    std::vector<fs::path> stems = checkpoint_series(dir);
    if (stems.empty()) {
      // a single checkpoint stem (file pair) rather than a series directory
      check_data(fs::exists(fs::path(dir.string() + ".json")),
                 "evaluate: no checkpoints found at " + dir.string());
      stems = {dir};
    }
    // vocabulary guard before any grading
    for (const auto& stem : stems) {
      CheckpointMeta meta;
      load_checkpoint(stem, &meta);
      require_vocab_match(vocab, meta, "evaluate " + name);
    }

    nlohmann::json model_entry{{"name", name}, {"checkpoints", stems.size()}};
    for (int criterion : criteria) {
      SelectionResult sel =
          select_checkpoint(stems, validation_questions, holdout_questions, criterion, vocab, kind,
                            eval_dir / "dumps" / (name + "-c" + std::to_string(criterion)));
      model_entry["criterion" + std::to_string(criterion)] = {
          {"validation_accuracies", sel.validation_accuracies},
          {"best_epoch", sel.best_epoch},
          {"best_validation_accuracy", sel.best_validation_accuracy},
          {"holdout_accuracy", sel.holdout_accuracy}};
      char line[160];
      std::snprintf(line, sizeof(line), "%-25s  %9d  %10lld  %9.1f%%  %6.1f%%\n", name.c_str(), criterion,
                    static_cast<long long>(sel.best_epoch), 100.0 * sel.best_validation_accuracy,
                    100.0 * sel.holdout_accuracy);
      table << line;
    }
    report["models"].push_back(std::move(model_entry));
  }

  write_file_atomic(eval_dir / "report.json", report.dump(2) + "\n");
  write_file_atomic(eval_dir / "report.txt", table.str());
  echo_config(cfg, "evaluate");
  std::cout << table.str();
  return 0;
}

int cmd_score(const CommonArgs& args) {
  Config cfg = load_config(args);
  Vocabulary vocab = load_vocab(cfg);
  const CorpusKind kind = corpus_kind(cfg);
  const std::string stem = cfg.has("checkpoint")
                               ? cfg.require_string("checkpoint")
                               : (out_dir(cfg) / "nce").string() + "/final";
  CheckpointMeta meta;
  LmParams params = load_checkpoint(stem, &meta);
  require_vocab_match(vocab, meta, "score");
  LmScorer scorer(params);

  // stdin: one pair per line, context TAB candidate
  std::string line;
  int64_t line_no = 0;
  while (std::getline(std::cin, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    check_data(tab != std::string::npos,
               "score: line " + std::to_string(line_no) + " needs `a<TAB>b`");
    const auto a = encode_sentence(vocab, kind, line.substr(0, tab));
    const auto b = encode_sentence(vocab, kind, line.substr(tab + 1));
    check_data(!b.empty(), "score: line " + std::to_string(line_no) + " has an empty candidate");
    const ScorePair s = scorer.score(a, b);
    nlohmann::json j{{"log_cond", s.log_cond},
                     {"log_uncond", s.log_uncond},
                     {"criterion1", criterion_score(s, kCriterionCond)},
                     {"criterion2", criterion_score(s, kCriterionCondMinusUncond)}};
    std::cout << j.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contextual sentence probability estimation with sentence-level NCE"};
  app.require_subcommand(1);

  CommonArgs args;
  for (auto* sub : {app.add_subcommand("gen-toy", "generate the bundled synthetic ABC-style corpus"),
                    app.add_subcommand("prep", "tokenize, split and build the vocabulary"),
                    app.add_subcommand("pretrain", "word-level CE pretraining"),
                    app.add_subcommand("train-bilm", "train the bidirectional masked LM"),
                    app.add_subcommand("train-nce", "sentence-level NCE training"),
                    app.add_subcommand("gen-questions", "generate sentence-cloze question files"),
                    app.add_subcommand("evaluate", "grade checkpoints and select the best"),
                    app.add_subcommand("score", "score a<TAB>b pairs from stdin")}) {
    sub->add_option("--config", args.config_path, "config file (dotted keys or JSON)");
    sub->add_option("--seed", args.seed, "master seed (overrides config)");
    sub->add_option("--checkpoint", args.checkpoint, "checkpoint stem override");
    sub->add_option("--criterion", args.criterion, "scoring criterion (1 or 2)")
        ->check(CLI::IsMember({1, 2}));
    sub->add_option("--sampler", args.sampler, "noise sampler")
        ->check(CLI::IsMember({"batch-nce", "resampling"}));
    sub->add_option("--weights", args.weights, "loss weights alpha,beta,gamma");
    sub->add_option("--out", args.out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand("gen-toy")) return cmd_gen_toy(args);
    if (app.got_subcommand("prep")) return cmd_prep(args);
    if (app.got_subcommand("pretrain")) return cmd_pretrain(args);
    if (app.got_subcommand("train-bilm")) return cmd_train_bilm(args);
    if (app.got_subcommand("train-nce")) return cmd_train_nce(args);
    if (app.got_subcommand("gen-questions")) return cmd_gen_questions(args);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(args);
    if (app.got_subcommand("score")) return cmd_score(args);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
