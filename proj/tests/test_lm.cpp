#include <cmath>

#include "doctest.h"
#include "spe/lm.hpp"
#include "support/fd_check.hpp"
#include "support/fixtures.hpp"

using namespace spe;
using spe::test::make_lm;
using spe::test::small_config;
using spe::test::zero_lm;

namespace {

double entropy(const Tensor& probs) {
  double h = 0;
  for (int64_t i = 0; i < probs.numel(); ++i) {
    if (probs[i] > 0) h -= probs[i] * std::log(probs[i]);
  }
  return h;
}

}  // namespace

TEST_CASE("zero-weight model emits the uniform distribution at every step") {
  const int64_t V = 11;
  for (auto mode : {SoftmaxMode::kRelaxed, SoftmaxMode::kVanilla}) {
    LmParams params = zero_lm(small_config(V, 5, 7, mode));
    auto out = lm_forward(params, {5, 6, 7, 8}, nullptr);
    REQUIRE(out.step_log_probs.size() == 4);
    for (const auto& row : out.step_log_probs) {
      double total = 0;
      for (int64_t i = 0; i < V; ++i) {
        CHECK(row[i] == doctest::Approx(std::log(1.0 / V)).epsilon(1e-12));
        total += std::exp(row[i]);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("eval-mode forward is deterministic") {
  LmParams params = make_lm(small_config(13), 21);
  auto a = lm_forward(params, {5, 9, 12, 6}, nullptr);
  auto b = lm_forward(params, {5, 9, 12, 6}, nullptr);
  for (size_t t = 0; t < a.step_log_probs.size(); ++t) {
    for (int64_t i = 0; i < 13; ++i) CHECK(a.step_log_probs[t][i] == b.step_log_probs[t][i]);
  }
}

TEST_CASE("every emitted distribution sums to one") {
  LmParams params = make_lm(small_config(9, 4, 6), 3);
  auto out = lm_forward(params, {5, 6, 7}, nullptr);
  for (const auto& row : out.step_log_probs) {
    double total = 0;
    for (int64_t i = 0; i < 9; ++i) total += std::exp(row[i]);
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("token ids outside the vocabulary are rejected") {
  LmParams params = make_lm(small_config(9), 1);
  CHECK_THROWS(lm_forward(params, {9}, nullptr));
  CHECK_THROWS(lm_forward(params, {-1}, nullptr));
  CHECK_THROWS(lm_forward(params, {}, nullptr));
}

TEST_CASE("state carry-over matches the concatenated run") {
  LmParams params = make_lm(small_config(12, 5, 6), 8);
  const std::vector<int64_t> a{5, 7, 9};
  const std::vector<int64_t> b{6, 8, 10};

  auto run_a = lm_forward(params, a, nullptr);
  auto run_b = lm_forward(params, b, &run_a.final_state);

  std::vector<int64_t> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  auto run_ab = lm_forward(params, ab, nullptr);

  // state trajectory restricted to b's steps: final states must agree
  for (size_t l = 0; l < run_b.final_state.h.size(); ++l) {
    for (int64_t i = 0; i < run_b.final_state.h[l].numel(); ++i) {
      CHECK(run_b.final_state.h[l][i] == doctest::Approx(run_ab.final_state.h[l][i]).epsilon(1e-12));
      CHECK(run_b.final_state.c[l][i] == doctest::Approx(run_ab.final_state.c[l][i]).epsilon(1e-12));
    }
  }
  // and the emitted distributions over b's steps match the tail of a||b
  const size_t offset = a.size();
  for (size_t t = 0; t < b.size(); ++t) {
    for (int64_t i = 0; i < 12; ++i) {
      CHECK(run_b.step_log_probs[t][i] ==
            doctest::Approx(run_ab.step_log_probs[offset + t][i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("relaxed softmax: fixed points and direct evaluation") {
  SUBCASE("equal logits stay uniform at any temperature") {
    Tensor logits({2}, {1.0, 1.0});
    for (double traw : {-3.0, 0.0, 2.0, 10.0}) {
      Tensor p = relaxed_softmax(logits, traw);
      CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
  }
  SUBCASE("logits [2, 0] at tau = 1") {
    Tensor p = softmax_with_temperature(Tensor({2}, {2.0, 0.0}), 1.0);
    const double e2 = std::exp(2.0);
    CHECK(p[0] == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-12));  // 0.8808
    CHECK(p[1] == doctest::Approx(1 / (e2 + 1)).epsilon(1e-12));   // 0.1192
  }
  SUBCASE("logits [2, 0] at tau = 2 is more uniform") {
    Tensor p = softmax_with_temperature(Tensor({2}, {2.0, 0.0}), 2.0);
    const double e1 = std::exp(1.0);
    CHECK(p[0] == doctest::Approx(e1 / (e1 + 1)).epsilon(1e-12));  // 0.7311
    CHECK(p[1] == doctest::Approx(1 / (e1 + 1)).epsilon(1e-12));   // 0.2689
  }
}

TEST_CASE("temperature monotonicity: entropy strictly increases with tau") {
  Tensor logits({5}, {2.0, -1.0, 0.5, 0.0, 1.0});
  double prev = -1;
  for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const double h = entropy(softmax_with_temperature(logits, tau));
    CHECK(h > prev);
    prev = h;
  }
}

TEST_CASE("temperature head: softplus keeps tau positive with a floor") {
  CHECK(temperature_of(-1000.0) == doctest::Approx(kTemperatureFloor).epsilon(1e-12));
  CHECK(temperature_of(0.0) == doctest::Approx(std::log(2.0) + kTemperatureFloor).epsilon(1e-12));
  CHECK(temperature_of(5.0) > 5.0);
}

TEST_CASE("tied embeddings: one array receives gradient from input and output paths") {
  LmConfig cfg = small_config(9, 4, 5);
  LmParams params = make_lm(cfg, 5);

  Tape tape;
  Rng rng(0);
  // inputs are {<BOS>, 6}; targets are {6, <EOS>}; token 7 is never an input
  // and never a target, yet its embedding row still gets output-path gradient
  // through softmax normalization.
  std::vector<int64_t> sentence{6};
  Var lp = unconditional_logprobs(tape, params, {&sentence}, false, rng);
  GradMap g = tape.backward(tape.neg(tape.sum(lp)));
  const Tensor& ge = *g.find(params.embedding);

  auto row_norm = [&](int64_t row) {
    double s = 0;
    for (int64_t cidx = 0; cidx < cfg.embedding_dim; ++cidx) s += std::abs(ge.at(row, cidx));
    return s;
  };
  CHECK(row_norm(Vocabulary::kBos) > 0);  // input path only
  CHECK(row_norm(6) > 0);                 // both paths
  CHECK(row_norm(7) > 0);                 // output path only (normalization)
}

TEST_CASE("lm gradients match finite differences (per-layer coverage)") {
  LmConfig cfg = small_config(8, 4, 5);
  cfg.num_layers = 2;
  for (auto mode : {SoftmaxMode::kRelaxed, SoftmaxMode::kVanilla}) {
    cfg.softmax = mode;
    LmParams params = make_lm(cfg, 99);
    std::vector<int64_t> a{5, 6};
    std::vector<int64_t> b{7, 5};

    auto build = [&](Tape& tape) {
      Rng rng(0);
      std::vector<const std::vector<int64_t>*> ctx{&a};
      auto batch = encode_contexts(tape, params, ctx, false, rng);
      Var cond = conditional_logprobs(tape, params, batch, {{0, &b}}, false, rng);
      Var uncond = unconditional_logprobs(tape, params, {&b}, false, rng);
      return tape.sub(tape.sum(uncond), tape.scale(tape.sum(cond), 2.0));
    };

    Tape tape;
    GradMap analytic = tape.backward(build(tape));
    auto loss_fn = [&]() {
      Tape t;
      return build(t).value().item();
    };
    auto res = spe::test::fd_compare(params.all_params(), loss_fn, analytic);
    CHECK_MESSAGE(res.max_rel_err < 1e-4, res.worst);
  }
}

TEST_CASE("train-mode dropout changes outputs, eval mode does not") {
  LmParams params = make_lm(small_config(10, 4, 6), 2);
  Rng rng1(1), rng2(2);
  auto t1 = lm_forward(params, {5, 6, 7}, nullptr, true, &rng1);
  auto t2 = lm_forward(params, {5, 6, 7}, nullptr, true, &rng2);
  // different dropout masks give different distributions somewhere
  bool differs = false;
  for (size_t t = 0; t < t1.step_log_probs.size() && !differs; ++t) {
    for (int64_t i = 0; i < 10; ++i) {
      if (t1.step_log_probs[t][i] != t2.step_log_probs[t][i]) {
        differs = true;
        break;
      }
    }
  }
  CHECK(differs);
  CHECK_THROWS(lm_forward(params, {5}, nullptr, true, nullptr));  // train needs rng
}
