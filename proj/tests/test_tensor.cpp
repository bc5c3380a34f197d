#include <cmath>
#include <limits>
#include <omp.h>

#include "doctest.h"
#include "spe/adam.hpp"
#include "spe/kernels.hpp"
#include "spe/tensor.hpp"

using namespace spe;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng) {
  return Tensor::uniform(std::move(shape), rng, -1.0, 1.0);
}

// Textbook triple loop as the reference for the blocked kernels.
Tensor naive_mm(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  const int64_t m = ta ? a.cols() : a.rows();
  const int64_t k = ta ? a.rows() : a.cols();
  const int64_t n = tb ? b.rows() : b.cols();
  Tensor c({m, n});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t p = 0; p < k; ++p) {
        const double av = ta ? a.at(p, i) : a.at(i, p);
        const double bv = tb ? b.at(j, p) : b.at(p, j);
        s += av * bv;
      }
      c.at(i, j) = s;
    }
  }
  return c;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  t.at(1, 2) = 5.0;
  CHECK(t[5] == 5.0);
  CHECK(t.all_finite());
  t.at(0, 0) = std::nan("");
  CHECK(!t.all_finite());

  CHECK(Tensor::scalar(3.5).item() == 3.5);
  CHECK_THROWS(Tensor({2, 2}).item());
  CHECK_THROWS(Tensor({0, 2}));
}

TEST_CASE("matmul kernels match the naive reference") {
  Rng rng(11);
  auto close = [](const Tensor& got, const Tensor& want) {
    for (int64_t i = 0; i < got.numel(); ++i) {
      // summation order differs, so allow rounding noise relative to magnitude
      if (std::abs(got[i] - want[i]) > 1e-11 * (1.0 + std::abs(want[i]))) return false;
    }
    return true;
  };
  for (auto [m, k, n] : {std::tuple{3, 5, 7}, {64, 64, 64}, {65, 127, 130}, {1, 9, 67}, {17, 1, 3}}) {
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor at = random_tensor({k, m}, rng);
    Tensor bt = random_tensor({n, k}, rng);

    Tensor c({m, n});
    mm_nn(a.data(), b.data(), c.data(), m, k, n);
    CHECK(close(c, naive_mm(a, b, false, false)));

    Tensor c2({m, n});
    mm_nt(a.data(), bt.data(), c2.data(), m, k, n);
    CHECK(close(c2, naive_mm(a, bt, false, true)));

    Tensor c3({m, n});
    mm_tn(at.data(), b.data(), c3.data(), m, k, n);
    CHECK(close(c3, naive_mm(at, b, true, false)));
  }
}

TEST_CASE("matmul results do not depend on the thread count") {
  Rng rng(7);
  Tensor a = random_tensor({37, 53}, rng);
  Tensor b = random_tensor({53, 41}, rng);

  const int max_threads = omp_get_max_threads();
  Tensor c1({37, 41});
  omp_set_num_threads(1);
  mm_nn(a.data(), b.data(), c1.data(), 37, 53, 41);

  Tensor c2({37, 41});
  omp_set_num_threads(std::max(2, max_threads));
  mm_nn(a.data(), b.data(), c2.data(), 37, 53, 41);
  omp_set_num_threads(max_threads);

  for (int64_t i = 0; i < c1.numel(); ++i) CHECK(c1[i] == c2[i]);  // bitwise
}

TEST_CASE("clip_by_batch_norm follows the norm/batch-size rule") {
  Parameter p("p", Tensor({4}));

  auto grads_with_norm = [&](double norm) {
    GradMap g;
    Tensor t({4});
    t[0] = norm;  // a single nonzero component gives an exact global norm
    g.entries.emplace_back(&p, t);
    return g;
  };

  SUBCASE("under threshold: unchanged") {
    GradMap g = grads_with_norm(4.0);
    clip_by_batch_norm(g, 16);
    CHECK(g.global_norm() == doctest::Approx(4.0).epsilon(1e-15));
  }

  SUBCASE("over threshold: rescaled to batch * max_ratio") {
    GradMap g = grads_with_norm(40.0);
    clip_by_batch_norm(g, 16);
    CHECK(g.global_norm() == doctest::Approx(16.0).epsilon(1e-12));
    CHECK(g.entries[0].second[0] == doctest::Approx(40.0 * 16.0 / 40.0).epsilon(1e-12));
  }

  SUBCASE("all-zero gradients pass through") {
    GradMap g = grads_with_norm(0.0);
    clip_by_batch_norm(g, 3);
    CHECK(g.global_norm() == 0.0);
  }

  SUBCASE("idempotence: clip(clip(g)) == clip(g)") {
    Rng rng(3);
    GradMap g;
    Tensor t = random_tensor({16}, rng);
    t.add_scaled(t, 20.0);
    g.entries.emplace_back(&p, t);
    clip_by_batch_norm(g, 2);
    const double once = g.global_norm();
    Tensor after_once = g.entries[0].second;
    clip_by_batch_norm(g, 2);
    CHECK(g.global_norm() == doctest::Approx(once).epsilon(1e-15));
    for (int64_t i = 0; i < 16; ++i) CHECK(g.entries[0].second[i] == doctest::Approx(after_once[i]).epsilon(1e-15));
  }

  SUBCASE("batch size must be positive") {
    GradMap g = grads_with_norm(1.0);
    CHECK_THROWS(clip_by_batch_norm(g, 0));
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged and advances t") {
  Parameter p("p", Tensor::full({3}, 2.5));
  Adam opt;
  GradMap g;
  g.entries.emplace_back(&p, Tensor({3}));
  opt.step(g);
  CHECK(opt.t() == 1);
  for (int64_t i = 0; i < 3; ++i) CHECK(p.value[i] == 2.5);
}

TEST_CASE("adam: first step with unit gradient moves by about -lr") {
  // Hand evaluation at t=1: m-hat = g, v-hat = g^2, step = lr * g / (|g| + eps).
  Parameter p("p", Tensor::scalar(0.0));
  Adam opt(AdamConfig{1e-4, 0.9, 0.999, 1e-8});
  GradMap g;
  g.entries.emplace_back(&p, Tensor::scalar(1.0));
  opt.step(g);
  const double expected = -1e-4 * 1.0 / (1.0 + 1e-8);
  CHECK(p.value[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam: two identical steps decrease monotonically with near-equal magnitude") {
  Parameter p("p", Tensor::scalar(0.0));
  Adam opt(AdamConfig{1e-4, 0.9, 0.999, 1e-8});
  auto unit_grad = [&]() {
    GradMap g;
    g.entries.emplace_back(&p, Tensor::scalar(1.0));
    return g;
  };
  auto g1 = unit_grad();
  opt.step(g1);
  const double p1 = p.value[0];
  auto g2 = unit_grad();
  opt.step(g2);
  const double p2 = p.value[0];
  CHECK(opt.t() == 2);
  CHECK(p1 < 0.0);
  CHECK(p2 < p1);  // monotone decrease
  const double d1 = std::abs(p1), d2 = std::abs(p2 - p1);
  CHECK(std::abs(d2 - d1) / d1 < 0.01);
}

TEST_CASE("adam rejects shape mismatches and non-finite gradients") {
  Parameter p("p", Tensor({3}));
  Adam opt;

  GradMap bad_shape;
  bad_shape.entries.emplace_back(&p, Tensor({4}));
  CHECK_THROWS(opt.step(bad_shape));

  GradMap bad_value;
  Tensor t({3});
  t[1] = std::numeric_limits<double>::infinity();
  bad_value.entries.emplace_back(&p, t);
  CHECK_THROWS(opt.step(bad_value));
}

TEST_CASE("rng streams are reproducible and substreams are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

  Rng base(7);
  Rng s1 = base.derive("epoch", 1);
  Rng s2 = base.derive("epoch", 2);
  CHECK(s1.next() != s2.next());

  // uniform_int stays in range and hits every bucket eventually
  Rng r(5);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 2000; ++i) ++seen[static_cast<size_t>(r.uniform_int(7))];
  for (int c : seen) CHECK(c > 0);
}
