#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "gradcheck.hpp"
#include "moepp/autograd.hpp"
#include "moepp/ops.hpp"

using namespace moepp;
using moepp::testing::gradcheck;
using moepp::testing::random_tensor;
using moepp::testing::weighted_sum;

namespace {
constexpr int kSeeds = 20;
constexpr double kGradTol = 1e-3;

void check_values(const Tensor& t, std::initializer_list<double> expected, double tol = 0.0) {
  REQUIRE(t.numel() == expected.size());
  std::size_t i = 0;
  for (double e : expected) {
    CHECK(std::abs(t.at(i) - e) <= tol);
    ++i;
  }
}
}  // namespace

TEST_CASE("tensor construction enforces shape invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({1, 1, 1}, {1}), DimensionError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6);
  CHECK_FALSE(t.has_grad());
  CHECK(t.mutable_grad().size() == 6);
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    auto c = matmul(Tensor::identity(2), Tensor::matrix({{1, 2}, {3, 4}}));
    check_values(c, {1, 2, 3, 4});
  }
  SUBCASE("row times column") {
    auto c = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
    CHECK(c.shape() == Shape{1, 1});
    CHECK(c.item() == 11);
  }
  SUBCASE("inner dimension mismatch") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  }
  SUBCASE("gradient matches central differences") {
    for (int seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(seed);
      auto a = random_tensor({3, 4}, rng);
      auto b = random_tensor({4, 2}, rng);
      auto res = gradcheck([&] { return weighted_sum(matmul(a, b), 99); }, {a, b});
      CHECK(res.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("softmax") {
  check_values(softmax(Tensor::vector({0, 0})), {0.5, 0.5});
  check_values(softmax(Tensor::vector({1000, 1000})), {0.5, 0.5});
  // 40-digit reference values of e^i / (e + e^2 + e^3).
  check_values(softmax(Tensor::vector({1, 2, 3})),
               {0.0900305731703804579980221, 0.2447284710547976524729596, 0.6652409557748218895290183}, 1e-12);

  SUBCASE("rows sum to one with entries in (0, 1)") {
    std::mt19937_64 rng(7);
    for (int seed = 0; seed < kSeeds; ++seed) {
      auto x = random_tensor({5, 9}, rng, 4.0, false);
      auto y = softmax(x, 1);
      for (std::size_t r = 0; r < 5; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 9; ++c) {
          CHECK(y.at(r, c) > 0.0);
          CHECK(y.at(r, c) < 1.0);
          s += y.at(r, c);
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    }
  }
  SUBCASE("column axis") {
    auto y = softmax(Tensor::matrix({{0, 1}, {0, 1}}), 0);
    check_values(y, {0.5, 0.5, 0.5, 0.5}, 1e-15);
  }
  SUBCASE("gradient") {
    for (int seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(seed);
      auto x = random_tensor({3, 5}, rng);
      CHECK(gradcheck([&] { return weighted_sum(softmax(x, 1), 5); }, {x}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(softmax(x, 0), 6); }, {x}).max_rel_error < kGradTol);
    }
  }
}

TEST_CASE("topk_indices") {
  CHECK(topk_indices(Tensor::vector({0.1, 0.9, 0.5}), 2) == std::vector<std::size_t>{1, 2});
  CHECK(topk_indices(Tensor::vector({0.5, 0.5}), 1) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(topk_indices(Tensor::vector({1, 2}), 0), ArgumentError);
  CHECK_THROWS_AS(topk_indices(Tensor::vector({1, 2}), 3), ArgumentError);

  SUBCASE("matches a full-sort oracle") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> coarse(0, 5);  // forces frequent ties
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> v(16);
      for (auto& x : v) x = trial % 2 ? coarse(rng) : std::normal_distribution<double>()(rng);
      std::vector<std::size_t> order(16);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] > v[b]; });
      order.resize(2);
      CHECK(topk_indices(v, 2) == order);
    }
  }
  SUBCASE("permutation consistency") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> v(10);
      for (auto& x : v) x = std::normal_distribution<double>()(rng);
      std::vector<std::size_t> perm(10);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> permuted(10);
      for (std::size_t i = 0; i < 10; ++i) permuted[perm[i]] = v[i];
      auto base = topk_indices(v, 3);
      auto moved = topk_indices(permuted, 3);
      for (std::size_t j = 0; j < 3; ++j) CHECK(moved[j] == perm[base[j]]);
    }
  }
}

TEST_CASE("elementwise suite") {
  CHECK(gelu(Tensor::vector({0.0})).item() == 0.0);
  SUBCASE("cross entropy of uniform logits is ln V") {
    for (std::size_t vocab : {2u, 7u, 65u}) {
      Tensor logits = Tensor::full({3, vocab}, 0.25);
      std::vector<std::size_t> targets{0, vocab - 1, vocab / 2};
      CHECK(cross_entropy(logits, targets).item() == doctest::Approx(std::log(double(vocab))).epsilon(1e-14));
    }
  }
  SUBCASE("cross entropy rejects invalid targets") {
    std::vector<std::size_t> bad{4};
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 4}), bad), ArgumentError);
  }
  SUBCASE("broadcasting") {
    auto y = add(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({10, 20}));
    check_values(y, {11, 22, 13, 24});
    auto z = mul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{2}, {3}}));
    check_values(z, {2, 4, 9, 12});
    CHECK_THROWS_AS(add(Tensor::zeros({2, 2}), Tensor::zeros({3})), DimensionError);
  }
  SUBCASE("gradients") {
    for (int seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(100 + seed);
      auto a = random_tensor({4, 3}, rng);
      auto b = random_tensor({4, 3}, rng);
      auto row = random_tensor({1, 3}, rng);
      auto col = random_tensor({4, 1}, rng);
      auto pos = Tensor({4, 3}, std::vector<double>(12, 0.0), true);
      for (std::size_t i = 0; i < 12; ++i) pos.mutable_data()[i] = 1.5 + std::abs(b.at(i));
      std::vector<std::size_t> targets{0, 2, 1, 2};
      CHECK(gradcheck([&] { return weighted_sum(add(a, row), 1); }, {a, row}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(sub(a, col), 2); }, {a, col}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(mul(a, b), 3); }, {a, b}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(div(a, pos), 4); }, {a, pos}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(scale(a, -2.5), 5); }, {a}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(gelu(a), 6); }, {a}).max_rel_error < kGradTol);
      auto off_kink = Tensor({4, 3}, std::vector<double>(12), true);  // |v| >= 0.1 keeps relu smooth under +-h
      for (std::size_t i = 0; i < 12; ++i) off_kink.mutable_data()[i] = a.at(i) + std::copysign(0.1, a.at(i));
      CHECK(gradcheck([&] { return weighted_sum(relu(off_kink), 6); }, {off_kink}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return cross_entropy(a, targets); }, {a}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(rms_norm(a, row), 7); }, {a, row}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(mean(a, 0), 8); }, {a}).max_rel_error < kGradTol);
      CHECK(gradcheck([&] { return weighted_sum(transpose(a), 9); }, {a}).max_rel_error < kGradTol);
    }
  }
  SUBCASE("structural op gradients") {
    std::mt19937_64 rng(3);
    auto a = random_tensor({5, 4}, rng);
    auto b = random_tensor({2, 4}, rng);
    std::vector<std::size_t> idx{4, 0, 4};
    std::vector<std::size_t> cols{1, 3, 0};
    CHECK(gradcheck([&] { return weighted_sum(gather_rows(a, idx), 1); }, {a}).max_rel_error < kGradTol);
    CHECK(gradcheck([&] { return weighted_sum(gather_elements(a, idx, cols), 1); }, {a}).max_rel_error < kGradTol);
    CHECK(gradcheck([&] { return weighted_sum(index_add_rows(a, b, std::vector<std::size_t>{1, 1}), 2); }, {a, b})
              .max_rel_error < kGradTol);
    CHECK(gradcheck([&] { return weighted_sum(concat_rows({a, b}), 3); }, {a, b}).max_rel_error < kGradTol);
    CHECK(gradcheck([&] { return weighted_sum(concat_cols({slice_cols(a, 1, 3), slice_rows(a, 0, 5)}), 4); }, {a})
              .max_rel_error < kGradTol);
    CHECK(gradcheck([&] { return weighted_sum(reshape(a, {20}), 5); }, {a}).max_rel_error < kGradTol);
  }
}

TEST_CASE("tape semantics") {
  SUBCASE("backward visits nodes in reverse recording order") {
    Tensor x = Tensor::matrix({{1, 2}}, true);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(gelu(scale(x, 2.0)));
    }
    REQUIRE(tape.size() == 3);
    CHECK(tape.nodes()[0].op == "scale");
    CHECK(tape.nodes()[2].op == "sum");
    tape.backward(loss);
    CHECK(tape.visit_order() == std::vector<std::size_t>{2, 1, 0});
    CHECK(tape.consumed());
    CHECK_THROWS_AS(tape.backward(loss), ArgumentError);
  }
  SUBCASE("nothing is recorded without an active tape or without grad inputs") {
    Tape tape;
    TapeScope scope(tape);
    (void)add(Tensor::zeros({2}), Tensor::zeros({2}));
    CHECK(tape.size() == 0);
  }
  SUBCASE("composed graph equals the hand-written chain rule") {
    // loss = sum(gelu(a * w) * c) with scalar-like 1x1 tensors.
    const double a0 = 0.7, w0 = -1.3, c0 = 2.1;
    Tensor a({1, 1}, {a0}, true), w({1, 1}, {w0}, true), c({1, 1}, {c0}, true);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(mul(gelu(mul(a, w)), c));
    }
    tape.backward(loss);
    const double z = a0 * w0;
    const double phi = 0.5 * (1 + std::erf(z / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI);
    const double dgelu = phi + z * pdf;
    CHECK(a.grad()[0] == doctest::Approx(c0 * dgelu * w0).epsilon(1e-14));
    CHECK(w.grad()[0] == doctest::Approx(c0 * dgelu * a0).epsilon(1e-14));
    CHECK(c.grad()[0] == doctest::Approx(z * phi).epsilon(1e-14));
  }
  SUBCASE("non-finite outputs abort with NumericalError") {
    CHECK_THROWS_AS(div(Tensor::vector({1.0}), Tensor::vector({0.0})), NumericalError);
    CHECK_THROWS_AS(scale(Tensor::vector({1e308}), 10.0), NumericalError);
  }
  SUBCASE("independent tapes on separate threads") {
    auto run = [](double start, double* out) {
      Tensor x({1, 1}, {start}, true);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = sum(mul(x, x));
      }
      tape.backward(loss);
      *out = x.grad()[0];
    };
    double g1 = 0, g2 = 0;
    std::thread t1(run, 3.0, &g1), t2(run, -5.0, &g2);
    t1.join();
    t2.join();
    CHECK(g1 == 6.0);
    CHECK(g2 == -10.0);
    CHECK(active_tape() == nullptr);
  }
}
