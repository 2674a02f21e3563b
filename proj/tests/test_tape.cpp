#include <doctest.h>

#include <cmath>
#include <cstring>

#include "psst/rng.hpp"
#include "psst/tape.hpp"
#include "support/finite_diff.hpp"

using namespace psst;
using ad::Node;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = lo + (hi - lo) * rng.uniform();
  }
  return t;
}

}  // namespace

TEST_CASE("matmul value fixtures") {
  Tape tape;
  SUBCASE("identity times M") {
    Node* eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Node* m = tape.constant(Tensor({2, 2}, {3, -1, 2, 5}));
    Node* out = tape.matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out->value[i] == m->value[i]);
  }
  SUBCASE("row times column") {
    Node* a = tape.constant(Tensor({1, 2}, {1, 2}));
    Node* b = tape.constant(Tensor({2, 1}, {3, 4}));
    Node* out = tape.matmul(a, b);
    CHECK(out->value[0] == doctest::Approx(11.0).epsilon(1e-15));
  }
  SUBCASE("shape mismatch throws") {
    Node* a = tape.constant(Tensor({2, 3}));
    Node* b = tape.constant(Tensor({2, 3}));
    CHECK_THROWS_AS(tape.matmul(a, b), ShapeError);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  Tensor av = random_tensor({3, 3}, rng);
  Tensor bv = random_tensor({3, 3}, rng);
  const Tensor w = random_tensor({3, 3}, rng);

  // scalar projection sum(W .* (A B)) exercises the full Jacobian
  auto forward = [&](bool grad) -> std::pair<double, std::vector<Tensor>> {
    Tape tape;
    Node* a = tape.leaf(av, true);
    Node* b = tape.leaf(bv, true);
    Node* out = tape.mul(tape.matmul(a, b), tape.constant(w));
    Node* s = tape.sum(out);
    if (grad) {
      tape.backward(s);
      return {s->value[0], {a->grad, b->grad}};
    }
    return {s->value[0], {}};
  };

  auto [value, grads] = forward(true);
  (void)value;
  auto f = [&]() { return forward(false).first; };
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(std::fabs(test_fd::central_diff(f, &av[i]) - grads[0][i]) < 1e-6);
    CHECK(std::fabs(test_fd::central_diff(f, &bv[i]) - grads[1][i]) < 1e-6);
  }
}

TEST_CASE("softmax fixtures") {
  Tape tape;
  SUBCASE("symmetry") {
    Node* z = tape.constant(Tensor({3}, {0, 0, 0}));
    Node* y = tape.softmax(z, 0);
    for (int i = 0; i < 3; ++i) {
      CHECK(y->value[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    }
  }
  SUBCASE("dominance") {
    Node* z = tape.constant(Tensor({3}, {1000, 0, 0}));
    Node* y = tape.softmax(z, 0);
    CHECK(y->value[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y->value[1] <= 1e-12);
    CHECK(y->value[2] <= 1e-12);
  }
  SUBCASE("sum-to-one and positivity on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      Tape t2;
      Node* z = t2.constant(random_tensor({7}, rng, -30, 30));
      Node* y = t2.softmax(z, 0);
      double total = 0;
      for (std::size_t i = 0; i < 7; ++i) {
        CHECK(y->value[i] > 0.0);
        total += y->value[i];
      }
      CHECK(std::fabs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax Jacobian matches finite differences") {
  Tensor zv({3}, {1, 2, 3});
  for (std::size_t out_i = 0; out_i < 3; ++out_i) {
    Tape tape;
    Node* z = tape.leaf(zv, true);
    Node* y = tape.softmax(z, 0);
    Node* yi = tape.gather(y, {out_i});
    tape.backward(yi);
    auto f = [&]() {
      Tape t2;
      Node* z2 = t2.leaf(zv, false);
      return t2.gather(t2.softmax(z2, 0), {out_i})->value[0];
    };
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(test_fd::central_diff(f, &zv[j]) ==
            doctest::Approx(z->grad[j]).epsilon(1e-6));
    }
  }
}

TEST_CASE("cosine fixtures") {
  Tape tape;
  Node* v = tape.constant(Tensor({3}, {0.3, -1.2, 0.5}));
  Node* v2 = tape.constant(Tensor({3}, {0.6, -2.4, 1.0}));
  CHECK(tape.cosine(v, v)->value[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tape.cosine(v, v2)->value[0] == doctest::Approx(1.0).epsilon(1e-12));
  Node* ex = tape.constant(Tensor({2}, {1, 0}));
  Node* ey = tape.constant(Tensor({2}, {0, 1}));
  CHECK(tape.cosine(ex, ey)->value[0] == doctest::Approx(0.0).epsilon(1e-15));
  Node* zero = tape.constant(Tensor({2}, {0, 0}));
  CHECK_THROWS_AS(tape.cosine(ex, zero), DegenerateInputError);
}

TEST_CASE("elementwise domain errors") {
  Tape tape;
  Node* neg = tape.constant(Tensor({2}, {1.0, -0.5}));
  CHECK_THROWS_AS(tape.log(neg), DomainError);
  Node* zero = tape.constant(Tensor({1}, {0.0}));
  CHECK_THROWS_AS(tape.log(zero), DomainError);
}

TEST_CASE("backward basics") {
  SUBCASE("sum of a parameter gives all-ones gradient") {
    Tape tape;
    Node* p = tape.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), true);
    tape.backward(tape.sum(p));
    for (std::size_t i = 0; i < 6; ++i) CHECK(p->grad[i] == 1.0);
  }
  SUBCASE("two backward sweeps produce identical gradients") {
    Rng rng(3);
    Tape tape;
    Node* x = tape.leaf(random_tensor({1, 4}, rng), true);
    Node* w = tape.leaf(random_tensor({4, 2}, rng), true);
    Node* loss = tape.mean(tape.tanh(tape.matmul(x, w)));
    tape.backward(loss);
    const Tensor g1 = w->grad;
    tape.backward(loss);
    CHECK(std::memcmp(g1.data().data(), w->grad.data().data(),
                      g1.numel() * sizeof(double)) == 0);
  }
  SUBCASE("non-scalar root is a contract error") {
    Tape tape;
    Node* p = tape.leaf(Tensor({2}, {1, 2}), true);
    CHECK_THROWS_AS(tape.backward(p), ContractError);
  }
  SUBCASE("tanh(x w) matches finite differences") {
    Rng rng(7);
    Tensor xv = random_tensor({1, 3}, rng);
    Tensor wv = random_tensor({3, 1}, rng);
    Tape tape;
    Node* x = tape.leaf(xv, true);
    Node* w = tape.leaf(wv, true);
    Node* out = tape.sum(tape.tanh(tape.matmul(x, w)));
    tape.backward(out);
    auto f = [&]() {
      Tape t2;
      return t2.sum(t2.tanh(t2.matmul(t2.leaf(xv, false),
                                      t2.leaf(wv, false))))
          ->value[0];
    };
    const double err = test_fd::max_rel_error(
        f, {{&xv, &x->grad}, {&wv, &w->grad}});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("gradient accumulation across shared consumers") {
  // One node feeding two consumers must receive both contributions.
  Tape tape;
  Node* x = tape.leaf(Tensor({1}, {0.7}), true);
  Node* y = tape.add(tape.mul(x, x), tape.scale(x, 3.0));  // x^2 + 3x
  tape.backward(tape.sum(y));
  CHECK(x->grad[0] == doctest::Approx(2 * 0.7 + 3.0).epsilon(1e-12));
}

TEST_CASE("randomized finite-difference gate across the op suite") {
  // 100 randomized trials; backward within 1e-5 relative error of central
  // differences for composite graphs touching every differentiable op.
  Rng rng(2024);
  int trial = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int which = trial++ % 4;
    Tensor a = random_tensor({2, 3}, rng, -0.9, 0.9);
    Tensor b = random_tensor({3, 2}, rng, -0.9, 0.9);
    Tensor c = random_tensor({1, 2}, rng, 0.1, 1.5);

    auto build = [&](Tape& tape, bool rg,
                     std::vector<Node*>* leaves) -> Node* {
      Node* na = tape.leaf(a, rg);
      Node* nb = tape.leaf(b, rg);
      Node* nc = tape.leaf(c, rg);
      if (leaves) *leaves = {na, nb, nc};
      Node* mm = tape.matmul(na, nb);           // [2,2]
      Node* row0 = tape.row(mm, 0);             // [1,2]
      switch (which) {
        case 0:
          return tape.mean(tape.tanh(tape.add(row0, nc)));
        case 1:
          return tape.sum(tape.mul(tape.sigmoid(row0), nc));
        case 2:
          return tape.cosine(tape.exp(tape.scale(row0, 0.5)), nc);
        default:
          return tape.mean(tape.log(tape.add_scalar(
              tape.mul(tape.softmax(row0, 1), nc), 1.0)));
      }
    };

    Tape tape;
    std::vector<Node*> leaves;
    Node* loss = build(tape, true, &leaves);
    tape.backward(loss);

    auto f = [&]() {
      Tape t2;
      return build(t2, false, nullptr)->value[0];
    };
    const double err = test_fd::max_rel_error(
        f, {{&a, &leaves[0]->grad}, {&b, &leaves[1]->grad},
            {&c, &leaves[2]->grad}});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("tape replay is bit-deterministic") {
  Rng rng(99);
  const Tensor xv = random_tensor({1, 5}, rng);
  const Tensor wv = random_tensor({5, 4}, rng);
  auto run = [&](Tensor* grad_out) {
    Tape tape;
    Node* x = tape.leaf(xv, true);
    Node* w = tape.leaf(wv, true);
    Node* s = tape.mean(tape.softmax(tape.matmul(x, w), 1));
    tape.backward(s);
    *grad_out = w->grad;
    return s->value[0];
  };
  Tensor g1, g2;
  const double v1 = run(&g1);
  const double v2 = run(&g2);
  CHECK(std::memcmp(&v1, &v2, sizeof v1) == 0);
  CHECK(std::memcmp(g1.data().data(), g2.data().data(),
                    g1.numel() * sizeof(double)) == 0);
}

TEST_CASE("straight-through node carries forward value, backward binding") {
  Tape tape;
  Node* probs = tape.leaf(Tensor({1, 3}, {0.2, 0.5, 0.3}), true);
  Node* st = tape.straight_through(probs, Tensor::one_hot(3, 1));
  CHECK(st->value[0] == 0.0);
  CHECK(st->value[1] == 1.0);
  Node* loss = tape.sum(tape.mul(st, tape.constant(Tensor({1, 3},
                                                          {1.0, 2.0, 4.0}))));
  tape.backward(loss);
  CHECK(probs->grad[0] == 1.0);
  CHECK(probs->grad[1] == 2.0);
  CHECK(probs->grad[2] == 4.0);
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  Tensor bad({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(tape.leaf(bad, false), NumericError);
  Node* big = tape.constant(Tensor({1}, {1e308}));
  CHECK_THROWS_AS(tape.exp(big), NumericError);
}
