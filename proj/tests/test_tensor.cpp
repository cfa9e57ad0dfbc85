#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pipefold/errors.hpp"
#include "pipefold/optim.hpp"
#include "pipefold/rng.hpp"
#include "pipefold/tensor.hpp"
#include "support/oracles.hpp"

using namespace pipefold;
using pipefold::test::grad_check;
using pipefold::test::random_tensor;

TEST_CASE("matmul basics") {
  // identity
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(id, a);
  CHECK(std::equal(r.data().begin(), r.data().end(), a.data().begin()));

  // zero annihilation
  Tensor z = Tensor::zeros({2, 2});
  Tensor rz = matmul(z, a);
  for (float v : rz.data()) CHECK(v == 0.f);

  // hand-computed product
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  Tensor ab = matmul(a, b);
  const float expected[] = {19, 22, 43, 50};
  for (int i = 0; i < 4; ++i) CHECK(ab.data()[i] == doctest::Approx(expected[i]));

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                       doctest::Contains("[2 x 3]"), ShapeError);
}

TEST_CASE("softmax rows") {
  Tensor t = Tensor::from_data({1, 3}, {0, 0, 0});
  auto r = softmax_rows(t);
  for (float v : r.data()) CHECK(v == doctest::Approx(1.f / 3.f));

  Tensor sat = Tensor::from_data({1, 2}, {1000, 0});
  auto rs = softmax_rows(sat);
  CHECK(rs.data()[0] == doctest::Approx(1.f).epsilon(1e-6));
  CHECK(rs.data()[1] == doctest::Approx(0.f).epsilon(1e-6));
  CHECK(rs.all_finite());

  Tensor two = Tensor::from_data({1, 2}, {1, 2});
  auto rt = softmax_rows(two);
  CHECK(rt.data()[0] == doctest::Approx(0.26894).epsilon(1e-4));
  CHECK(rt.data()[1] == doctest::Approx(0.73106).epsilon(1e-4));
}

TEST_CASE("softmax rows sum to one on random inputs") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor t = random_tensor({4, 7}, gen, trial % 2 ? 10.f : 0.3f);
    auto r = softmax_rows(t);
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int j = 0; j < 7; ++j) s += r.data()[i * 7 + j];
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer norm") {
  Tensor gamma = Tensor::full({4}, 1.f);
  Tensor beta = Tensor::zeros({4});

  // constant row: eps keeps the zero-variance case finite and exactly zero
  Tensor c = Tensor::full({1, 4}, 3.f);
  auto rc = layer_norm(c, gamma, beta, 1e-5f);
  for (float v : rc.data()) CHECK(v == doctest::Approx(0.f));

  // gamma = 0 collapses onto beta
  Tensor g0 = Tensor::zeros({4});
  Tensor b = Tensor::from_data({4}, {1, 2, 3, 4});
  Tensor x = Tensor::from_data({1, 4}, {0.3f, -2.f, 5.f, 0.f});
  auto rb = layer_norm(x, g0, b, 1e-5f);
  for (int i = 0; i < 4; ++i) CHECK(rb.data()[i] == doctest::Approx(b.data()[i]));

  // hand-computed two-element row
  Tensor two = Tensor::from_data({1, 2}, {1, 3});
  Tensor g2 = Tensor::full({2}, 1.f);
  Tensor b2 = Tensor::zeros({2});
  auto r2 = layer_norm(two, g2, b2, 1e-8f);
  CHECK(r2.data()[0] == doctest::Approx(-1.f).epsilon(1e-3));
  CHECK(r2.data()[1] == doctest::Approx(1.f).epsilon(1e-3));

  CHECK_THROWS_AS(layer_norm(two, g2, b2, 0.f), ValueError);
}

TEST_CASE("layer norm rows standardized on random inputs") {
  std::mt19937_64 gen(5);
  Tensor gamma = Tensor::full({6}, 1.f);
  Tensor beta = Tensor::zeros({6});
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = random_tensor({3, 6}, gen, 2.f);
    auto r = layer_norm(t, gamma, beta, 1e-7f);
    for (int i = 0; i < 3; ++i) {
      double mean = 0, var = 0;
      for (int j = 0; j < 6; ++j) mean += r.data()[i * 6 + j];
      mean /= 6;
      for (int j = 0; j < 6; ++j) var += (r.data()[i * 6 + j] - mean) * (r.data()[i * 6 + j] - mean);
      var /= 6;
      CHECK(std::fabs(mean) < 1e-5);
      CHECK(std::fabs(var - 1.0) < 1e-4);
    }
  }
}

TEST_CASE("cosine similarity") {
  Tensor u = Tensor::from_data({3}, {1, 2, 3});
  CHECK(cosine_similarity(u, u).item() == doctest::Approx(1.f));

  Tensor ex = Tensor::from_data({2}, {1, 0});
  Tensor ey = Tensor::from_data({2}, {0, 1});
  CHECK(cosine_similarity(ex, ey).item() == doctest::Approx(0.f));

  Tensor diag = Tensor::from_data({2}, {1, 1});
  CHECK(cosine_similarity(ex, diag).item() == doctest::Approx(0.70711f).epsilon(1e-4));

  Tensor zero = Tensor::zeros({2});
  CHECK_THROWS_AS(cosine_similarity(ex, zero), DegenerateVectorError);
  CHECK_THROWS_AS(cosine_similarity(ex, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("cross entropy") {
  // saturated correct logit
  Tensor sat = Tensor::from_data({1, 3}, {1000, 0, 0});
  CHECK(cross_entropy(sat, {0}, -1).item() == doctest::Approx(0.f).epsilon(1e-6));

  // uniform logits -> ln V
  Tensor uni = Tensor::zeros({2, 4});
  CHECK(cross_entropy(uni, {1, 3}, -1).item() == doctest::Approx(std::log(4.f)).epsilon(1e-4));

  // two-class hand computation: -log softmax([2,0])[0] = ln(1 + e^-2)
  Tensor two = Tensor::from_data({1, 2}, {2, 0});
  CHECK(cross_entropy(two, {0}, -1).item() ==
        doctest::Approx(std::log(1.f + std::exp(-2.f))).epsilon(1e-4));

  // ignored positions
  Tensor l = Tensor::zeros({2, 4});
  CHECK(cross_entropy(l, {0, -1}, -1).item() == doctest::Approx(std::log(4.f)).epsilon(1e-4));
  CHECK_THROWS_AS(cross_entropy(l, {-1, -1}, -1), EmptyBatchError);
  CHECK_THROWS_AS(cross_entropy(l, {0, 7}, -1), ValueError);
}

TEST_CASE("backward basics") {
  // sum -> ones
  std::mt19937_64 gen(3);
  Tensor p = random_tensor({3, 2}, gen);
  p.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(p, &tape);
  tape.backward(loss);
  for (float g : p.grad()) CHECK(g == doctest::Approx(1.f));

  // frozen tensors never receive grad
  Tensor frozen = Tensor::full({2, 2}, 1.f);
  frozen.set_requires_grad(false);
  Tensor train = Tensor::full({2, 2}, 2.f).set_requires_grad(true);
  Tape t2;
  Tensor l2 = sum(mul(frozen, train, &t2), &t2);
  t2.backward(l2);
  CHECK(!frozen.has_grad());
  CHECK(train.has_grad());

  // non-scalar loss rejected
  Tape t3;
  Tensor nl = add(train, train, &t3);
  CHECK_THROWS_AS(t3.backward(nl), ShapeError);
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor p = Tensor::scalar(1.f).set_requires_grad(true);
  {
    Tape t;
    Tensor l = sum(p, &t);
    t.backward(l);
  }
  {
    Tape t;
    Tensor l = sum(p, &t);
    t.backward(l);
  }
  CHECK(p.grad()[0] == doctest::Approx(2.f));
  p.zero_grad();
  CHECK(!p.has_grad());
}

TEST_CASE("finite differences per op") {
  std::mt19937_64 gen(17);
  auto run = [&](const char* name, std::function<Tensor(Tape*)> fn, std::vector<Tensor> inputs) {
    auto r = grad_check(fn, inputs);
    INFO(name, ": ", r.worst);
    CHECK(r.max_rel_err < 1e-3);
  };

  {
    Tensor a = random_tensor({3, 4}, gen), b = random_tensor({4, 2}, gen);
    Tensor w = random_tensor({3, 2}, gen);
    run("matmul", [&](Tape* t) { return sum(mul(matmul(a, b, t), w, t), t); }, {a, b});
  }
  {
    Tensor a = random_tensor({3, 4}, gen), b = random_tensor({2, 4}, gen);
    Tensor w = random_tensor({3, 2}, gen);
    run("matmul_nt", [&](Tape* t) { return sum(mul(matmul_nt(a, b, t), w, t), t); }, {a, b});
  }
  {
    Tensor a = random_tensor({2, 3}, gen), b = random_tensor({2, 3}, gen);
    Tensor w = random_tensor({2, 3}, gen);
    run("add+mul", [&](Tape* t) { return sum(mul(add(a, b, t), w, t), t); }, {a, b});
  }
  {
    Tensor m = random_tensor({3, 4}, gen), row = random_tensor({4}, gen);
    Tensor w = random_tensor({3, 4}, gen);
    run("add_row", [&](Tape* t) { return sum(mul(add_row(m, row, t), w, t), t); }, {m, row});
  }
  {
    Tensor a = random_tensor({2, 4}, gen);
    Tensor w = random_tensor({2, 4}, gen);
    run("affine", [&](Tape* t) { return sum(mul(affine(a, 1.7f, -0.3f, t), w, t), t); }, {a});
  }
  {
    Tensor a = random_tensor({3, 3}, gen, 0.8f, 0.05f);  // keep clear of the kink
    Tensor w = random_tensor({3, 3}, gen);
    run("relu", [&](Tape* t) { return sum(mul(relu(a, t), w, t), t); }, {a});
  }
  {
    Tensor a = random_tensor({3, 5}, gen);
    Tensor w = random_tensor({3, 5}, gen);
    run("softmax_rows", [&](Tape* t) { return sum(mul(softmax_rows(a, t), w, t), t); }, {a});
  }
  {
    Tensor a = random_tensor({3, 6}, gen);
    Tensor gamma = random_tensor({6}, gen, 0.3f);
    Tensor beta = random_tensor({6}, gen, 0.3f);
    Tensor w = random_tensor({3, 6}, gen);
    for (auto& v : gamma.mutable_data()) v += 1.f;
    run("layer_norm",
        [&](Tape* t) { return sum(mul(layer_norm(a, gamma, beta, 1e-5f, t), w, t), t); },
        {a, gamma, beta});
  }
  {
    Tensor table = random_tensor({6, 4}, gen);
    Tensor w = random_tensor({3, 4}, gen);
    std::vector<int> ids{1, 4, 1};
    run("embedding_rows",
        [&](Tape* t) { return sum(mul(embedding_rows(table, ids, t), w, t), t); }, {table});
  }
  {
    Tensor a = random_tensor({4, 6}, gen);
    Tensor w = random_tensor({2, 3}, gen);
    run("slice", [&](Tape* t) {
      return sum(mul(slice_cols(slice_rows(a, 1, 2, t), 2, 3, t), w, t), t);
    }, {a});
  }
  {
    Tensor a = random_tensor({3, 2}, gen), b = random_tensor({3, 3}, gen);
    Tensor w = random_tensor({3, 5}, gen);
    run("concat_cols",
        [&](Tape* t) { return sum(mul(concat_cols({a, b}, t), w, t), t); }, {a, b});
  }
  {
    Tensor a = random_tensor({2, 3}, gen);
    Tensor w = random_tensor({5, 3}, gen);
    run("pad_rows", [&](Tape* t) { return sum(mul(pad_rows(a, 5, t), w, t), t); }, {a});
  }
  {
    Tensor a = random_tensor({2, 6}, gen);
    Tensor w = random_tensor({12}, gen);
    run("reshape", [&](Tape* t) { return sum(mul(reshape(a, {12}, t), w, t), t); }, {a});
  }
  {
    Tensor u = random_tensor({7}, gen, 1.0f, 0.1f), v = random_tensor({7}, gen, 1.0f, 0.1f);
    run("cosine_similarity", [&](Tape* t) { return cosine_similarity(u, v, t); }, {u, v});
  }
  {
    Tensor logits = random_tensor({4, 5}, gen, 1.5f);
    std::vector<int> targets{0, 3, -1, 2};
    run("cross_entropy", [&](Tape* t) { return cross_entropy(logits, targets, -1, t); }, {logits});
  }
  {
    // composite: two-layer MLP with layer norm and softmax head
    Tensor x = random_tensor({2, 4}, gen);
    Tensor w1 = random_tensor({4, 6}, gen), b1 = random_tensor({6}, gen);
    Tensor w2 = random_tensor({6, 3}, gen), b2 = random_tensor({3}, gen);
    Tensor gamma = Tensor::full({6}, 1.f), beta = Tensor::zeros({6});
    std::vector<int> targets{1, 2};
    run("composite",
        [&](Tape* t) {
          Tensor h = relu(add_row(matmul(x, w1, t), b1, t), t);
          h = layer_norm(h, gamma, beta, 1e-5f, t);
          Tensor logits = add_row(matmul(h, w2, t), b2, t);
          return cross_entropy(logits, targets, -1, t);
        },
        {x, w1, b1, w2, b2, gamma, beta});
  }
}

TEST_CASE("determinism: identical seeds give bit-identical gradients") {
  auto run_once = [] {
    std::mt19937_64 gen(123);
    Tensor a = random_tensor({4, 4}, gen).set_requires_grad(true);
    Tensor b = random_tensor({4, 4}, gen);
    Tape tape;
    Tensor loss = sum(mul(softmax_rows(matmul(a, b, &tape), &tape), b, &tape), &tape);
    tape.backward(loss);
    std::vector<float> out(a.grad().begin(), a.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run_once() == run_once());
}

TEST_CASE("adam") {
  // zero grad on a fresh state is a fixed point
  Tensor p = Tensor::scalar(2.5f).set_requires_grad(true);
  std::vector<std::pair<std::string, Tensor>> params{{"p", p}};
  {
    Tape t;
    Tensor l = sum(mul(p, Tensor::zeros({1}), &t), &t);
    t.backward(l);
  }
  Adam opt;
  opt.step(params);
  CHECK(p.item() == doctest::Approx(2.5f));
  CHECK(opt.step_count() == 1);

  // bias-corrected first step moves by about lr
  Tensor q = Tensor::scalar(1.f).set_requires_grad(true);
  std::vector<std::pair<std::string, Tensor>> qp{{"q", q}};
  {
    Tape t;
    Tensor l = sum(q, &t);
    t.backward(l);
  }
  Adam opt2(AdamConfig{.lr = 0.1f});
  opt2.step(qp);
  CHECK(q.item() == doctest::Approx(0.9f).epsilon(1e-4));

  // missing gradient names the parameter
  Tensor r = Tensor::scalar(1.f).set_requires_grad(true);
  std::vector<std::pair<std::string, Tensor>> rp{{"weights.w1", r}};
  Adam opt3;
  CHECK_THROWS_WITH_AS(opt3.step(rp), doctest::Contains("weights.w1"), OptimError);

  // two steps on a convex quadratic decrease the loss
  Tensor w = Tensor::scalar(3.f).set_requires_grad(true);
  std::vector<std::pair<std::string, Tensor>> wp{{"w", w}};
  Adam opt4(AdamConfig{.lr = 0.05f});
  auto loss_value = [&] {
    Tape t;
    Tensor l = sum(mul(w, w, &t), &t);
    double v = l.item();
    t.backward(l);
    return v;
  };
  const double l0 = loss_value();
  opt4.step(wp);
  const double l1 = loss_value();
  opt4.step(wp);
  Tape t;
  const double l2 = sum(mul(w, w, &t), &t).item();
  CHECK(l1 < l0);
  CHECK(l2 < l1);
}

TEST_CASE("forward ops stay finite on rough inputs") {
  std::mt19937_64 gen(29);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor big = random_tensor({3, 5}, gen, 80.f);
    CHECK(softmax_rows(big).all_finite());
    Tensor gamma = Tensor::full({5}, 1.f), beta = Tensor::zeros({5});
    CHECK(layer_norm(big, gamma, beta, 1e-5f).all_finite());
    CHECK(cross_entropy(big, {0, 1, 2}, -1).all_finite());
  }
}
