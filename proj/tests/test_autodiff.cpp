#include <doctest.h>

#include <sstream>

#include "common.hpp"
#include "wsiseg/adam.hpp"
#include "wsiseg/tensor_io.hpp"

using namespace testing;

TEST_CASE("every layer op matches central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    for (const auto& c : layer_op_checks(seed)) {
      INFO(c.name << " seed " << seed);
      CHECK(c.error <= 1e-6);
    }
}

TEST_CASE("conv2d computes a hand-checked cross-correlation") {
  Tape tape;
  // 1 channel 3x3 input, 2x2 kernel, no padding.
  Var x = tape.constant(Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  Var w = tape.constant(Tensor({1, 1, 2, 2}, {1, 0, 0, -1}));
  Var b = tape.constant(Tensor({1}, {0.5}));
  const Tensor& y = ad::conv2d(x, w, b).value();
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y[0] == doctest::Approx(1 - 5 + 0.5));
  CHECK(y[3] == doctest::Approx(5 - 9 + 0.5));
}

TEST_CASE("maxpool2d uses floor semantics and sends the gradient to the first maximum") {
  Tape tape;
  Var x = tape.input(Tensor({1, 1, 3, 3}, {1, 1, 0, 1, 0, 0, 0, 0, 9}), true);
  Var y = ad::maxpool2d(x, 2, 2);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.value()[0] == 1.0);
  tape.backward(ad::sum(y));
  const std::vector<double> expected{1, 0, 0, 0, 0, 0, 0, 0, 0};
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == expected);
}

TEST_CASE("shape errors are reported") {
  Tape tape;
  Var x = tape.constant(Tensor({1, 2, 4, 4}));
  Var w = tape.constant(Tensor({3, 5, 3, 3}));
  Var b = tape.constant(Tensor({3}));
  CHECK_THROWS_AS(ad::conv2d(x, w, b), ad::ShapeError);
  CHECK_THROWS_AS(ad::mul(x, tape.constant(Tensor({2}))), ad::ShapeError);
  const std::vector<ad::CellIndex> dup{{0, 0, 0}, {0, 0, 0}};
  CHECK_THROWS(ad::scatter_to_map(tape.constant(Tensor({2, 1})), dup, 1, 2, 2));
}

TEST_CASE("masked cross-entropy: masked rows get exactly zero gradient") {
  Tape tape;
  Rng rng(3);
  Var z = tape.input(random_tensor(rng, {4, 2}), true);
  const std::vector<int> labels{1, 0, 1, 0};
  const std::vector<std::uint8_t> mask{1, 0, 1, 0};
  tape.backward(ad::masked_softmax_cross_entropy(z, labels, mask));
  auto g = z.grad();
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
  CHECK(g[6] == 0.0);
  CHECK(g[7] == 0.0);
  CHECK(g[0] != 0.0);
  const std::vector<std::uint8_t> none(4, 0);
  CHECK_THROWS_WITH(ad::masked_softmax_cross_entropy(z, labels, none), "no labeled cells");
}

TEST_CASE("masked cross-entropy value is the mean over labeled rows") {
  Tape tape;
  Var z = tape.constant(Tensor({2, 2}, {0.0, 0.0, 5.0, -5.0}));
  const std::vector<int> labels{1, 0};
  const std::vector<std::uint8_t> mask{1, 0};
  CHECK(ad::masked_softmax_cross_entropy(z, labels, mask).value()[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("backward overwrites parameter gradients and accumulate_grad adds") {
  Tensor w({2}, {1.0, 2.0});
  auto run = [&](bool accumulate) {
    Tape tape;
    Var p = tape.parameter(w);
    Var loss = ad::sum(ad::mul(p, p));
    accumulate ? tape.accumulate_grad(loss) : tape.backward(loss);
  };
  run(false);
  CHECK(w.grad()[0] == 2.0);
  run(false);
  CHECK(w.grad()[0] == 2.0);
  run(true);
  CHECK(w.grad()[0] == 4.0);
  CHECK(w.grad()[1] == 8.0);
}

TEST_CASE("a parameter bound twice receives the sum of both uses") {
  Tensor w({1}, {3.0});
  Tape tape;
  Var a = tape.parameter(w);
  Var b = tape.parameter(w);
  tape.backward(ad::sum(ad::mul(a, b)));
  CHECK(w.grad()[0] == 6.0);
}

TEST_CASE("no_grad tapes record nothing and free intermediates") {
  Tape tape(ad::GradMode::no_grad);
  {
    Var x = tape.constant(Tensor({1000}, 1.0));
    Var y = ad::relu(x);
    Var z = ad::relu(y);
    CHECK(tape.node_count() == 0);
    CHECK(tape.live_elements() == 3000);
  }
  CHECK(tape.live_elements() == 0);
  CHECK(tape.peak_live_elements() == 3000);

  Tape chain(ad::GradMode::no_grad);
  Var v = chain.constant(Tensor({1000}, 1.0));
  for (int i = 0; i < 10; ++i) v = ad::relu(v);
  // Only the current value and the one being computed are ever alive.
  CHECK(chain.peak_live_elements() == 2000);
}

TEST_CASE("recording tapes keep activations and charge gradient buffers") {
  Tape tape;
  Var x = tape.input(Tensor({100}, 1.0), true);
  Var y = ad::relu(x);
  Var s = ad::sum(y);
  CHECK(tape.live_elements() == 201);
  tape.backward(s);
  CHECK(tape.peak_live_elements() >= 201 + 200);
  tape.clear();
  CHECK(tape.node_count() == 0);
}

TEST_CASE("parameter leaves are not charged to the meter") {
  Tensor w({500}, 1.0);
  Tape tape;
  Var p = tape.parameter(w);
  CHECK(tape.live_elements() == 0);
}

TEST_CASE("adam: first step moves every coordinate by lr against the gradient sign") {
  Tensor p({3}, {1.0, -2.0, 0.5});
  p.set_grad(std::vector<double>{0.3, -4.0, 0.0});
  auto st = ad::AdamState::for_param(p);
  ad::adam_update(p, st, 0.1);
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-1.9));
  CHECK(p[2] == 0.5);
  CHECK(st.t == 1);
}

TEST_CASE("adam: lr = 0 leaves parameters bit-identical") {
  Tensor p({2}, {0.123, 4.5});
  const auto before = p.values();
  auto st = ad::AdamState::for_param(p);
  for (int i = 0; i < 5; ++i) {
    p.set_grad(std::vector<double>{1.0 * i, -2.0});
    ad::adam_update(p, st, 0.0);
  }
  CHECK(p.values() == before);
}

TEST_CASE("adam: missing gradient is an error") {
  Tensor p({2});
  auto st = ad::AdamState::for_param(p);
  CHECK_THROWS(ad::adam_update(p, st, 0.1));
}

TEST_CASE("adam minimizes a quadratic") {
  Tensor p({2}, {3.0, -1.0});
  auto st = ad::AdamState::for_param(p);
  for (int i = 0; i < 2000; ++i) {
    p.set_grad(std::vector<double>{2 * (p[0] - 1.0), 2 * (p[1] + 2.0)});
    ad::adam_update(p, st, 0.01);
  }
  CHECK(p[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(-2.0).epsilon(1e-3));
}

TEST_CASE("TNS1 round trip stores float32") {
  Rng rng(1);
  const Tensor t = random_tensor(rng, {2, 3, 4});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "TNS1");
  CHECK(bytes.size() == 4 + 4 + 3 * 8 + 24 * 4);
  const Tensor back = read_tensor(ss);
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == round_to_storage(t).values());
  std::stringstream again;
  write_tensor(again, back);
  CHECK(again.str() == bytes);
}

TEST_CASE("TNS1 rejects bad magic") {
  std::stringstream ss("XXXX");
  CHECK_THROWS(read_tensor(ss));
}
