#include <cmath>
#include <random>

#include "doctest.h"
#include "lsp/checkpoint.hpp"
#include "lsp/gradcheck.hpp"
#include "lsp/ops.hpp"
#include "lsp/optim.hpp"

using namespace lsp;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return T(std::move(shape), std::move(v));
}

struct OpCase {
  std::vector<T> inputs;
  OpAttrs attrs;
};

OpCase make_case(OpKind kind, std::mt19937_64& rng) {
  switch (kind) {
    case OpKind::kMatmul: return {{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, {}};
    case OpKind::kConv2d:
      return {{random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
              {{"stride", static_cast<double>(1 + rng() % 2)}}};
    case OpKind::kUpsample2x: return {{random_tensor({1, 2, 3, 3}, rng)}, {}};
    case OpKind::kAdd:
    case OpKind::kMul: return {{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, {}};
    case OpKind::kScale: return {{random_tensor({5}, rng)}, {{"factor", -0.7}}};
    case OpKind::kLeakyRelu: return {{random_tensor({6}, rng)}, {{"slope", 0.1}}};
    case OpKind::kCrossEntropy: return {{random_tensor({3, 4}, rng)}, {{"label", 2}}};
    case OpKind::kReshape: return {{random_tensor({2, 6}, rng)}, {{"d0", 3}, {"d1", 4}}};
    case OpKind::kConcat: return {{random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}, {}};
    case OpKind::kAffine: return {{random_tensor({2, 4}, rng), random_tensor({3, 4}, rng), random_tensor({3}, rng)}, {}};
    case OpKind::kMaxpool2x: return {{random_tensor({2, 2, 4, 4}, rng)}, {}};
    case OpKind::kChannelScale: return {{random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3}, rng)}, {}};
    case OpKind::kRsqrt: return {{random_tensor({5}, rng, 0.5, 2.0)}, {{"eps", 1e-8}}};
    default: return {{random_tensor({2, 5}, rng)}, {}};
  }
}

}  // namespace

TEST_CASE("forward examples") {
  std::mt19937_64 rng(1);
  const T a = random_tensor({3, 4}, rng);
  const T z = add(a, T::zeros(a.shape()));
  CHECK((z.values() == a.values()).all());

  // Cross-correlation of a centred impulse reproduces the kernel rotated by 180 degrees.
  Buffer<double> impulse = Buffer<double>::Zero(25);
  impulse[2 * 5 + 2] = 1;
  const T image({1, 5, 5}, impulse);
  const T kernel({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const T out = conv2d(image, kernel);
  REQUIRE(out.shape() == Shape{1, 5, 5});
  const double expected[3][3] = {{9, 8, 7}, {6, 5, 4}, {3, 2, 1}};
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) CHECK(out[(y + 1) * 5 + (x + 1)] == expected[y][x]);
  }
  CHECK(out[0] == 0);

  const T stride2 = conv2d(T::filled({1, 6, 6}, 1.0), kernel, 2);
  CHECK(stride2.shape() == Shape{1, 3, 3});

  for (int s = 0; s < 5; ++s) {
    const T p = softmax(random_tensor({4, 10}, rng, -20, 20));
    for (int r = 0; r < 4; ++r) CHECK(p.values().segment(r * 10, 10).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(add(T::zeros({2}), T::zeros({3})), Error);
  try {
    matmul(T::zeros({2, 3}), T::zeros({2, 3}));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShapeMismatch);
  }
  CHECK_THROWS_AS(conv2d(T::zeros({1, 4, 4}), T::zeros({1, 1, 2, 2})), Error);
  try {
    apply<double>(OpKind::kTanh, {T::zeros({2})}, {{"slope", 1.0}});
    FAIL("expected UnknownAttribute");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUnknownAttribute);
  }
}

TEST_CASE("backward examples") {
  Tape<double> tape;
  const T x = tape.watch(T({2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto g = tape.backward(sum(x)).of(x);
  CHECK(g.shape() == x.shape());
  CHECK((g.values() == 1.0).all());

  // d/dw sigmoid(w x) = s (1 - s) x
  Tape<double> t2;
  const double w0 = 0.7, x0 = -1.3;
  const T w = t2.watch(T::scalar(w0));
  const T y = sigmoid(mul(w, T::scalar(x0)));
  const double s = 1 / (1 + std::exp(-w0 * x0));
  CHECK(t2.backward(y).of(w).item() == doctest::Approx(s * (1 - s) * x0).epsilon(1e-14));

  // Cross entropy on raw logits against central differences.
  std::mt19937_64 rng(7);
  const T logits = random_tensor({4, 5}, rng);
  const auto report = finite_diff_check<double>(
      [](const T& v) { return cross_entropy(v, {0, 3, 2, 4}); }, logits.with_shape({20}).with_shape({4, 5}), 1e-5);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("backward errors") {
  Tape<double> tape;
  const T x = tape.watch(T::zeros({3}));
  try {
    tape.backward(x);
    FAIL("expected NotScalar");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNotScalar);
  }
  Tape<double> other;
  const T y = other.watch(T::scalar(1));
  try {
    tape.backward(y);
    FAIL("expected DetachedOutput");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDetachedOutput);
  }
  try {
    tape.backward(T::scalar(2.0));
    FAIL("expected DetachedOutput");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDetachedOutput);
  }
}

TEST_CASE("untouched and untracked inputs") {
  Tape<double> tape;
  const T used = tape.watch(T::filled({2}, 3.0));
  const T unused = tape.watch(T::filled({4}, 1.0));
  const T constant = T::filled({2}, 5.0);
  const T y = sum(mul(used, constant));
  const auto grads = tape.backward(y);
  CHECK((grads.of(unused).values() == 0.0).all());
  CHECK((grads.of(used).values() == 5.0).all());
  CHECK_FALSE(constant.requires_grad());
  CHECK_THROWS_AS(grads.of(constant), Error);
  // Ops on untracked inputs never touch the tape.
  const std::size_t before = tape.size();
  (void)add(constant, constant);
  CHECK(tape.size() == before);
}

TEST_CASE("finite_diff_check examples") {
  const auto constant = finite_diff_check<double>(
      [](const T& x) { return add_constant(scale(sum(x), 0.0), 4.0); }, T({3}, {1, 2, 3}), 1e-5);
  CHECK(constant.max_relative_error < 1e-12);

  Tape<double> tape;
  const T x = tape.watch(T({3}, {1, 2, 3}));
  const T g = tape.backward(sum(square(x))).of(x);
  CHECK(g[0] == 2);
  CHECK(g[1] == 4);
  CHECK(g[2] == 6);
  const auto sq = finite_diff_check<double>([](const T& v) { return sum(square(v)); }, T({3}, {1, 2, 3}), 1e-5);
  CHECK(sq.max_relative_error < 1e-8);

  CHECK_THROWS_AS(finite_diff_check<double>([](const T& v) { return sum(rsqrt(v, 0.0)); }, T({2}, {0.0, 1.0}), 1e-3),
                  Error);
}

TEST_CASE("every op kind matches central differences") {
  for (OpKind kind : all_op_kinds()) {
    CAPTURE(to_string(kind));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed * 977 + static_cast<int>(kind));
      const OpCase c = make_case(kind, rng);
      const T probe = apply(kind, c.inputs, c.attrs);
      const T weights = random_tensor(probe.shape(), rng);
      for (std::size_t slot = 0; slot < c.inputs.size(); ++slot) {
        auto f = [&](const T& v) {
          std::vector<T> in = c.inputs;
          in[slot] = v;
          return sum(mul(apply(kind, in, c.attrs), weights));
        };
        const auto report = finite_diff_check<double>(f, c.inputs[slot], 1e-6);
        CAPTURE(seed);
        CAPTURE(slot);
        CHECK(report.max_relative_error < 1e-4);
      }
    }
  }
}

TEST_CASE("extra ops match central differences") {
  std::mt19937_64 rng(3);
  const T x = random_tensor({2, 6}, rng);
  const T w = random_tensor({2, 6}, rng);
  const std::vector<std::function<T(const T&)>> fns = {
      [&](const T& v) { return sum(mul(sub(v, w), w)); },
      [&](const T& v) { return mse(v, w); },
      [&](const T& v) { return sum(mul(exp(v), w)); },
      [&](const T& v) { return sum(mul(softmax(v), w)); },
      [&](const T& v) { return sum(select(v, {1, 4})); },
      [&](const T& v) { return sum(mul(sum_groups(v, 3), T({4}, {1, -2, 3, 0.5}))); },
      [&](const T& v) { return sum(mul(slice_cols(v, 2, 3), T({2, 3}, {1, 2, 3, 4, 5, 6}))); },
      [&](const T& v) { return sum(mul(transpose(v), transpose(w))); },
      [&](const T& v) { return sum(mul(clamp(v, -1.0, 1.0), w)); },
      [&](const T& v) { return sum(scale_by(v, slice_cols(reshape(v, {12}), 0, 1))); },
      [&](const T& v) { return sum(mul(add_broadcast(reshape(v, {2, 1, 2, 3}), T({1, 2, 3}, {1, 2, 3, 4, 5, 6})),
                                       reshape(w, {2, 1, 2, 3}))); },
      [&](const T& v) { return sum(mul(concat<double>({slice_cols(v, 0, 2), slice_cols(v, 4, 2)}), slice_cols(w, 0, 4))); },
  };
  for (std::size_t i = 0; i < fns.size(); ++i) {
    CAPTURE(i);
    CHECK(finite_diff_check<double>(fns[i], x, 1e-6).max_relative_error < 1e-4);
  }
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(11);
    const T img = random_tensor({2, 2, 6, 6}, rng);
    const T k = random_tensor({4, 2, 3, 3}, rng);
    Tape<float> tape;
    const Tensor<float> x = tape.watch(img.cast<float>());
    const Tensor<float> y = sum(leaky_relu(conv2d(x, k.cast<float>())));
    return tape.backward(y).of(x);
  };
  const auto a = run(), b = run();
  CHECK((a.values() == b.values()).all());
}

TEST_CASE("gradients of independent subgraphs concatenate") {
  std::mt19937_64 rng(5);
  const T a0 = random_tensor({4}, rng), b0 = random_tensor({3}, rng);
  auto fa = [](const T& v) { return sum(tanh(v)); };
  auto fb = [](const T& v) { return sum(square(sigmoid(v))); };

  Tape<double> joint;
  const T a = joint.watch(a0), b = joint.watch(b0);
  const auto g = joint.backward(add(fa(a), fb(b)));
  Tape<double> ta, tb;
  const T a1 = ta.watch(a0), b1 = tb.watch(b0);
  CHECK((g.of(a).values() == ta.backward(fa(a1)).of(a1).values()).all());
  CHECK((g.of(b).values() == tb.backward(fb(b1)).of(b1).values()).all());

  // Reverse-mode through concat: the joint gradient splits back into the parts.
  Tape<double> tc;
  const T ca = tc.watch(a0), cb = tc.watch(b0);
  const auto gc = tc.backward(sum(square(concat<double>({ca, cb}))));
  CHECK(gc.of(ca).values().isApprox(2 * a0.values()));
  CHECK(gc.of(cb).values().isApprox(2 * b0.values()));
}

TEST_CASE("adam") {
  ParameterSet<double> params;
  params.add("w", T({2}, {1.0, -2.0}));
  AdamState<double> state;
  adam_step(params, {T::zeros({2})}, state, {});
  CHECK(params.get("w")[0] == 1.0);
  CHECK(params.get("w")[1] == -2.0);
  CHECK((state.m[0] == 0.0).all());

  ParameterSet<double> quad;
  quad.add("w", T::scalar(1.0));
  AdamState<double> qs;
  adam_step(quad, {T::scalar(2.0)}, qs, {.lr = 0.1});
  CHECK(quad.get("w").item() < 1.0);

  CHECK_THROWS_AS(adam_step(quad, {T::zeros({3})}, qs, {}), Error);

  // Least squares: fit y = 2 x0 - 3 x1 from four exact observations.
  const T design({4, 2}, {1, 0, 0, 1, 1, 1, 2, -1});
  const T target({4, 1}, {2, -3, -1, 7});
  ParameterSet<double> ls;
  ls.add("w", T({2, 1}, {0, 0}));
  AdamState<double> lstate;
  double loss = 0;
  for (int step = 0; step < 200; ++step) {
    Tape<double> tape;
    const auto p = ls.watch(tape);
    const T l = mse(matmul(design, p.get("w")), target);
    loss = l.item();
    adam_step(ls, {tape.backward(l).of(p.get("w"))}, lstate, {.lr = 0.1});
  }
  CHECK(loss < 1e-4);

  // Identical inputs, identical trajectory.
  ParameterSet<double> again;
  again.add("w", T({2}, {1.0, -2.0}));
  ParameterSet<double> twin = again;
  AdamState<double> s1, s2;
  adam_step(again, {T({2}, {0.3, -0.1})}, s1, {});
  adam_step(twin, {T({2}, {0.3, -0.1})}, s2, {});
  CHECK(again == twin);
}

TEST_CASE("checkpoint blob") {
  std::mt19937_64 rng(9);
  ParameterSet<float> params;
  params.add("conv.k", random_tensor({2, 1, 3, 3}, rng).cast<float>());
  params.add("b", random_tensor({2}, rng).cast<float>());
  params.add("empty", Tensor<float>::zeros({0}));
  const std::string blob = encode_checkpoint(params);
  CHECK(blob.substr(0, 4) == "LPT1");
  CHECK(blob[4] == 0);
  // 4 magic + 1 flag + 4 count + ("conv.k": 2+6+1+16+72) + ("b": 2+1+1+4+8) + ("empty": 2+5+1+4)
  CHECK(blob.size() == 4 + 1 + 4 + (2 + 6 + 1 + 16 + 72) + (2 + 1 + 1 + 4 + 8) + (2 + 5 + 1 + 4));
  CHECK(decode_checkpoint<float>(blob) == params);
  CHECK(checkpoint_precision(encode_checkpoint(params.cast<double>())) == Precision::kDouble);
  CHECK(decode_checkpoint<float>(encode_checkpoint(params.cast<double>())) == params);

  try {
    decode_checkpoint<float>("XXXX" + blob.substr(4));
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kBadMagic);
  }
  try {
    decode_checkpoint<float>(blob.substr(0, blob.size() - 3));
    FAIL("expected TruncatedFile");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kTruncatedFile);
  }
}
