#include <doctest.h>

#include <cmath>

#include "refpaint/gradcheck.hpp"
#include "refpaint/ops.hpp"
#include "refpaint/optim.hpp"
#include "test_support.hpp"

using namespace refpaint;
using refpaint::testing::max_abs_diff;
using refpaint::testing::naive_conv2d;
using refpaint::testing::random_tensor;

TEST_CASE("tensor construction enforces the shape invariant") {
  CHECK_THROWS_AS(Tensor<float>({1, 2, 2, 2}, std::vector<float>(7)), ShapeError);
  auto t = Tensor<float>::zeros({1, 2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(!t.has_grad());
}

TEST_CASE("non-finite values are detected") {
  auto t = Tensor<double>::zeros({1, 1, 2, 2});
  CHECK(t.all_finite());
  t.data()[3] = std::nan("");
  CHECK(!t.all_finite());
  CHECK_THROWS_AS(t.ensure_finite("probe"), NonFiniteError);
}

TEST_CASE("conv2d: identity 1x1 kernel") {
  auto x = random_tensor<double>({2, 3, 5, 4}, 1);
  auto w = Tensor<double>::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1.0;
  auto b = Tensor<double>::zeros({1, 3, 1, 1});
  auto y = conv2d(x, w, b);
  CHECK(y.shape() == x.shape());
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d: all-ones 3x3 kernel on a constant field of twos") {
  auto x = Tensor<double>::full({1, 1, 3, 3}, 2.0);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w, Tensor<double>(), 1, 1, 1);
  CHECK(y.at(0, 0, 1, 1) == 18.0);
  CHECK(y.at(0, 0, 0, 0) == 8.0);
  CHECK(y.at(0, 0, 2, 2) == 8.0);
  CHECK(y.at(0, 0, 0, 1) == 12.0);
}

TEST_CASE("conv2d: output extent and error paths") {
  auto x = random_tensor<double>({1, 2, 9, 7}, 2);
  auto w = random_tensor<double>({4, 2, 3, 3}, 3);
  auto y = conv2d(x, w, Tensor<double>(), 2, 1, 2);
  CHECK(y.shape().h == (9 + 2 - 2 * 2 - 1) / 2 + 1);
  CHECK(y.shape().w == (7 + 2 - 2 * 2 - 1) / 2 + 1);
  CHECK_THROWS_AS(conv2d(x, random_tensor<double>({4, 3, 3, 3}, 4), Tensor<double>()), ShapeError);
  CHECK_THROWS_AS(conv2d(random_tensor<double>({1, 2, 2, 2}, 5), w, Tensor<double>()), ShapeError);
  CHECK_THROWS_AS(conv2d(x, w, Tensor<double>(), 0, 0, 1), ShapeError);
}

TEST_CASE("conv2d matches a direct-loop oracle across stride, padding and dilation") {
  for (int stride : {1, 2}) {
    for (int pad : {0, 1, 2}) {
      for (int dil : {1, 2}) {
        auto x = random_tensor<double>({2, 3, 7, 8}, 10 + stride + pad + dil);
        auto w = random_tensor<double>({4, 3, 3, 3}, 20 + stride);
        auto b = random_tensor<double>({1, 4, 1, 1}, 30);
        auto y = conv2d(x, w, b, stride, pad, dil);
        auto ref = naive_conv2d(x, w, &b, stride, pad, dil);
        REQUIRE(y.shape() == ref.shape());
        CHECK(max_abs_diff(y, ref) < 1e-12);
      }
    }
  }
}

TEST_CASE("dilated conv equals conv with a zero-interleaved kernel") {
  auto x = random_tensor<double>({1, 2, 7, 7}, 40);
  auto w = random_tensor<double>({3, 2, 3, 3}, 41);
  for (int d : {2, 3}) {
    const int k = 2 * d + 1;
    auto wide = Tensor<double>::zeros({3, 2, k, k});
    for (int o = 0; o < 3; ++o)
      for (int c = 0; c < 2; ++c)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) wide.at(o, c, ky * d, kx * d) = w.at(o, c, ky, kx);
    auto a = conv2d(x, w, Tensor<double>(), 1, d, d);
    auto b = conv2d(x, wide, Tensor<double>(), 1, d, 1);
    CHECK(max_abs_diff(a, b) < 1e-12);
  }
}

TEST_CASE("conv2d gradients match central differences") {
  auto x = random_tensor<double>({2, 3, 6, 5}, 50, -1, 1, true);
  auto w = random_tensor<double>({4, 3, 3, 3}, 51, -1, 1, true);
  auto b = random_tensor<double>({1, 4, 1, 1}, 52, -1, 1, true);
  auto probe = random_tensor<double>({2, 4, 3, 3}, 53);
  auto loss = [&] { return sum(mul(conv2d(x, w, b, 2, 1, 1), probe)); };
  for (const auto& st : check_gradients(loss, {{"input", x}, {"weight", w}, {"bias", b}},
                                        {.step = 1e-5})) {
    INFO(st.group);
    CHECK(st.max_rel_error < 1e-6);
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  auto x = random_tensor<double>({1, 3, 8, 8}, 60);
  auto y = random_tensor<double>({1, 5, 4, 4}, 61);
  auto w = random_tensor<double>({5, 3, 4, 4}, 62);
  // <conv(x), y> == <x, conv^T(y)> with the transposed weight layout (inC=5, outC=3).
  auto cx = conv2d(x, w, Tensor<double>(), 2, 1, 1);
  auto ty = conv_transpose2d(y, w, Tensor<double>(), 2, 1);
  REQUIRE(ty.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx.data()[i] * y.data()[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * ty.data()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv_transpose2d gradients") {
  auto x = random_tensor<double>({1, 3, 3, 4}, 70, -1, 1, true);
  auto w = random_tensor<double>({3, 2, 4, 4}, 71, -1, 1, true);
  auto b = random_tensor<double>({1, 2, 1, 1}, 72, -1, 1, true);
  auto probe = random_tensor<double>({1, 2, 6, 8}, 73);
  auto loss = [&] { return sum(mul(conv_transpose2d(x, w, b, 2, 1), probe)); };
  for (const auto& st : check_gradients(loss, {{"input", x}, {"weight", w}, {"bias", b}})) {
    INFO(st.group);
    CHECK(st.max_rel_error < 1e-6);
  }
}

TEST_CASE("bilinear_resize") {
  SUBCASE("identity size") {
    auto x = random_tensor<double>({1, 2, 5, 6}, 80);
    CHECK(max_abs_diff(bilinear_resize(x, 5, 6), x) == 0.0);
  }
  SUBCASE("corner anchoring on upsample") {
    Tensor<double> x({1, 1, 2, 2}, {0, 2, 4, 6});
    auto y = bilinear_resize(x, 4, 4);
    CHECK(y.at(0, 0, 0, 0) == 0.0);
    CHECK(y.at(0, 0, 3, 3) == 6.0);
    CHECK(y.at(0, 0, 0, 3) == 2.0);
    CHECK(y.at(0, 0, 3, 0) == 4.0);
    CHECK(y.at(0, 0, 1, 1) == doctest::Approx(1.5));
  }
  SUBCASE("constant map stays constant") {
    auto x = Tensor<double>::full({1, 3, 9, 7}, 0.37);
    auto y = bilinear_resize(x, 4, 3);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
  }
  SUBCASE("errors") { CHECK_THROWS_AS(bilinear_resize(Tensor<double>::zeros({1, 1, 2, 2}), 0, 2), ShapeError); }
  SUBCASE("gradients") {
    auto x = random_tensor<double>({1, 2, 5, 3}, 81, -1, 1, true);
    auto probe = random_tensor<double>({1, 2, 8, 7}, 82);
    auto probe2 = random_tensor<double>({1, 2, 2, 2}, 83);
    auto loss = [&] {
      return add(sum(mul(bilinear_resize(x, 8, 7), probe)),
                 sum(mul(bilinear_resize(x, 2, 2), probe2)));
    };
    CHECK(check_gradients(loss, {{"x", x}})[0].max_rel_error < 1e-6);
  }
}

TEST_CASE("primitives") {
  Tensor<double> v({1, 1, 1, 2}, {-1.0, 2.0});
  auto r = relu(v);
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);

  auto cat = concat_channels<double>({Tensor<double>::zeros({1, 3, 8, 8}),
                                      Tensor<double>::zeros({1, 5, 8, 8})});
  CHECK(cat.shape() == Shape{1, 8, 8, 8});
  CHECK_THROWS_AS(concat_channels<double>({Tensor<double>::zeros({1, 3, 8, 8}),
                                           Tensor<double>::zeros({1, 5, 4, 8})}),
                  ShapeError);

  auto in = instance_norm(Tensor<double>::full({2, 3, 4, 4}, 5.0));
  for (double x : in.data()) CHECK(x == 0.0);

  CHECK_THROWS_AS(add(Tensor<double>::zeros({1, 1, 2, 2}), Tensor<double>::zeros({1, 1, 2, 3})),
                  ShapeError);
  CHECK_THROWS_AS(expand(Tensor<double>::zeros({1, 2, 1, 1}), {1, 3, 4, 4}), ShapeError);
}

TEST_CASE("every primitive passes a finite-difference check") {
  const Shape s{2, 3, 4, 5};
  auto x = random_tensor<double>(s, 90, -1, 1, true);
  auto y = random_tensor<double>(s, 91, -1, 1, true);
  auto probe = random_tensor<double>(s, 92);
  auto bias = random_tensor<double>({1, 3, 1, 1}, 93, -1, 1, true);
  auto fcw = random_tensor<double>({4, 3, 1, 1}, 94, -1, 1, true);
  auto fcb = random_tensor<double>({1, 4, 1, 1}, 95, -1, 1, true);
  auto m = random_tensor<double>({2, 1, 4, 1}, 96, -1, 1, true);
  auto dot = [&](const Tensor<double>& t) {
    auto p = random_tensor<double>(t.shape(), 97);
    return sum(mul(t, p));
  };
  const std::vector<std::pair<const char*, std::function<Tensor<double>()>>> cases = {
      {"add", [&] { return dot(add(x, y)); }},
      {"sub", [&] { return dot(sub(x, y)); }},
      {"mul", [&] { return dot(mul(x, y)); }},
      {"scale+add_scalar", [&] { return dot(add_scalar(scale(x, 1.7), 0.3)); }},
      {"expand", [&] { return dot(expand(m, s)); }},
      {"add_bias", [&] { return dot(add_bias(x, bias)); }},
      {"leaky_relu", [&] { return dot(leaky_relu(x, 0.2)); }},
      {"relu", [&] { return dot(relu(x)); }},
      {"sigmoid", [&] { return dot(sigmoid(x)); }},
      {"tanh", [&] { return dot(tanh(x)); }},
      {"abs", [&] { return dot(abs(x)); }},
      {"square", [&] { return dot(square(x)); }},
      {"mean", [&] { return mean(mul(x, probe)); }},
      {"mean_hw", [&] { return dot(mean_hw(x)); }},
      {"mean_c", [&] { return dot(mean_c(x)); }},
      {"instance_norm", [&] { return dot(instance_norm(x)); }},
      {"concat", [&] { return dot(concat_channels<double>({x, y, x})); }},
      {"slice", [&] { return dot(slice_channels(x, 1, 2)); }},
      {"linear", [&] { return dot(linear(mean_hw(x), fcw, fcb)); }},
      {"gram", [&] { return dot(gram(x)); }},
  };
  for (const auto& [name, fn] : cases) {
    INFO(name);
    for (const auto& st : check_gradients(fn, {{"x", x}, {"y", y}, {"bias", bias}, {"fcw", fcw},
                                               {"fcb", fcb}, {"m", m}})) {
      INFO(st.group);
      CHECK(st.max_rel_error < 1e-6);
    }
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    auto x = random_tensor<double>({1, 2, 3, 3}, 100, -1, 1, true);
    sum(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("quadratic") {
    Tensor<double> x({1, 1, 1, 2}, {1.0, 2.0}, true);
    sum(mul(x, x)).backward();
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    SUBCASE("repeated calls accumulate") {
      auto l = sum(mul(x, x));
      l.backward();
      CHECK(x.grad()[0] == 4.0);
      CHECK(x.grad()[1] == 8.0);
    }
  }
  SUBCASE("non-scalar loss is rejected") {
    auto x = random_tensor<double>({1, 1, 2, 2}, 101, -1, 1, true);
    CHECK_THROWS_AS(relu(x).backward(), ShapeError);
  }
  SUBCASE("fan-out is accumulated once per use") {
    Tensor<double> x({1, 1, 1, 1}, {3.0}, true);
    auto y = add(mul(x, x), x);  // dy/dx = 2x + 1
    y.backward();
    CHECK(x.grad()[0] == 7.0);
  }
  SUBCASE("composite conv + relu graph") {
    auto x = random_tensor<double>({1, 2, 6, 6}, 102, -1, 1, true);
    auto w1 = random_tensor<double>({3, 2, 3, 3}, 103, -1, 1, true);
    auto w2 = random_tensor<double>({2, 3, 3, 3}, 104, -1, 1, true);
    auto loss = [&] {
      auto h = relu(conv2d(x, w1, Tensor<double>(), 1, 1, 1));
      return sum(square(conv2d(h, w2, Tensor<double>(), 1, 1, 2)));
    };
    for (const auto& st : check_gradients(loss, {{"x", x}, {"w1", w1}, {"w2", w2}})) {
      INFO(st.group);
      CHECK(st.max_rel_error < 1e-6);
    }
  }
  SUBCASE("no-grad guard records nothing") {
    auto x = random_tensor<double>({1, 1, 2, 2}, 105, -1, 1, true);
    NoGradGuard guard;
    auto y = sum(x);
    CHECK(!y.requires_grad());
  }
}

TEST_CASE("forward passes are bitwise deterministic") {
  auto run = [] {
    auto x = random_tensor<float>({1, 8, 16, 16}, 110);
    auto w = random_tensor<float>({16, 8, 3, 3}, 111);
    return instance_norm(conv2d(x, w, Tensor<float>(), 1, 1, 1));
  };
  auto a = run();
  auto b = run();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("adam") {
  AdamConfig cfg;
  cfg.lr = 1e-3;
  SUBCASE("zero gradient leaves parameters unchanged and advances the counter") {
    auto p = Tensor<double>::full({1, 1, 1, 3}, 0.5, true);
    Adam<double> opt({{"p", p}}, cfg);
    opt.step();
    CHECK(opt.steps() == 1);
    for (double v : p.data()) CHECK(v == 0.5);
  }
  SUBCASE("first step with constant gradient moves by about lr") {
    // m = 0.1 g, v = 0.001 g^2; bias correction gives mhat = g, vhat = g^2,
    // so the step is lr * g / (|g| + eps).
    std::vector<double> p{1.0};
    AdamMoments<double> mom;
    const double g = 0.5;
    adam_step<double>(p, std::vector<double>{g}, mom, 1, cfg);
    CHECK(1.0 - p[0] == doctest::Approx(1e-3 * g / (g + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("identical histories give identical updates") {
    auto a = Tensor<double>::full({1, 1, 1, 1}, 0.2, true);
    auto b = Tensor<double>::full({1, 1, 1, 1}, 0.2, true);
    Adam<double> opt({{"a", a}, {"b", b}}, cfg);
    for (int i = 0; i < 5; ++i) {
      opt.zero_grad();
      sum(add(square(a), square(b))).backward();
      opt.step();
    }
    CHECK(a.data()[0] == b.data()[0]);
  }
  SUBCASE("non-finite gradient aborts without updating") {
    auto p = Tensor<double>::full({1, 1, 1, 2}, 1.0, true);
    Adam<double> opt({{"p", p}}, cfg);
    sum(p).backward();
    p.grad_mut()[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(opt.step(), NonFiniteError);
    CHECK(p.data()[0] == 1.0);
    CHECK(opt.steps() == 0);
  }
}
