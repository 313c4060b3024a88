#include <doctest.h>

#include <cmath>

#include "lidarmos/autodiff.hpp"
#include "testutil.hpp"

using namespace mos;
using ad::Tensor;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

// Direct nested-loop cross-correlation oracle (zero or circular-width padding).
std::vector<double> conv2d_oracle(const std::vector<double>& x, int n, int ci, int h, int w,
                                  const std::vector<double>& k, int co, int kh, int kw,
                                  const ad::Conv2dOpts& o, const std::vector<double>& bias) {
  const int eff_kh = o.dilation_h * (kh - 1) + 1;
  const int eff_kw = o.dilation_w * (kw - 1) + 1;
  const int ho = (h + 2 * o.pad_h - eff_kh) / o.stride_h + 1;
  const int wo = (w + 2 * o.pad_w - eff_kw) / o.stride_w + 1;
  std::vector<double> out(static_cast<std::size_t>(n) * co * ho * wo, 0.0);
  for (int nn = 0; nn < n; ++nn)
    for (int oc = 0; oc < co; ++oc)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (int ic = 0; ic < ci; ++ic)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int ih = oh * o.stride_h - o.pad_h + i * o.dilation_h;
                int iw = ow * o.stride_w - o.pad_w + j * o.dilation_w;
                if (ih < 0 || ih >= h) continue;
                if (o.circular_w) {
                  iw = ((iw % w) + w) % w;
                } else if (iw < 0 || iw >= w) {
                  continue;
                }
                acc += x[((static_cast<std::size_t>(nn) * ci + ic) * h + ih) * w + iw] *
                       k[((static_cast<std::size_t>(oc) * ci + ic) * kh + i) * kw + j];
              }
          out[((static_cast<std::size_t>(nn) * co + oc) * ho + oh) * wo + ow] = acc;
        }
  return out;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("conv2d sums a ones kernel over a ones input") {
  auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  ad::Conv2dOpts o;
  o.pad_h = 1;
  o.pad_w = 1;
  auto y = ad::conv2d(x, w, Tensor<double>{}, o);
  CHECK(y.value()[4] == 9.0);  // center
  CHECK(y.value()[0] == 4.0);  // corner
}

TEST_CASE("conv2d with an identity 1x1 kernel is the identity") {
  auto x = random_tensor<double>({2, 1, 4, 5}, 1);
  auto w = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  auto y = ad::conv2d(x, w, Tensor<double>{}, {});
  CHECK(y.value() == x.value());
}

TEST_CASE("conv2d matches the loop oracle with dilation and stride") {
  for (bool circular : {false, true}) {
    for (int dil : {1, 2}) {
      auto x = random_tensor<double>({2, 3, 5, 7}, 10 + dil + (circular ? 100 : 0));
      auto w = random_tensor<double>({4, 3, 3, 3}, 20 + dil);
      auto b = random_tensor<double>({4}, 30 + dil);
      ad::Conv2dOpts o;
      o.pad_h = dil;
      o.pad_w = dil;
      o.dilation_h = dil;
      o.dilation_w = dil;
      o.circular_w = circular;
      auto y = ad::conv2d(x, w, b, o);
      auto ref = conv2d_oracle(x.value(), 2, 3, 5, 7, w.value(), 4, 3, 3, o, b.value());
      REQUIRE(y.value().size() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.value()[i] == doctest::Approx(ref[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("softpool closed forms") {
  // Equal values reduce to the average.
  auto c = Tensor<double>::full({1, 1, 2, 2}, 3.25);
  CHECK(ad::soft_pool2d(c, 2, 2).value()[0] == doctest::Approx(3.25));

  // Window [0, ln 3]: (0*1 + ln3*3) / (1 + 3) = 0.75*ln 3.
  auto x = Tensor<double>::from_data({1, 1, 1, 2}, {0.0, std::log(3.0)});
  const double expected = 0.75 * std::log(3.0);
  CHECK(ad::soft_pool2d(x, 1, 2).value()[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("softpool output is bounded by the window extrema") {
  auto x = random_tensor<double>({2, 3, 4, 4}, 5, false, 2.0);
  auto y = ad::soft_pool2d(x, 2, 2);
  for (int nc = 0; nc < 6; ++nc)
    for (int oh = 0; oh < 2; ++oh)
      for (int ow = 0; ow < 2; ++ow) {
        double mn = 1e30, mx = -1e30;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            const double v = x.value()[(nc * 4 + oh * 2 + i) * 4 + ow * 2 + j];
            mn = std::min(mn, v);
            mx = std::max(mx, v);
          }
        const double o = y.value()[(nc * 2 + oh) * 2 + ow];
        CHECK(o >= mn - 1e-12);
        CHECK(o <= mx + 1e-12);
      }
}

TEST_CASE("pixel_shuffle ordering and inverse") {
  auto x = Tensor<double>::from_data({1, 4, 1, 1}, {1, 2, 3, 4});
  auto y = ad::pixel_shuffle(x, 2);
  CHECK(y.shape() == ad::Shape{1, 1, 2, 2});
  CHECK(y.value() == std::vector<double>{1, 2, 3, 4});

  // r=1 is the identity.
  auto z = random_tensor<double>({2, 3, 2, 2}, 8);
  CHECK(ad::pixel_shuffle(z, 1).value() == z.value());

  // Shuffle followed by the inverse rearrangement restores the input.
  auto t = random_tensor<double>({2, 8, 3, 5}, 9);
  auto s = ad::pixel_shuffle(t, 2);
  const int n = 2, c = 2, h = 3, w = 5, r = 2;
  std::vector<double> back(t.numel());
  for (int nn = 0; nn < n; ++nn)
    for (int cc = 0; cc < c; ++cc)
      for (int hh = 0; hh < h; ++hh)
        for (int ww = 0; ww < w; ++ww)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j)
              back[((nn * c * r * r + cc * r * r + i * r + j) * h + hh) * w + ww] =
                  s.value()[((nn * c + cc) * h * r + hh * r + i) * w * r + ww * r + j];
  CHECK(back == t.value());
  CHECK_THROWS_AS(ad::pixel_shuffle(random_tensor<double>({1, 3, 2, 2}, 1), 2), NumericError);
}

TEST_CASE("elementary forward values") {
  auto z = Tensor<double>::from_data({1}, {0.0});
  CHECK(ad::sigmoid(z).value()[0] == 0.5);

  auto c = Tensor<double>::full({4}, 1.7);
  auto sm = ad::softmax(c, 0);
  for (double v : sm.value()) CHECK(v == doctest::Approx(0.25));

  auto x = Tensor<double>::from_data({3}, {-2.0, 0.0, 3.0});
  auto r = ad::relu(x);
  CHECK(r.value() == std::vector<double>{0.0, 0.0, 3.0});
  auto lr = ad::leaky_relu(x, 0.1);
  CHECK(lr.value()[0] == doctest::Approx(-0.2));
}

TEST_CASE("softmax normalizes along the requested axis") {
  auto x = random_tensor<double>({2, 3, 2, 2}, 12);
  auto y = ad::softmax(x, 1);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      for (int c = 0; c < 3; ++c) s += y.value()[(n * 3 + c) * 4 + i];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("dropout is the identity in eval mode and scales in train mode") {
  auto x = random_tensor<double>({1000}, 3);
  ad::Rng rng(5);
  auto eval_out = ad::dropout(x, 0.3, false, rng);
  CHECK(eval_out.value() == x.value());

  auto train_out = ad::dropout(x, 0.3, true, rng);
  int zeros = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    if (train_out.value()[i] == 0.0)
      ++zeros;
    else
      CHECK(train_out.value()[i] == doctest::Approx(x.value()[i] / 0.7));
  }
  CHECK(zeros > 200);
  CHECK(zeros < 400);
}

TEST_CASE("backward accumulates on leaves across calls") {
  auto w = random_tensor<double>({8}, 1, true);
  auto x = random_tensor<double>({8}, 2);
  auto loss = ad::sum(ad::mul(w, x));
  ad::backward(loss);
  for (int i = 0; i < 8; ++i) CHECK(w.grad()[i] == doctest::Approx(x.value()[i]));
  ad::backward(loss);
  for (int i = 0; i < 8; ++i) CHECK(w.grad()[i] == doctest::Approx(2 * x.value()[i]));
}

TEST_CASE("backward requires a scalar loss") {
  auto w = random_tensor<double>({3}, 1, true);
  CHECK_THROWS_AS(ad::backward(w), NumericError);
}

TEST_CASE("gradients match finite differences for every op") {
  // Spec invariant: each op checked over 10 seeds, h=1e-5, 64-bit, <1e-4.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    {  // conv2d (zero + circular padding, dilation)
      auto x = random_tensor<double>({2, 2, 4, 6}, seed, true);
      auto w = random_tensor<double>({3, 2, 3, 3}, seed + 100, true);
      auto b = random_tensor<double>({3}, seed + 200, true);
      ad::Conv2dOpts o;
      o.pad_h = 2;
      o.pad_w = 2;
      o.dilation_h = 2;
      o.dilation_w = 2;
      o.circular_w = (seed % 2) == 0;
      auto gc = grad_check([&] { return testutil::weighted_loss(ad::conv2d(x, w, b, o), seed); }, {x, w, b}, -1, seed);
      CHECK(gc.ok());
    }
    {  // softpool / avgpool / global pool
      auto x = random_tensor<double>({1, 2, 4, 4}, seed, true);
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::soft_pool2d(x, 2, 2), seed); }, {x}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::avg_pool2d(x, 2, 2), seed); }, {x}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::global_avg_pool(x), seed); }, {x}, -1, seed).ok());
    }
    {  // pixel_shuffle, spatial_shift, scale ops, concat, reshape
      auto x = random_tensor<double>({1, 8, 2, 3}, seed, true);
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::pixel_shuffle(x, 2), seed); }, {x}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::spatial_shift(x, 1, -1, true), seed); }, {x}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::spatial_shift(x, -1, 2, false), seed); }, {x}, -1, seed).ok());

      auto s = random_tensor<double>({1, 8, 1, 1}, seed + 1, true);
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::scale_channels(x, s), seed); }, {x, s}, -1, seed).ok());
      auto m = random_tensor<double>({1, 1, 2, 3}, seed + 2, true);
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::scale_spatial(x, m), seed); }, {x, m}, -1, seed).ok());

      auto y = random_tensor<double>({1, 4, 2, 3}, seed + 3, true);
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::concat<double>({x, y}, 1), seed); }, {x, y}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::reshape(x, {8, 6}), seed); }, {x}, -1, seed).ok());
    }
    {  // elementwise + reductions
      auto a = random_tensor<double>({12}, seed, true);
      auto b = random_tensor<double>({12}, seed + 5, true);
      CHECK(grad_check([&] { return ad::sum(ad::mul(a, b)); }, {a, b}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::sub(a, b), seed); }, {a, b}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::add(ad::scalar_mul(a, 2.5), b), seed); }, {a, b}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::sigmoid(a), seed); }, {a}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::leaky_relu(a, 0.1), seed); }, {a}, -1, seed).ok());
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::softmax(a, 0), seed); }, {a}, -1, seed).ok());
    }
    {  // linear
      auto x = random_tensor<double>({5, 4}, seed, true);
      auto w = random_tensor<double>({3, 4}, seed + 7, true);
      auto b = random_tensor<double>({3}, seed + 8, true);
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::linear(x, w, b), seed); }, {x, w, b}, -1, seed).ok());
    }
    {  // batch norm (train and eval modes)
      auto x = random_tensor<double>({2, 3, 2, 4}, seed, true);
      auto g = random_tensor<double>({3}, seed + 9, true, 0.5);
      auto be = random_tensor<double>({3}, seed + 10, true, 0.5);
      for (bool training : {true, false}) {
        std::vector<double> rm(3, 0.1), rv(3, 0.9);
        auto fn = [&] {
          std::vector<double> rm_copy = rm, rv_copy = rv;  // keep stats fixed across FD evals
          return testutil::weighted_loss(ad::batch_norm2d(x, g, be, rm_copy, rv_copy, training, 0.1, 1e-5), seed);
        };
        CHECK(grad_check(fn, {x, g, be}, -1, seed).ok());
      }
    }
    {  // gather/scatter rows, gather_pixels, dropout (fixed mask via reseeded rng)
      auto x = random_tensor<double>({6, 3}, seed, true);
      std::vector<std::int32_t> idx{0, 2, 2, 5, 1};
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::gather_rows(x, idx), seed); }, {x}, -1, seed).ok());
      std::vector<std::int32_t> rows{0, 1, 0, 2, 1, 0};
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::scatter_mean_rows(x, rows, 3), seed); }, {x}, -1, seed).ok());

      auto x4 = random_tensor<double>({2, 3, 2, 2}, seed + 11, true);
      std::vector<std::int64_t> items{0, 3, 5, 7};
      CHECK(grad_check([&] { return testutil::weighted_loss(ad::gather_pixels(x4, items), seed); }, {x4}, -1, seed).ok());

      auto xd = random_tensor<double>({40}, seed + 12, true);
      CHECK(grad_check(
                [&] {
                  ad::Rng rng(seed);
                  return testutil::weighted_loss(ad::dropout(xd, 0.25, true, rng), seed);
                },
                {xd}, -1, seed)
                .ok());
    }
  }
}

TEST_CASE("forward is deterministic for identical seeds") {
  auto run = [](std::uint64_t seed) {
    auto x = random_tensor<float>({1, 4, 8, 8}, seed);
    auto w = random_tensor<float>({4, 4, 3, 3}, seed + 1);
    ad::Conv2dOpts o;
    o.pad_h = 1;
    o.pad_w = 1;
    auto y = ad::conv2d(x, w, Tensor<float>{}, o);
    return ad::soft_pool2d(y, 2, 2).value();
  };
  CHECK(run(3) == run(3));
}

}  // TEST_SUITE
