#include <doctest.h>

#include <cmath>

#include "lidarmos/network.hpp"
#include "testutil.hpp"

using namespace mos;
using ad::Tensor;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

// Tiny config used by the end-to-end gradient check.
NetworkConfig toy_config() {
  NetworkConfig c;
  c.base_channels = 4;
  c.stages = 2;
  c.n_res = 2;
  c.head_classes = 2;
  c.height = 8;
  c.width = 16;
  c.use_dropout = false;
  c.meta_hidden = 4;
  return c;
}

// Coordinates drawn from an exact 1/1024 grid so integer translations stay
// exactly representable.
Tensor<double> grid_coords(int h, int w, std::uint64_t seed) {
  ad::Rng rng(seed);
  std::vector<double> data(static_cast<std::size_t>(3) * h * w);
  for (auto& v : data) v = static_cast<double>(static_cast<int>(rng.integer(64 * 1024)) - 32 * 1024) / 1024.0;
  return Tensor<double>::from_data({1, 3, h, w}, std::move(data));
}

Tensor<double> random_mask(int h, int w, std::uint64_t seed, double p_valid = 0.8) {
  ad::Rng rng(seed);
  std::vector<double> data(static_cast<std::size_t>(h) * w);
  for (auto& v : data) v = rng.uniform() < p_valid ? 1.0 : 0.0;
  return Tensor<double>::from_data({1, 1, h, w}, std::move(data));
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("meta kernel is exactly invariant under global coordinate translation") {
  const int h = 6, w = 8, c = 4;
  ad::Rng rng(3);
  nn::MetaKernelLayer<double> layer;
  layer.init("meta", c, c, rng);

  auto feats = random_tensor<double>({1, c, h, w}, 5);
  auto coords = grid_coords(h, w, 7);
  auto valid = random_mask(h, w, 9);
  auto base = layer.forward(feats, coords, valid);

  auto shifted = Tensor<double>::from_data(coords.shape(), coords.value());
  const double delta[3] = {10.0, -4.0, 2.0};
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < hw; ++i) shifted.value()[ch * hw + i] += delta[ch];
  auto moved = layer.forward(feats, shifted, valid);

  for (std::size_t i = 0; i < base.value().size(); ++i) CHECK(base.value()[i] == moved.value()[i]);
}

TEST_CASE("meta kernel with forced weights reduces to a box filter") {
  const int h = 4, w = 6, c = 3;
  ad::Rng rng(2);
  nn::MetaKernelLayer<double> layer;
  layer.init("meta", c, c, rng);

  // MLP output forced to all-ones weight vectors: zero both mlp layers except
  // the final bias.
  std::fill(layer.mlp1.weight.tensor.value().begin(), layer.mlp1.weight.tensor.value().end(), 0.0);
  std::fill(layer.mlp1.bias.tensor.value().begin(), layer.mlp1.bias.tensor.value().end(), 0.0);
  std::fill(layer.mlp2.weight.tensor.value().begin(), layer.mlp2.weight.tensor.value().end(), 0.0);
  std::fill(layer.mlp2.bias.tensor.value().begin(), layer.mlp2.bias.tensor.value().end(), 1.0);
  // 1x1 aggregation averages the 9 neighbor blocks channel-wise.
  std::fill(layer.agg.weight.tensor.value().begin(), layer.agg.weight.tensor.value().end(), 0.0);
  std::fill(layer.agg.bias.tensor.value().begin(), layer.agg.bias.tensor.value().end(), 0.0);
  auto& aw = layer.agg.weight.tensor;  // (c, 9c, 1, 1)
  for (int oc = 0; oc < c; ++oc)
    for (int j = 0; j < 9; ++j) aw.value()[oc * 9 * c + j * c + oc] = 1.0 / 9.0;

  auto feats = random_tensor<double>({1, c, h, w}, 4);
  auto coords = grid_coords(h, w, 5);
  auto valid = Tensor<double>::full({1, 1, h, w}, 1.0);
  auto out = layer.forward(feats, coords, valid);

  // Box-filter oracle with circular width and zero-padded height.
  for (int cc = 0; cc < c; ++cc)
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        double acc = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int sv = v + dy;
            if (sv < 0 || sv >= h) continue;
            const int su = ((u + dx) % w + w) % w;
            acc += feats.value()[(cc * h + sv) * w + su];
          }
        acc /= 9.0;
        CHECK(out.value()[(cc * h + v) * w + u] == doctest::Approx(acc).epsilon(1e-9));
      }
}

TEST_CASE("meta kernel zeroes contributions from invalid neighbors") {
  const int h = 3, w = 4, c = 2;
  ad::Rng rng(6);
  nn::MetaKernelLayer<double> layer;
  layer.init("meta", c, c, rng);
  std::fill(layer.agg.bias.tensor.value().begin(), layer.agg.bias.tensor.value().end(), 0.0);

  auto feats = random_tensor<double>({1, c, h, w}, 7);
  auto coords = grid_coords(h, w, 8);
  // All pixels invalid: only the aggregation bias (zeroed) remains.
  auto none = Tensor<double>::zeros({1, 1, h, w});
  auto out = layer.forward(feats, coords, none);
  for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("attention closed forms under zeroed convolutions") {
  const int c = 8, h = 4, w = 4;
  ad::Rng rng(3);
  nn::MotionGuidedAttention<double> attn;
  attn.init("attn", c, c, rng);
  auto f_a = random_tensor<double>({1, c, h, w}, 11);
  auto f_m = random_tensor<double>({1, c, h, w}, 12);

  auto zero = [](ad::Parameter<double>& p) {
    std::fill(p.tensor.value().begin(), p.tensor.value().end(), 0.0);
  };

  SUBCASE("zeroed spatial conv gives f_a' = 0.5 f_a") {
    zero(attn.spatial_conv.weight);
    zero(attn.spatial_conv.bias);
    // With the channel conv intact the full output differs, so probe the gate
    // path: channel conv also zeroed makes f_a'' = 1.5 f_a (below); here check
    // with channel conv zeroed too that intermediate f_a' = 0.5 f_a by linearity.
    zero(attn.channel_conv.weight);
    zero(attn.channel_conv.bias);
    auto out = attn.forward(f_a, f_m);
    for (std::size_t i = 0; i < out.value().size(); ++i)
      CHECK(out.value()[i] == doctest::Approx(1.5 * f_a.value()[i]).epsilon(1e-6));
  }

  SUBCASE("zeroed channel conv gives f_a'' = f_a' + f_a") {
    zero(attn.channel_conv.weight);
    zero(attn.channel_conv.bias);
    auto out = attn.forward(f_a, f_m);
    // Compute f_a' directly from the intact spatial conv.
    auto gate = ad::sigmoid(attn.spatial_conv.forward(f_m));
    auto fap = ad::scale_spatial(f_a, gate);
    for (std::size_t i = 0; i < out.value().size(); ++i)
      CHECK(out.value()[i] == doctest::Approx(fap.value()[i] + f_a.value()[i]).epsilon(1e-6));
  }
}

TEST_CASE("decoder stages restore the spatial dims of their skips") {
  NetworkConfig cfg = toy_config();
  MosNet<double> net(cfg, 5);
  auto range = random_tensor<double>({1, 5, cfg.height, cfg.width}, 1);
  auto res = random_tensor<double>({1, cfg.n_res, cfg.height, cfg.width}, 2);
  auto coords = grid_coords(cfg.height, cfg.width, 3);
  auto valid = Tensor<double>::full({1, 1, cfg.height, cfg.width}, 1.0);
  auto logits = net.forward(range, res, coords, valid, false);
  CHECK(logits.shape() == ad::Shape{1, cfg.head_classes, cfg.height, cfg.width});
  CHECK(net.last_features().shape() == ad::Shape{1, cfg.base_channels, cfg.height, cfg.width});
}

TEST_CASE("forward is bitwise deterministic in eval mode") {
  NetworkConfig cfg = toy_config();
  MosNet<float> net(cfg, 7);
  auto range = random_tensor<float>({1, 5, cfg.height, cfg.width}, 1);
  auto res = random_tensor<float>({1, cfg.n_res, cfg.height, cfg.width}, 2);
  auto coords = random_tensor<float>({1, 3, cfg.height, cfg.width}, 3);
  auto valid = Tensor<float>::full({1, 1, cfg.height, cfg.width}, 1.0f);
  auto a = net.forward(range, res, coords, valid, false);
  auto b = net.forward(range, res, coords, valid, false);
  CHECK(a.value() == b.value());
}

TEST_CASE("shape table matches the frozen desk-config regression") {
  NetworkConfig cfg;  // desk defaults: base 16, 3 stages, 64x256
  MosNet<float> net(cfg, 1);
  const std::string desc = net.describe();
  CHECK(desc.find("enc_a.rc1.shortcut.weight [16x5x1x1] 80") != std::string::npos);
  CHECK(desc.find("enc_a.meta.agg.weight [16x144x1x1] 2304") != std::string::npos);
  CHECK(desc.find("enc_m.rc.shortcut.weight [16x8x1x1] 128") != std::string::npos);
  CHECK(desc.find("attn3.channel.weight [128x128x1x1] 16384") != std::string::npos);
  CHECK(desc.find("head.weight [2x16x1x1] 32") != std::string::npos);
  CHECK(desc.find("enc stage 1: 1x32x32x128 (fused)") != std::string::npos);
  CHECK(desc.find("enc stage 3: 1x128x8x32 (fused)") != std::string::npos);
  CHECK(desc.find("dec stage 1: 1x16x64x256") != std::string::npos);
  CHECK(desc.find("logits: 1x2x64x256") != std::string::npos);
  // Frozen parameter count for the desk config; any topology change must be
  // deliberate and update this value.
  CHECK(desc.find("total parameters: 1362178") != std::string::npos);
  CHECK(net.parameter_count() == 1362178);
}

TEST_CASE("single-branch ablation consumes concatenated channels") {
  NetworkConfig cfg = toy_config();
  cfg.single_branch = true;
  MosNet<float> net(cfg, 2);
  auto range = random_tensor<float>({1, 5, cfg.height, cfg.width}, 1);
  auto res = random_tensor<float>({1, cfg.n_res, cfg.height, cfg.width}, 2);
  auto coords = random_tensor<float>({1, 3, cfg.height, cfg.width}, 3);
  auto valid = Tensor<float>::full({1, 1, cfg.height, cfg.width}, 1.0f);
  auto logits = net.forward(range, res, coords, valid, false);
  CHECK(logits.shape() == ad::Shape{1, 2, cfg.height, cfg.width});
  // No motion branch or attention parameters exist in this mode.
  for (const auto* p : net.parameters()) {
    CHECK(p->name.find("enc_m") == std::string::npos);
    CHECK(p->name.find("attn") == std::string::npos);
  }
}

TEST_CASE("network config json round-trip and validation") {
  testutil::TempDir dir("netcfg");
  NetworkConfig cfg = toy_config();
  cfg.attention_scales = {1};
  cfg.pool = "avgpool";
  cfg.save(dir.path() / "net.json");
  const NetworkConfig back = NetworkConfig::load(dir.path() / "net.json");
  CHECK(back.base_channels == cfg.base_channels);
  CHECK(back.attention_scales == cfg.attention_scales);
  CHECK(back.pool == "avgpool");

  NetworkConfig bad = toy_config();
  bad.height = 10;  // not divisible by 2^stages
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = toy_config();
  bad.head_classes = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("checkpoint round-trip restores bitwise-identical forward results") {
  testutil::TempDir dir("ckpt");
  NetworkConfig cfg = toy_config();
  MosNet<float> net(cfg, 9);
  auto range = random_tensor<float>({1, 5, cfg.height, cfg.width}, 1);
  auto res = random_tensor<float>({1, cfg.n_res, cfg.height, cfg.width}, 2);
  auto coords = random_tensor<float>({1, 3, cfg.height, cfg.width}, 3);
  auto valid = Tensor<float>::full({1, 1, cfg.height, cfg.width}, 1.0f);
  const auto before = net.forward(range, res, coords, valid, false).value();

  Checkpoint ckpt;
  net.save(ckpt);
  ckpt.save(dir.path() / "net.ckpt");

  MosNet<float> restored(cfg, 12345);  // different init
  restored.load(Checkpoint::load(dir.path() / "net.ckpt"));
  const auto after = restored.forward(range, res, coords, valid, false).value();
  CHECK(before == after);
}

TEST_CASE("end-to-end gradients of the toy network match finite differences") {
  NetworkConfig cfg = toy_config();
  MosNet<double> net(cfg, 21);
  auto range = random_tensor<double>({1, 5, cfg.height, cfg.width}, 31, false, 0.5);
  auto res = random_tensor<double>({1, cfg.n_res, cfg.height, cfg.width}, 32, false, 0.5);
  auto coords = grid_coords(cfg.height, cfg.width, 33);
  auto valid = random_mask(cfg.height, cfg.width, 34, 0.9);

  std::vector<Tensor<double>> inputs;
  for (auto* p : net.parameters()) inputs.push_back(p->tensor);

  auto forward = [&] {
    auto logits = net.forward(range, res, coords, valid, true, nullptr);
    return ad::mean(ad::mul(logits, logits));  // smooth scalar objective
  };
  auto gc = grad_check(forward, inputs, 6, 99);
  CHECK(gc.checked > 100);
  CHECK(gc.max_rel_err < 1e-4);
}

}  // TEST_SUITE
