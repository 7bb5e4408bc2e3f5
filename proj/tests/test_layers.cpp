#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "edgedoc/layers.hpp"
#include "edgedoc/ops.hpp"
#include "edgedoc/rng.hpp"
#include "oracles.hpp"

using namespace edgedoc;

namespace {

Tensor random_tensor(Shape shape, SplitMix64& rng, float lo = -1.0f,
                     float hi = 1.0f) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

void zero_param(ParamBundle& params, const std::string& name) {
  Tensor t = params.at(name);
  std::fill(t.data(), t.data() + t.size(), 0.0f);
}

Scalar param_gradcheck(const ParamBundle& params, const std::string& name,
                       const std::function<Tensor()>& loss) {
  // Finite differences through a named parameter while the block reads it
  // from the bundle; the autodiff gradient comes from a taped run.
  Tensor p = params.at(name);
  Tensor saved = p.clone();
  p.drop_grad();
  Scalar loss0;
  {
    Tape tape;
    Tensor l = loss();
    loss0 = l.item();
    tape.backward(l);
  }
  (void)loss0;
  std::vector<Scalar> g_ad(p.grad(), p.grad() + p.size());
  Scalar worst = 0;
  const Scalar eps = 1e-2f;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p.data()[i] = saved.data()[i] + eps;
    Scalar up = loss().item();
    p.data()[i] = saved.data()[i] - eps;
    Scalar dn = loss().item();
    p.data()[i] = saved.data()[i];
    Scalar fd = (up - dn) / (2 * eps);
    Scalar err = std::abs(g_ad[i] - fd) /
                 std::max({1.0f, std::abs(g_ad[i]), std::abs(fd)});
    worst = std::max(worst, err);
  }
  p.drop_grad();
  return worst;
}

}  // namespace

TEST_CASE("param lookup and counting") {
  ParamBundle params;
  SplitMix64 rng(1);
  init::conv(params, "c", 4, 3, 3, 3, rng);
  CHECK(param_count(params) == 4 * 3 * 3 * 3 + 4);
  CHECK(param(params, "c.w").shape() == Shape{4, 3, 3, 3});
  CHECK_THROWS_AS(param(params, "nope"), ContractError);
}

TEST_CASE("he-uniform init stays inside the fan-in limit and fills it") {
  ParamBundle params;
  SplitMix64 rng(2);
  init::conv(params, "c", 8, 4, 3, 3, rng);
  const Tensor& w = param(params, "c.w");
  const float limit = std::sqrt(6.0f / (4 * 3 * 3));
  float maxabs = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(std::abs(w.data()[i]) <= limit);
    maxabs = std::max(maxabs, std::abs(w.data()[i]));
  }
  CHECK(maxabs > 0.8f * limit);
  const Tensor& b = param(params, "c.b");
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(b.data()[i] == 0.0f);
}

TEST_CASE("LayerSpec validation") {
  CHECK_THROWS_AS(
      (LayerSpec{LayerKind::ConvEncoderBlock, 8, 8, /*kernel=*/4}.validate()),
      ContractError);
  CHECK_THROWS_AS((LayerSpec{LayerKind::ConvEncoderBlock, 0, 8}.validate()),
                  ContractError);
  CHECK_NOTHROW((LayerSpec{LayerKind::ConvEncoderBlock, 8, 8, 3, 4}.validate()));
}

TEST_CASE("conv encoder block with zeroed projection is the identity") {
  ParamBundle params;
  SplitMix64 rng(3);
  blocks::conv_encoder_init(params, "blk", 6, 3, 4, rng);
  zero_param(params, "blk.pw2.w");
  SplitMix64 drng(4);
  Tensor x = random_tensor({1, 6, 5, 5}, drng);
  Tensor y = blocks::conv_encoder(x, params, "blk", 3);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-6));
}

TEST_CASE("attention block with zeroed proj and mlp2 is the identity") {
  ParamBundle params;
  SplitMix64 rng(5);
  blocks::transpose_attention_init(params, "attn", 6, 4, rng);
  zero_param(params, "attn.proj.w");
  zero_param(params, "attn.proj.b");
  zero_param(params, "attn.mlp2.w");
  zero_param(params, "attn.mlp2.b");
  SplitMix64 drng(6);
  Tensor x = random_tensor({1, 6, 4, 4}, drng);
  Tensor y = blocks::transpose_attention(x, params, "attn");
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-6));
}

TEST_CASE("block shape contracts") {
  SplitMix64 rng(7);
  ParamBundle params;
  blocks::conv_encoder_init(params, "enc", 8, 3, 4, rng);
  blocks::transpose_attention_init(params, "attn", 8, 4, rng);
  blocks::downsample_init(params, "down", 8, 16, rng);
  blocks::up_init(params, "up", 16 + 8, 8, rng);
  blocks::cls_head_init(params, "cls", 16, rng);
  blocks::mask_head_init(params, "mask", 8, rng);

  Tensor x = random_tensor({2, 8, 8, 8}, rng);
  CHECK(blocks::conv_encoder(x, params, "enc").shape() == Shape{2, 8, 8, 8});
  CHECK(blocks::transpose_attention(x, params, "attn").shape() ==
        Shape{2, 8, 8, 8});
  Tensor d = blocks::downsample(x, params, "down");
  CHECK(d.shape() == Shape{2, 16, 4, 4});
  CHECK(blocks::up(d, x, params, "up").shape() == Shape{2, 8, 8, 8});
  CHECK(blocks::cls_head(d, params, "cls").shape() == Shape{2, 1});
  CHECK(blocks::mask_head(x, params, "mask").shape() == Shape{2, 1, 8, 8});

  // skip with wrong spatial size is rejected
  Tensor bad_skip = random_tensor({2, 8, 6, 6}, rng);
  CHECK_THROWS_AS(blocks::up(d, bad_skip, params, "up"), ShapeError);
}

TEST_CASE("attention rows form a distribution") {
  ParamBundle params;
  SplitMix64 rng(8);
  blocks::transpose_attention_init(params, "attn", 5, 4, rng);
  Tensor x = random_tensor({2, 5, 3, 4}, rng, -2.0f, 2.0f);
  Tensor a = blocks::transpose_attention_matrix(x, params, "attn");
  REQUIRE(a.shape() == Shape{2, 5, 5});
  for (std::size_t r = 0; r < 2 * 5; ++r) {
    float sum = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      float v = a.data()[r * 5 + c];
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
  }
}

TEST_CASE("zero temperature gives uniform attention") {
  ParamBundle params;
  SplitMix64 rng(9);
  const std::size_t C = 6;
  blocks::transpose_attention_init(params, "attn", C, 4, rng);
  zero_param(params, "attn.temp");
  Tensor x = random_tensor({1, C, 4, 4}, rng, -2.0f, 2.0f);
  Tensor a = blocks::transpose_attention_matrix(x, params, "attn");
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a.data()[i] == doctest::Approx(1.0f / C).epsilon(1e-6));
}

TEST_CASE("cls head is invariant to spatial permutation") {
  ParamBundle params;
  SplitMix64 rng(10);
  blocks::cls_head_init(params, "cls", 8, rng);
  Tensor x = random_tensor({1, 8, 4, 4}, rng);
  Tensor logit = blocks::cls_head(x, params, "cls");

  // shuffle pixel positions identically in every channel
  std::vector<std::size_t> perm(16);
  for (std::size_t i = 0; i < 16; ++i) perm[i] = i;
  for (std::size_t i = 15; i > 0; --i)
    std::swap(perm[i], perm[rng.next_below(i + 1)]);
  Tensor xp = Tensor::zeros({1, 8, 4, 4});
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t p = 0; p < 16; ++p)
      xp.data()[c * 16 + perm[p]] = x.data()[c * 16 + p];
  Tensor logitp = blocks::cls_head(xp, params, "cls");
  CHECK(logitp.data()[0] == doctest::Approx(logit.data()[0]).epsilon(1e-5));
}

TEST_CASE("gradients flow through every block parameter") {
  SplitMix64 rng(11);
  Tensor x = random_tensor({1, 4, 4, 4}, rng);

  auto check_block = [&](ParamBundle& params,
                         const std::function<Tensor()>& loss) {
    for (const auto& [name, p] : params) {
      CAPTURE(name);
      CHECK(param_gradcheck(params, name, loss) < 5e-3f);
    }
  };

  {
    ParamBundle params;
    blocks::conv_encoder_init(params, "b", 4, 3, 2, rng);
    check_block(params, [&] {
      return ops::mean_all(blocks::conv_encoder(x, params, "b", 3));
    });
  }
  {
    ParamBundle params;
    blocks::transpose_attention_init(params, "b", 4, 2, rng);
    check_block(params, [&] {
      return ops::mean_all(blocks::transpose_attention(x, params, "b"));
    });
  }
  {
    ParamBundle params;
    blocks::downsample_init(params, "b", 4, 6, rng);
    check_block(params, [&] {
      return ops::mean_all(blocks::downsample(x, params, "b"));
    });
  }
  {
    ParamBundle params;
    blocks::up_init(params, "b", 4, 3, rng);
    Tensor none;
    check_block(params, [&] {
      // relu kinks make FD noisy at exact zeros; square the output so the
      // loss is smooth where relu is active and flat (grad 0) where it is not
      Tensor y = blocks::up(x, none, params, "b");
      return ops::mean_all(ops::mul(y, y));
    });
  }
  {
    ParamBundle params;
    blocks::cls_head_init(params, "b", 4, rng);
    check_block(params, [&] {
      return ops::mean_all(ops::sigmoid(blocks::cls_head(x, params, "b")));
    });
  }
  {
    ParamBundle params;
    blocks::mask_head_init(params, "b", 4, rng);
    check_block(params, [&] {
      return ops::mean_all(blocks::mask_head(x, params, "b"));
    });
  }
}

TEST_CASE("up block works without a skip connection") {
  ParamBundle params;
  SplitMix64 rng(12);
  blocks::up_init(params, "u", 8, 4, rng);
  Tensor x = random_tensor({1, 8, 3, 5}, rng);
  Tensor none;
  Tensor y = blocks::up(x, none, params, "u");
  CHECK(y.shape() == Shape{1, 4, 6, 10});
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y.data()[i] >= 0.0f);
}
