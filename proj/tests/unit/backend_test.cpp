#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "test_support.hpp"
#include "vgdz/synthetic_backend.hpp"

using namespace vgdz;
using vgdz::testing::synthetic;

namespace {

IsolatedView uniform_view(int canvas, Rgb c, ViewKind kind = ViewKind::Mask, std::size_t proposal = 0) {
  return {Image(canvas, canvas, c), kind, proposal};
}

NoisedLatent noised(const Backend& b, const LatentTensor& z0, int t, std::uint32_t sample = 0, std::uint64_t seed = 1) {
  const auto schedule = b.descriptor().make_schedule();
  return add_noise(z0, sample_noise(z0.data.shape(), {seed, static_cast<std::uint32_t>(t), sample}), t, schedule);
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected vgdz::Error";
  return Errc::IOError;
}

}  // namespace

TEST(SyntheticBackend, DescriptorShape) {
  const auto b = synthetic(64);
  EXPECT_EQ(b.descriptor().latent_shape, (TensorShape{4, 8, 8}));
  EXPECT_EQ(b.descriptor().canvas, 64);
  EXPECT_DOUBLE_EQ(b.descriptor().latent_scale, 0.18215);
  EXPECT_EQ(b.descriptor().train_timesteps, 1000);
}

TEST(SyntheticBackend, RejectsBadCanvas) {
  SyntheticOptions o;
  o.canvas = 30;
  EXPECT_EQ(code_of([&] { SyntheticBackend b(o); }), Errc::InvalidConfig);
}

TEST(SyntheticBackend, UniformColourLatentByHand) {
  const auto b = synthetic(16);
  const Rgb c{0.75, 0.25, 0.5};
  // 2c - 1 = (0.5, -0.5, 0), projected row by row.
  const double want[4] = {0.5 * 0.5 - 0.3 * 0.5, -0.4 * 0.5 - 0.6 * 0.5, 0.2 * 0.5 + 0.3 * 0.5, 0.3 * 0.5 - 0.3 * 0.5};
  const auto z = b.encode_image(uniform_view(16, c, ViewKind::Crop, 3));
  EXPECT_EQ(z.kind, ViewKind::Crop);
  EXPECT_EQ(z.proposal, 3u);
  ASSERT_EQ(z.data.shape(), (TensorShape{4, 2, 2}));
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(z.data[k * 4 + i], 0.18215 * want[k], 1e-15) << k;
}

TEST(SyntheticBackend, PoolingAveragesEachBlock) {
  const auto b = synthetic(16);
  Image img(16, 16, Rgb{0.5, 0.5, 0.5});
  // Top-left 8x8 block: half white rows, half black rows, averages to grey.
  img.fill_rect({0, 0, 8, 4}, Rgb{1, 1, 1});
  img.fill_rect({0, 4, 8, 8}, Rgb{0, 0, 0});
  // Bottom-right block fully white.
  img.fill_rect({8, 8, 16, 16}, Rgb{1, 1, 1});
  const auto z = b.encode_image({img, ViewKind::Mask, 0});
  for (std::size_t k = 0; k < 4; ++k) {
    const double white = 0.18215 * (SyntheticBackend::kProjection[k][0] + SyntheticBackend::kProjection[k][1] +
                                     SyntheticBackend::kProjection[k][2]);
    EXPECT_NEAR(z.data[k * 4 + 0], 0.0, 1e-15);
    EXPECT_NEAR(z.data[k * 4 + 1], 0.0, 1e-15);
    EXPECT_NEAR(z.data[k * 4 + 2], 0.0, 1e-15);
    EXPECT_NEAR(z.data[k * 4 + 3], white, 1e-15);
  }
}

TEST(SyntheticBackend, GreyIsZero) {
  const auto z = synthetic(16).encode_image(uniform_view(16, {0.5, 0.5, 0.5}));
  for (double v : z.data.values()) EXPECT_EQ(v, 0.0);
}

TEST(SyntheticBackend, CanvasMismatch) {
  const auto b = synthetic(16);
  EXPECT_EQ(code_of([&] { b.encode_image(uniform_view(24, {0.5, 0.5, 0.5})); }), Errc::CanvasMismatch);
}

TEST(SyntheticBackend, PlantedColourPredictsExactNoise) {
  const auto b = synthetic(16);
  const std::string text = "the red cup on the left";
  const auto cond = b.encode_text(text);
  const auto z0 = b.encode_image(uniform_view(16, SyntheticBackend::planted_color(text)));
  for (int t : {1, 100, 500, 999, 1000}) {
    const auto zt = noised(b, z0, t);
    const auto eps = sample_noise(z0.data.shape(), zt.noise).data;
    const auto pred = b.predict_noise(zt, cond);
    EXPECT_NEAR(mean_squared_error(eps, pred), 0.0, 1e-20) << t;
  }
  EXPECT_EQ(b.color_gap(SyntheticBackend::planted_color(text), text), 0.0);
}

TEST(SyntheticBackend, MismatchErrorIsGapSquared) {
  const auto b = synthetic(16);
  const std::string text = "a dog";
  const Rgb c{0.9, 0.1, 0.2};
  const double gap = b.color_gap(c, text);
  ASSERT_GT(gap, 0.0);
  const auto z0 = b.encode_image(uniform_view(16, c));
  const auto zt = noised(b, z0, 300);
  const auto err = mean_squared_error(sample_noise(z0.data.shape(), zt.noise).data, b.predict_noise(zt, b.encode_text(text)));
  EXPECT_NEAR(err, gap * gap, 1e-9);
}

TEST(SyntheticBackend, ScaledColourStillMatches) {
  // Direction matters, not magnitude.
  const auto b = synthetic(16);
  const std::string text = "blue bowl";
  EXPECT_EQ(b.color_gap(SyntheticBackend::planted_color(text, 0.3), text), 0.0);
  EXPECT_GT(b.color_gap(SyntheticBackend::planted_color("other words"), text), 0.0);
}

TEST(SyntheticBackend, GreyHasUnitGap) {
  EXPECT_DOUBLE_EQ(synthetic(16).color_gap({0.5, 0.5, 0.5}, "anything at all"), 1.0);
}

TEST(SyntheticBackend, VParameterizationAgreesAtMatch) {
  SyntheticOptions o;
  o.canvas = 16;
  o.parameterization = Parameterization::V;
  const SyntheticBackend v(o);
  const auto e = synthetic(16);
  const std::string text = "old window";
  const auto z0 = v.encode_image(uniform_view(16, SyntheticBackend::planted_color(text)));
  const auto zt = noised(v, z0, 600);
  const auto pv = v.predict_noise(zt, v.encode_text(text));
  const auto pe = e.predict_noise(zt, e.encode_text(text));
  for (std::size_t i = 0; i < pv.size(); ++i) EXPECT_NEAR(pv[i], pe[i], 1e-12);

  const auto zm = noised(v, v.encode_image(uniform_view(16, {0.1, 0.9, 0.1})), 600);
  EXPECT_GT(mean_squared_error(sample_noise(zm.data.shape(), zm.noise).data, v.predict_noise(zm, v.encode_text(text))), 0.0);
}

TEST(VToEpsilon, ByHand) {
  const auto s = NoiseSchedule::make(BetaSchedule::Linear, 0.1, 0.1, 3);
  const TensorShape shape{1, 1, 2};
  NoisedLatent zt{Tensor(shape, std::vector<double>{1.0, 2.0}), 2, {}};
  const auto eps = v_to_epsilon(Tensor(shape, std::vector<double>{1.0, -1.0}), zt, s);
  EXPECT_NEAR(eps[0], 0.9 + std::sqrt(0.19) * 1.0, 1e-15);
  EXPECT_NEAR(eps[1], -0.9 + std::sqrt(0.19) * 2.0, 1e-15);
}

TEST(VToEpsilon, RecoversTrueNoiseFromExactV) {
  const auto s = NoiseSchedule::make(BetaSchedule::ScaledLinear, 0.00085, 0.012, 1000);
  const TensorShape shape{4, 4, 4};
  const LatentTensor z0{sample_noise(shape, {5, 1, 1}).data};
  for (int t : {1, 250, 1000}) {
    const auto eps = sample_noise(shape, {6, static_cast<std::uint32_t>(t), 0});
    const auto zt = add_noise(z0, eps, t, s);
    Tensor v(shape);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = s.signal_scale(t) * eps.data[i] - s.noise_scale(t) * z0.data[i];
    const auto back = v_to_epsilon(v, zt, s);
    for (std::size_t i = 0; i < v.size(); ++i) ASSERT_NEAR(back[i], eps.data[i], 1e-12);
  }
}

TEST(SyntheticBackend, TextEncodingDeterministicAndTruncated) {
  const auto b = synthetic(16);
  const auto a = b.encode_text("a  small   dog");
  EXPECT_EQ(a.values, b.encode_text("a small dog").values);
  EXPECT_EQ(a.context_length, 77u);
  EXPECT_FALSE(a.truncated);
  EXPECT_NE(a.values, b.encode_text("a small cat").values);

  std::string long_text;
  for (int i = 0; i < 100; ++i) long_text += "word" + std::to_string(i) + " ";
  const auto t = b.encode_text(long_text);
  EXPECT_TRUE(t.truncated);
  EXPECT_EQ(t.values.size(), 77u * 8u);
  EXPECT_EQ(t.text.find("word75"), std::string::npos);
  EXPECT_NE(t.text.find("word74"), std::string::npos);
}

TEST(SyntheticBackend, EmptyTextRejected) {
  EXPECT_EQ(code_of([] { synthetic(16).encode_text("   "); }), Errc::EmptyExpression);
}

TEST(SyntheticBackend, PredictErrors) {
  const auto b = synthetic(16);
  const auto cond = b.encode_text("x y");
  NoisedLatent bad_shape{Tensor({4, 3, 2}), 10, {}};
  EXPECT_EQ(code_of([&] { b.predict_noise(bad_shape, cond); }), Errc::ShapeMismatch);
  NoisedLatent bad_t{Tensor({4, 2, 2}), 0, {}};
  EXPECT_EQ(code_of([&] { b.predict_noise(bad_t, cond); }), Errc::TimestepOutOfRange);
  TextEmbedding foreign;
  foreign.context_length = 4;
  foreign.embed_dim = 2;
  foreign.values.assign(8, 0.0);
  NoisedLatent ok{Tensor({4, 2, 2}), 10, {}};
  EXPECT_EQ(code_of([&] { b.predict_noise(ok, foreign); }), Errc::ShapeMismatch);
}

TEST(SyntheticBackend, BatchEqualsSingles) {
  const auto b = synthetic(16);
  const auto cond = b.encode_text("tall chair");
  std::vector<NoisedLatent> batch;
  for (int i = 0; i < 6; ++i) {
    const Rgb c{0.1 * i + 0.2, 0.7 - 0.1 * i, 0.4};
    batch.push_back(noised(b, b.encode_image(uniform_view(16, c)), 100 * (i + 1), static_cast<std::uint32_t>(i)));
  }
  const auto together = b.predict_noise(batch, cond);
  for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(together[i], b.predict_noise(batch[i], cond));
}

TEST(SyntheticBackend, ThreadSafe) {
  const auto b = synthetic(16);
  const auto cond = b.encode_text("near window");
  const auto zt = noised(b, b.encode_image(uniform_view(16, {0.2, 0.3, 0.9})), 400);
  const auto want = b.predict_noise(zt, cond);
  std::vector<std::thread> pool;
  std::atomic<int> bad{0};
  for (int k = 0; k < 8; ++k)
    pool.emplace_back([&] {
      for (int i = 0; i < 50; ++i)
        if (!(b.predict_noise(zt, cond) == want)) ++bad;
    });
  for (auto& th : pool) th.join();
  EXPECT_EQ(bad.load(), 0);
}

TEST(BackendDescriptor, JsonRoundTrip) {
  auto d = synthetic(64).descriptor();
  d.schedule_kind = BetaSchedule::ScaledLinear;
  d.beta_start = 0.00085;
  d.beta_end = 0.012;
  d.parameterization = Parameterization::V;
  const auto back = BackendDescriptor::from_json(d.to_json());
  EXPECT_EQ(back.to_json(), d.to_json());
  EXPECT_EQ(code_of([] { BackendDescriptor::from_json(nlohmann::json{{"kind", "synthetic"}}); }), Errc::SchemaError);
}
