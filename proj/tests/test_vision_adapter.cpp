#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "structplan/raster.hpp"
#include "structplan/simworld.hpp"
#include "structplan/vision_adapter.hpp"
#include "support.hpp"

using namespace structplan;

namespace {

AdapterParams params(std::size_t m_img = 8, std::uint64_t seed = 1) {
  AdapterConfig c;
  c.m_img = m_img;
  return AdapterParams::init(c, seed);
}

Tensor random_projected(std::size_t rows, std::uint64_t seed) {
  Rng rng(seed);
  return normal_tensor(rows, 64, 1.0, rng);
}

Tensor row_times(const Tensor& x, const Tensor& W, const Tensor* b) {
  Tensor y(x.rows, W.cols);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < W.cols; ++c) {
      double s = b ? b->data[c] : 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) s += x.at(r, k) * W.at(k, c);
      y.data[r * y.cols + c] = s;
    }
  return y;
}

}  // namespace

TEST(Project, ZeroPatchesZeroBiases) {
  const AdapterParams p = params();
  ViewFeatureGrid g;
  const Tensor out = project_patch_features(g, p);
  EXPECT_EQ(out.rows, 36u);
  EXPECT_EQ(out.cols, 64u);
  for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(Project, ShapeOnRealScene) {
  const auto s = testing_support::scenes(1, 3)[0];
  const Tensor out = project_patch_features(rasterize_views(s)[0], params());
  EXPECT_EQ(out.rows, 36u);
  EXPECT_EQ(out.cols, 64u);
  EXPECT_TRUE(out.all_finite());
}

TEST(Project, NonFiniteInput) {
  ViewFeatureGrid g;
  g.at(3, 5) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(project_patch_features(g, params()), NumericError);
}

TEST(Project, GradientMatchesFiniteDifferences) {
  AdapterParams p = params(4, 2);
  const auto s = testing_support::scenes(1, 5)[0];
  const Tensor grid = grid_tensor(rasterize_views(s)[0]);
  Rng rng(7);
  const Tensor target = normal_tensor(36, 64, 1.0, rng);
  const auto res = finite_diff_check(
      [&](Binder& b) { return ad::mse(b.tape(), adapter_project(b, "adapter", b.tape().constant(grid)), target); },
      p.params, prefix_predicate({"adapter.W", "adapter.b"}));
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
  EXPECT_GE(res.coordinates, 200u);
}

TEST(Compress, TokenCountForEveryBudget) {
  for (std::size_t m : {4, 8, 16, 32}) {
    const AdapterParams p = params(m);
    for (std::size_t v = 0; v < 6; ++v) {
      const Tensor out = compress_view_tokens(v, random_projected(36, v), p);
      EXPECT_EQ(out.rows, m);
      EXPECT_EQ(out.cols, 64u);
    }
  }
}

TEST(Compress, ExpansionForbidden) {
  AdapterConfig c;
  c.m_img = 128;
  EXPECT_THROW(AdapterParams::init(c, 1), ConfigError);
  // an oversize budget against a shorter patch set
  const AdapterParams p = params(16);
  EXPECT_THROW(compress_view_tokens(0, random_projected(10, 1), p), ConfigError);
}

TEST(Compress, ViewOutOfRange) { EXPECT_THROW(compress_view_tokens(6, random_projected(36, 1), params()), RangeError); }

TEST(Compress, NonFiniteProjected) {
  Tensor x = random_projected(36, 2);
  x.data[17] = std::nan("");
  EXPECT_THROW(compress_view_tokens(0, x, params()), NumericError);
}

TEST(Compress, IdenticalKeysGiveValueProjection) {
  const AdapterParams p = params(8, 3);
  Rng rng(5);
  const Tensor u = normal_tensor(1, 64, 1.0, rng);
  const Tensor& Wv = p.params.at("adapter.attn.v.W");
  const Tensor& bv = p.params.at("adapter.attn.v.b");
  const Tensor& Wo = p.params.at("adapter.attn.o.W");
  const Tensor& bo = p.params.at("adapter.attn.o.b");
  const Tensor expect = row_times(row_times(u, Wv, &bv), Wo, &bo);
  for (std::size_t P : {9, 36}) {
    Tensor x(P, 64);
    for (std::size_t r = 0; r < P; ++r) std::copy(u.data.begin(), u.data.end(), x.data.begin() + static_cast<long>(r * 64));
    const Tensor out = compress_view_tokens(2, x, p);
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t c = 0; c < 64; ++c) EXPECT_NEAR(out.at(r, c), expect.data[c], 1e-10);
  }
}

TEST(Compress, KeyPermutationBitExact) {
  const AdapterParams p = params(8, 4);
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_projected(36, 100 + trial);
    std::vector<std::size_t> perm(36);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), gen);
    Tensor y(36, 64);
    for (std::size_t r = 0; r < 36; ++r)
      std::copy_n(x.data.begin() + static_cast<long>(perm[r] * 64), 64, y.data.begin() + static_cast<long>(r * 64));
    EXPECT_EQ(compress_view_tokens(1, x, p), compress_view_tokens(1, y, p));
  }
}

TEST(Compress, AttentionRowsSumToOne) {
  const AdapterParams p = params(8, 6);
  std::vector<Tensor> att;
  compress_view_tokens(3, random_projected(36, 9), p, &att);
  ASSERT_EQ(att.size(), 4u);
  for (const auto& w : att) {
    EXPECT_EQ(w.rows, 8u);
    EXPECT_EQ(w.cols, 36u);
    for (std::size_t r = 0; r < w.rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < w.cols; ++c) {
        EXPECT_GE(w.at(r, c), 0.0);
        s += w.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Compress, GradientMatchesFiniteDifferences) {
  AdapterParams p = params(4, 8);
  p.params["x"] = random_projected(36, 10);
  Rng rng(2);
  const Tensor target = normal_tensor(4, 64, 1.0, rng);
  const auto res = finite_diff_check(
      [&](Binder& b) {
        return ad::mse(b.tape(), adapter_compress(b, "adapter", p.config, 2, b("x")).tokens, target);
      },
      p.params, [](std::string_view) { return true; });
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Assemble, LengthAndOrder) {
  const AdapterParams p = params(16);
  std::vector<Tensor> views;
  for (std::size_t v = 0; v < 6; ++v) views.push_back(Tensor(16, 64, static_cast<double>(v + 1)));
  const Tensor text(4, 64, -1.0);
  const TokenSequence seq = assemble_multiview_sequence(views, text, p);
  EXPECT_EQ(seq.tokens.rows, 106u);
  EXPECT_EQ(seq.tags.size(), 106u);
  const Tensor& tags = p.params.at("adapter.view_tags");
  std::size_t row = 0;
  for (std::size_t v = 0; v < 6; ++v) {
    EXPECT_EQ(seq.tags[row], (TokenTag{TokenKind::kViewTag, static_cast<int>(v)}));
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(seq.tokens.at(row, c), tags.at(v, c));
    ++row;
    for (std::size_t i = 0; i < 16; ++i, ++row) {
      EXPECT_EQ(seq.tags[row], (TokenTag{TokenKind::kImage, static_cast<int>(v)}));
      EXPECT_EQ(seq.tokens.at(row, 0), static_cast<double>(v + 1));
    }
  }
  for (; row < 106; ++row) EXPECT_EQ(seq.tags[row].kind, TokenKind::kText);
}

TEST(Assemble, SwappingBlocksChangesSequence) {
  const AdapterParams p = params(4);
  std::vector<Tensor> views;
  for (std::size_t v = 0; v < 6; ++v) views.push_back(random_projected(4, 20 + v));
  const Tensor text(1, 64);
  const auto a = assemble_multiview_sequence(views, text, p);
  std::swap(views[0], views[3]);
  const auto b = assemble_multiview_sequence(views, text, p);
  EXPECT_NE(a.tokens, b.tokens);
}

TEST(Assemble, MissingView) {
  const AdapterParams p = params(4);
  std::vector<Tensor> views(5, Tensor(4, 64));
  EXPECT_THROW(assemble_multiview_sequence(views, Tensor(1, 64), p), ArityError);
}

TEST(Assemble, TagsDistinctAtInit) {
  const Tensor& tags = params().params.at("adapter.view_tags");
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < 64; ++c) d += std::abs(tags.at(i, c) - tags.at(j, c));
      EXPECT_GT(d, 0.0);
    }
}

TEST(AdapterConfig, HeadsMustDivideWidth) {
  AdapterConfig c;
  c.heads = 3;
  EXPECT_THROW(validate_adapter_config(c), ConfigError);
}
