#pragma once

// Vision adapter: a two-layer patch projection followed by per-view query
// cross-attention that compresses P patch tokens to M_img tokens, and the
// multi-view sequence layout [tag, image tokens] x 6 + text tokens.

#include <algorithm>
#include <array>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "structplan/nn.hpp"
#include "structplan/raster.hpp"

namespace structplan {

struct AdapterConfig {
  std::size_t in_channels = kVisChannels;
  std::size_t patches = kPatches;
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t m_img = 8;

  friend bool operator==(const AdapterConfig&, const AdapterConfig&) = default;
};

inline void validate_adapter_config(const AdapterConfig& c) {
  if (c.channels == 0 || c.heads == 0 || c.channels % c.heads != 0) {
    throw ConfigError("adapter channels " + std::to_string(c.channels) + " must be a positive multiple of heads " +
                      std::to_string(c.heads));
  }
  if (c.m_img == 0) throw ConfigError("adapter m_img must be positive");
  if (c.m_img > c.patches) {
    throw ConfigError("adapter m_img " + std::to_string(c.m_img) + " exceeds patch count " +
                      std::to_string(c.patches) + " (expansion forbidden)");
  }
}

/// Parameter names under `prefix`: W1, b1, W2, b2, q_img, attn.{q,k,v,o}.W, attn.{q,v,o}.b, view_tags.
inline void init_adapter(ParamStore& ps, const std::string& prefix, const AdapterConfig& c, Rng& rng) {
  validate_adapter_config(c);
  ps[prefix + ".W1"] = normal_tensor(c.in_channels, c.channels, std::sqrt(1.0 / static_cast<double>(c.in_channels)), rng);
  ps[prefix + ".b1"] = Tensor(1, c.channels);
  ps[prefix + ".W2"] = normal_tensor(c.channels, c.channels, std::sqrt(1.0 / static_cast<double>(c.channels)), rng);
  ps[prefix + ".b2"] = Tensor(1, c.channels);
  ps[prefix + ".q_img"] = normal_tensor(kNumViews * c.m_img, c.channels, 1.0, rng);
  init_attention(ps, prefix + ".attn", c.channels, rng);
  ps[prefix + ".view_tags"] = normal_tensor(kNumViews, c.channels, 1.0, rng);
}

/// Self-contained adapter parameters (names prefixed "adapter.").
struct AdapterParams {
  AdapterConfig config;
  ParamStore params;
  std::string prefix = "adapter";

  static AdapterParams init(const AdapterConfig& c, std::uint64_t seed) {
    AdapterParams p;
    p.config = c;
    Rng rng(seed, 0xADA);
    init_adapter(p.params, p.prefix, c, rng);
    return p;
  }
};

enum class TokenKind { kViewTag, kImage, kText };

struct TokenTag {
  TokenKind kind = TokenKind::kText;
  int view = -1;  // -1 for text tokens
  friend bool operator==(const TokenTag&, const TokenTag&) = default;
};

struct TokenSequence {
  Tensor tokens;  // one row per token
  std::vector<TokenTag> tags;
};

// ---------------------------------------------------------------------------
// Differentiable graph pieces

inline Tensor grid_tensor(const ViewFeatureGrid& g) {
  return Tensor(kPatches, kVisChannels, std::vector<double>(g.data.begin(), g.data.end()));
}

/// P x C_vis -> P x C: Dense2(GELU(Dense1(x))).
inline ad::Var adapter_project(Binder& b, const std::string& prefix, ad::Var patches) {
  auto& t = b.tape();
  const ad::Var h = ad::gelu(t, ad::add_row(t, ad::matmul(t, patches, b(prefix + ".W1")), b(prefix + ".b1")));
  return ad::add_row(t, ad::matmul(t, h, b(prefix + ".W2")), b(prefix + ".b2"));
}

/// Row order that depends only on row contents (lexicographic by value).
inline std::vector<std::size_t> canonical_row_order(const Tensor& x) {
  std::vector<std::size_t> idx(x.rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double* ra = &x.data[a * x.cols];
    const double* rb = &x.data[b * x.cols];
    return std::lexicographical_compare(ra, ra + x.cols, rb, rb + x.cols);
  });
  return idx;
}

struct CompressedView {
  ad::Var tokens;                // M_img x C
  std::vector<ad::Var> weights;  // per head, M_img x P
};

/// Query cross-attention of view `view`'s learned queries over the projected
/// patches. Keys are first put into canonical order so the reduction order,
/// and hence every output bit, is independent of the input row order.
inline CompressedView adapter_compress(Binder& b, const std::string& prefix, const AdapterConfig& c,
                                       std::size_t view, ad::Var projected) {
  validate_adapter_config(c);
  auto& t = b.tape();
  const Tensor& x = t.value(projected);
  if (view >= kNumViews) throw RangeError("view index " + std::to_string(view) + " out of range [0, 6)");
  if (x.cols != c.channels) {
    throw ShapeError("adapter_compress: projected " + ad::shape_str(x) + " has width != " +
                     std::to_string(c.channels));
  }
  if (c.m_img > x.rows) {
    throw ConfigError("adapter m_img " + std::to_string(c.m_img) + " exceeds patch count " +
                      std::to_string(x.rows) + " (expansion forbidden)");
  }
  if (!x.all_finite()) throw NumericError("adapter_compress: non-finite projected features");
  const ad::Var keys = ad::gather_rows(t, projected, canonical_row_order(x));
  const ad::Var queries = ad::slice_rows(t, b(prefix + ".q_img"), view * c.m_img, (view + 1) * c.m_img);
  CompressedView out;
  out.tokens = attention(b, prefix + ".attn", queries, keys, c.heads, &out.weights);
  return out;
}

/// [tag_0, img_0, ..., tag_5, img_5, text]. Tag i is row i of view_tags.
inline ad::Var adapter_assemble(Binder& b, const std::string& prefix, std::span<const ad::Var> view_tokens,
                                ad::Var text) {
  if (view_tokens.size() != kNumViews) {
    throw ArityError("expected " + std::to_string(kNumViews) + " view token blocks, got " +
                     std::to_string(view_tokens.size()));
  }
  auto& t = b.tape();
  const ad::Var tags = b(prefix + ".view_tags");
  std::vector<ad::Var> parts;
  parts.reserve(2 * kNumViews + 1);
  for (std::size_t v = 0; v < kNumViews; ++v) {
    parts.push_back(ad::slice_rows(t, tags, v, v + 1));
    parts.push_back(view_tokens[v]);
  }
  parts.push_back(text);
  return ad::concat_rows(t, parts);
}

/// Projects and compresses a single view.
inline CompressedView adapter_encode_view(Binder& b, const std::string& prefix, const AdapterConfig& c,
                                          std::size_t view, const Tensor& grid) {
  const ad::Var patches = b.tape().constant(grid);
  return adapter_compress(b, prefix, c, view, adapter_project(b, prefix, patches));
}

// ---------------------------------------------------------------------------
// Value-level API

inline Tensor project_patch_features(const ViewFeatureGrid& grid, const AdapterParams& p) {
  const Tensor x = grid_tensor(grid);
  if (!x.all_finite()) throw NumericError("project_patch_features: non-finite patch features");
  ad::Tape tape;
  Binder b(tape, p.params);
  return tape.value(adapter_project(b, p.prefix, tape.constant(x)));
}

/// Returns M_img x C tokens; per-head attention weights (M_img x P, keys in
/// canonical order) are written to `attention` when given.
inline Tensor compress_view_tokens(std::size_t view_index, const Tensor& projected, const AdapterParams& p,
                                   std::vector<Tensor>* attention = nullptr) {
  ad::Tape tape;
  Binder b(tape, p.params);
  const CompressedView cv = adapter_compress(b, p.prefix, p.config, view_index, tape.constant(projected));
  if (attention) {
    attention->clear();
    for (ad::Var w : cv.weights) attention->push_back(tape.value(w));
  }
  return tape.value(cv.tokens);
}

inline TokenSequence assemble_multiview_sequence(std::span<const Tensor> view_tokens, const Tensor& text_tokens,
                                                 const AdapterParams& p) {
  if (view_tokens.size() != kNumViews) {
    throw ArityError("expected " + std::to_string(kNumViews) + " view token blocks, got " +
                     std::to_string(view_tokens.size()));
  }
  ad::Tape tape;
  Binder b(tape, p.params);
  std::vector<ad::Var> vars;
  for (const auto& v : view_tokens) vars.push_back(tape.constant(v));
  TokenSequence seq;
  seq.tokens = tape.value(adapter_assemble(b, p.prefix, vars, tape.constant(text_tokens)));
  seq.tags.clear();
  for (std::size_t v = 0; v < kNumViews; ++v) {
    seq.tags.push_back({TokenKind::kViewTag, static_cast<int>(v)});
    for (std::size_t i = 0; i < view_tokens[v].rows; ++i) seq.tags.push_back({TokenKind::kImage, static_cast<int>(v)});
  }
  for (std::size_t i = 0; i < text_tokens.rows; ++i) seq.tags.push_back({TokenKind::kText, -1});
  return seq;
}

}  // namespace structplan
