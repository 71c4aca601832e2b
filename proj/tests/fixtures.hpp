#pragma once

// Hand-constructed image fixtures shared by unit and acceptance tests.

#include "latte/backend.hpp"
#include "latte/latex_script.hpp"
#include "latte/raster.hpp"
#include "latte/render.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fixture {

inline constexpr std::size_t kFormulaHeight = 16;

/// Column with black ink on rows whose bit is set in `mask`.
inline std::vector<latte::Pixel> ink_column(std::uint32_t mask, std::size_t height = kFormulaHeight) {
  std::vector<latte::Pixel> col(height, latte::kWhite);
  for (std::size_t r = 0; r < height && r < 32; ++r) {
    if ((mask >> r) & 1u) col[r] = latte::kBlack;
  }
  return col;
}

inline latte::PixelGrid from_masks(const std::vector<std::uint32_t>& masks, std::size_t height = kFormulaHeight) {
  latte::PixelGrid g(height, masks.size());
  for (std::size_t c = 0; c < masks.size(); ++c) g.set_column(c, ink_column(masks[c], height));
  return g;
}

struct Pair {
  latte::PixelGrid gt;
  latte::PixelGrid rendered;
};

/// Formula-like pair whose optimal script has four substitution blocks
/// (partially overlapping strokes, like a mis-recognized sub/superscript),
/// one insertion block and one deletion block, separated by anchor columns
/// that match exactly.
inline Pair substitution_deletion_insertion() {
  // Anchors: distinct, identical in both images.
  const std::uint32_t k0 = 0x0101, k1 = 0x0303, k2 = 0x0707, k3 = 0x0F0F, k4 = 0x1F1F, k5 = 0x3F3F,
                      k6 = 0x7F7F, k7 = 0x8181, k8 = 0xC1C1, k9 = 0xE1E1;
  const std::uint32_t shared = 0x0030;  // stroke common to both renderings
  // Ground-truth glyph columns and their mis-rendered counterparts.
  const std::uint32_t s1a = shared | 0x0800, s1b = shared | 0x1800;
  const std::uint32_t r1a = shared | 0x0002, r1b = shared | 0x0006;
  const std::uint32_t s2 = 0x0240, r2 = 0x0440;
  const std::uint32_t s3 = 0x2008, r3 = 0x4008;
  const std::uint32_t s4a = shared | 0x0100, s4b = shared | 0x0300, s4c = shared | 0x0700;
  const std::uint32_t r4a = shared | 0x4000, r4b = shared | 0x6000, r4c = shared | 0x7000;
  const std::uint32_t i1 = 0x0FF0, i2 = 0x0F00;  // gt-only strokes
  const std::uint32_t d1 = 0x00FF, d2 = 0x000F;  // rendered-only strokes

  return {from_masks({k0, s1a, s1b, k1, s2, k2, s3, k3, s4a, s4b, s4c, k4, i1, i2, k5, k6, k8, k9, k7}),
          from_masks({k0, r1a, r1b, k1, r2, k2, r3, k3, r4a, r4b, r4c, k4, k5, k6, k8, k9, d1, d2, k7})};
}

inline constexpr std::size_t kTableHeight = 12;
inline constexpr std::size_t kTableWidth = 40;

/// Table-like image: a few "cell text" dots and optional horizontal rules.
inline latte::PixelGrid table_image(bool with_rule, std::size_t text_row_offset = 0) {
  latte::PixelGrid g(kTableHeight, kTableWidth);
  for (std::size_t c = 0; c < kTableWidth; ++c) g.at(0, c) = latte::kBlack;  // top rule
  if (with_rule) {
    for (std::size_t c = 0; c < kTableWidth; ++c) g.at(6, c) = latte::kBlack;
  }
  for (std::size_t c : {3u, 4u, 5u, 13u, 14u, 22u, 30u, 31u, 32u}) {
    g.at(2 + text_row_offset, c) = latte::kBlack;
    g.at(3 + text_row_offset, c) = latte::kBlack;
  }
  for (std::size_t c : {6u, 16u, 17u, 25u, 33u}) g.at(8 + text_row_offset, c) = latte::kBlack;
  return g;
}

/// Toy typesetter standing in for TeX: each token becomes an 8-column glyph
/// whose ink pattern is a hash of the token text. Distinct token sequences
/// give distinct images; equal sequences give identical ones.
inline latte::PixelGrid glyph_render(std::string_view source, std::size_t height = kFormulaHeight) {
  const auto tokens = latte::tokenize(source);
  latte::PixelGrid g(height, std::max<std::size_t>(1, 8 * tokens.size()));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : tokens[t]) h = (h ^ ch) * 1099511628211ULL;
    for (std::size_t c = 1; c < 7; ++c) {
      const std::uint32_t mask = static_cast<std::uint32_t>(h >> (c * 8)) | 1u;
      g.set_column(8 * t + c, ink_column(mask, height));
    }
  }
  return g;
}

/// Wrong draft "x^{3}", corrected by localize -> 3 and refine -> [2, }].
inline constexpr std::string_view kTargetSource = "x^{2}";
inline constexpr std::string_view kDraftSource = "x^{3}";

inline std::string corrective_mock_jsonl() {
  return R"({"role":"generate","match":"*","response":{"latex":"x^{3}"}}
{"role":"localize","match":1,"response":{"index":3}}
{"role":"refine","match":1,"response":{"completion_tokens":["2","}"]}}
)";
}

/// Keeps re-emitting the wrong exponent.
inline std::string always_wrong_mock_jsonl() {
  return R"({"role":"generate","match":"*","response":{"latex":"x^{3}"}}
{"role":"localize","match":"*","response":{"index":3}}
{"role":"refine","match":"*","response":{"completion_tokens":["3","}"]}}
)";
}

inline latte::FixtureRenderer scenario_renderer() {
  latte::FixtureRenderer r;
  for (std::string_view s : {kTargetSource, kDraftSource}) r.add(s, glyph_render(s));
  return r;
}

}  // namespace fixture
