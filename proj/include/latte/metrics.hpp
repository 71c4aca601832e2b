#pragma once

// Evaluation metrics: pixel-exact match, column edit score and sentence-level
// BLEU-4.

#include "latte/imagediff.hpp"
#include "latte/raster.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace latte {

inline bool exact_match(const PixelGrid& gt, const PixelGrid& rendered) { return gt == rendered; }

/// 1 - d / max(W_gt, W_rendered), clamped to [0, 1]; d is the column edit
/// distance. Heights must agree.
inline double edit_score_from_distance(std::size_t distance, std::size_t gt_width, std::size_t rendered_width) {
  const double denom = static_cast<double>(std::max(gt_width, rendered_width));
  return std::clamp(1.0 - static_cast<double>(distance) / denom, 0.0, 1.0);
}

inline double edit_score(const PixelGrid& gt, const PixelGrid& rendered) {
  const EditScript s = wagner_fischer_star(gt, rendered);
  return edit_score_from_distance(s.distance, gt.width(), rendered.width());
}

/// BLEU with uniform 1..4-gram weights and brevity penalty, no smoothing.
/// Any empty n-gram precision (including too-short candidates) yields 0.
inline double bleu4(std::span<const std::string> candidate, std::span<const std::string> reference) {
  constexpr std::size_t kMaxOrder = 4;
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    if (candidate.size() < n) return 0.0;
    std::map<std::vector<std::string>, std::size_t> ref_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i) {
      ++ref_counts[std::vector<std::string>(reference.begin() + i, reference.begin() + i + n)];
    }
    std::map<std::vector<std::string>, std::size_t> cand_counts;
    for (std::size_t i = 0; i + n <= candidate.size(); ++i) {
      ++cand_counts[std::vector<std::string>(candidate.begin() + i, candidate.begin() + i + n)];
    }
    std::size_t clipped = 0;
    for (const auto& [gram, count] : cand_counts) {
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(count, it->second);
    }
    if (clipped == 0) return 0.0;
    const std::size_t total = candidate.size() - n + 1;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum / static_cast<double>(kMaxOrder)), 0.0, 1.0);
}

struct EvalReport {
  bool match = false;
  double edit_score = 0.0;
  std::optional<double> bleu4;  // only when a reference script is known
  std::size_t distance = 0;
};

inline EvalReport evaluate(const PixelGrid& gt, const PixelGrid& rendered) {
  EvalReport rep;
  rep.match = exact_match(gt, rendered);
  if (rep.match) {
    rep.edit_score = 1.0;
    return rep;
  }
  const EditScript s = wagner_fischer_star(gt, rendered);
  rep.distance = s.distance;
  rep.edit_score = edit_score_from_distance(s.distance, gt.width(), rendered.width());
  return rep;
}

}  // namespace latte
