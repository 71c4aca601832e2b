#pragma once

// The recognition loop: generate a draft, render it, compare it with the
// target image and, while it does not match, feed the delta view to the
// localize and refine roles to rebuild the script from the fault onwards.

#include "latte/backend.hpp"
#include "latte/imagediff.hpp"
#include "latte/latex_script.hpp"
#include "latte/metrics.hpp"
#include "latte/render.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace latte {

inline const std::string kSeparatorToken = "<s>";

struct FaultLocation {
  enum class Source { Backend, GroundTruthLabel };

  std::size_t index = 0;  // 0-based token position; == size means "append"
  Source source = Source::Backend;

  friend bool operator==(const FaultLocation&, const FaultLocation&) = default;
};

namespace detail {

inline void check_fault(const LatexScript& script, const FaultLocation& l) {
  if (l.index > script.size()) {
    throw Error("fault index " + std::to_string(l.index) + " out of range for script of " +
                std::to_string(script.size()) + " tokens");
  }
}

}  // namespace detail

/// tokens[l..] ++ <s> ++ tokens[..l]
inline std::vector<std::string> build_refine_prompt(const LatexScript& script, const FaultLocation& l) {
  detail::check_fault(script, l);
  const auto& t = script.tokens();
  const auto cut = t.begin() + static_cast<std::ptrdiff_t>(l.index);
  std::vector<std::string> prompt(cut, t.end());
  prompt.push_back(kSeparatorToken);
  prompt.insert(prompt.end(), t.begin(), cut);
  return prompt;
}

/// Keeps tokens[..l] and appends the refinement.
inline LatexScript reconstruct(const LatexScript& script, const FaultLocation& l,
                               std::span<const std::string> completion) {
  detail::check_fault(script, l);
  return script.splice(l.index, completion);
}

/// Index of the first differing token; the shorter length when one script is
/// a prefix of the other (equal scripts give their common length).
inline FaultLocation first_divergence(const LatexScript& incorrect, const LatexScript& gt) {
  const auto& a = incorrect.tokens();
  const auto& b = gt.tokens();
  const auto [ia, ib] = std::mismatch(a.begin(), a.end(), b.begin(), b.end());
  return {static_cast<std::size_t>(ia - a.begin()), FaultLocation::Source::GroundTruthLabel};
}

struct TrainingPair {
  std::vector<std::string> prompt;
  FaultLocation label;
  std::vector<std::string> target;
};

inline TrainingPair make_training_pair(const LatexScript& incorrect, const LatexScript& gt) {
  if (incorrect == gt) throw Error("no training pair: incorrect script equals the ground truth");
  TrainingPair pair;
  pair.label = first_divergence(incorrect, gt);
  pair.prompt = build_refine_prompt(incorrect, pair.label);
  pair.target.assign(gt.tokens().begin() + static_cast<std::ptrdiff_t>(pair.label.index), gt.tokens().end());
  return pair;
}

// ---------------------------------------------------------------------------
// Trace

struct DeltaStats {
  Orientation orientation = Orientation::Column;
  std::size_t distance = 0;
  double edit_percentage = 0.0;
  EditSummary summary;

  static DeltaStats of(const DeltaView& dv) {
    return {dv.orientation, dv.distance, dv.edit_percentage, summarize(dv.script)};
  }
};

struct RoundRecord {
  std::size_t round = 1;
  LatexScript candidate;
  RenderOutcome render;
  bool matched = false;
  std::optional<DeltaStats> delta;  // feedback computed from this round's render
  std::optional<FaultLocation> fault;                   // produced this candidate (rounds >= 2)
  std::optional<std::vector<std::string>> completion;  // produced this candidate (rounds >= 2)
};

enum class TraceStatus { Matched, BudgetExhausted, BackendError };

inline constexpr std::string_view to_string(TraceStatus s) {
  switch (s) {
    case TraceStatus::Matched: return "matched";
    case TraceStatus::BudgetExhausted: return "budget_exhausted";
    case TraceStatus::BackendError: return "backend_error";
  }
  return "?";
}

struct IterationTrace {
  std::vector<RoundRecord> rounds;
  TraceStatus status = TraceStatus::BudgetExhausted;
  std::string error;  // set when status == BackendError

  const LatexScript* final_candidate() const { return rounds.empty() ? nullptr : &rounds.back().candidate; }
};

struct RecognizeOptions {
  std::size_t budget = 4;  // total rounds, including the initial generation
  /// Called with every delta view the loop computes, and its composed model view.
  std::function<void(std::size_t round, const DeltaView&, const PixelGrid& model_view)> on_delta;
};

/// Runs the loop until the render matches `gt_image` exactly or the budget
/// is spent. Backend failures end the trace with status backend_error.
inline IterationTrace recognize(const PixelGrid& gt_image, const RenderKind& kind, Backend& backend,
                                const Renderer& renderer, const RecognizeOptions& opts = {}) {
  if (opts.budget < 1) throw Error("recognition budget must be at least one round");
  const PixelGrid gt = normalize(gt_image, kind.spec);
  const PixelGrid blank(kind.spec.target_height, kind.spec.target_width, kWhite);

  IterationTrace trace;
  LatexScript candidate;
  std::optional<FaultLocation> fault;
  std::optional<std::vector<std::string>> completion;
  try {
    for (std::size_t round = 1; round <= opts.budget; ++round) {
      if (round == 1) candidate = LatexScript::parse(backend.call(BackendRequest::generate(gt)).latex);

      RoundRecord rec;
      rec.round = round;
      rec.candidate = candidate;
      rec.fault = fault;
      rec.completion = completion;
      try {
        rec.render = renderer.render(candidate.raw(), kind);
      } catch (const Error& e) {
        rec.render = RenderOutcome::failure(RenderStatus::CompileError, e.what());
      }
      const PixelGrid& rendered = rec.render.ok() ? *rec.render.image : blank;
      rec.matched = rec.render.ok() && exact_match(gt, rendered);
      if (rec.matched) {
        trace.rounds.push_back(std::move(rec));
        trace.status = TraceStatus::Matched;
        return trace;
      }

      const DeltaView dv = delta_view(gt, rendered);
      rec.delta = DeltaStats::of(dv);
      trace.rounds.push_back(std::move(rec));
      const PixelGrid view = compose_model_view(dv);
      if (opts.on_delta) opts.on_delta(round, dv, view);
      if (round == opts.budget) break;

      const std::size_t l = backend.call(BackendRequest::localize(view, candidate.tokens())).index;
      fault = FaultLocation{l, FaultLocation::Source::Backend};
      completion = backend.call(BackendRequest::refine(view, build_refine_prompt(candidate, *fault))).completion_tokens;
      candidate = reconstruct(candidate, *fault, *completion);
    }
    trace.status = TraceStatus::BudgetExhausted;
  } catch (const BackendError& e) {
    trace.status = TraceStatus::BackendError;
    trace.error = std::string(to_string(e.kind())) + ": " + e.what();
  }
  return trace;
}

inline nlohmann::json delta_to_json(const DeltaStats& d) {
  nlohmann::json blocks;
  nlohmann::json ops;
  for (EditKind k : {EditKind::Copy, EditKind::Substitute, EditKind::Delete, EditKind::Insert}) {
    ops[std::string(to_string(k))] = d.summary.op_count(k);
    blocks[std::string(to_string(k))] = d.summary.block_count(k);
  }
  return {{"orientation", std::string(to_string(d.orientation))},
          {"distance", d.distance},
          {"edit_percentage", d.edit_percentage},
          {"op_counts", ops},
          {"op_blocks", blocks}};
}

inline nlohmann::json trace_to_json(const IterationTrace& trace) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const RoundRecord& r : trace.rounds) {
    nlohmann::json j;
    j["round"] = r.round;
    j["candidate"] = {{"raw", r.candidate.raw()}, {"tokens", r.candidate.tokens()}};
    j["render"] = {{"status", std::string(to_string(r.render.status))}, {"log_excerpt", r.render.log_excerpt}};
    if (r.render.image) j["render"]["image_digest"] = image_digest(*r.render.image);
    j["matched"] = r.matched;
    j["delta"] = r.delta ? delta_to_json(*r.delta) : nlohmann::json(nullptr);
    j["fault_index"] = r.fault ? nlohmann::json(r.fault->index) : nlohmann::json(nullptr);
    j["completion_tokens"] = r.completion ? nlohmann::json(*r.completion) : nlohmann::json(nullptr);
    rounds.push_back(std::move(j));
  }
  nlohmann::json out{{"status", std::string(to_string(trace.status))}, {"rounds", rounds}};
  if (!trace.error.empty()) out["error"] = trace.error;
  if (const LatexScript* last = trace.final_candidate()) out["final_latex"] = last->raw();
  return out;
}

}  // namespace latte
