#include "latte/orchestrator.hpp"

#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

using latte::FaultLocation;
using latte::LatexScript;
using latte::Role;
using latte::TraceStatus;
using V = std::vector<std::string>;

FaultLocation at(std::size_t i) { return {i, FaultLocation::Source::Backend}; }

TEST(RefinePrompt, RotatesAroundSeparator) {
  const auto s = LatexScript::from_tokens({"a", "b", "c", "d"});
  EXPECT_EQ(latte::build_refine_prompt(s, at(2)), (V{"c", "d", "<s>", "a", "b"}));
  EXPECT_EQ(latte::build_refine_prompt(s, at(0)), (V{"a", "b", "c", "d", "<s>"}));
  EXPECT_EQ(latte::build_refine_prompt(s, at(4)), (V{"<s>", "a", "b", "c", "d"}));
  EXPECT_THROW(latte::build_refine_prompt(s, at(5)), latte::Error);
}

TEST(Reconstruct, KeepsPrefixAndAppendsCompletion) {
  const auto s = LatexScript::from_tokens({"a", "b", "c", "d"});
  EXPECT_EQ(latte::reconstruct(s, at(2), V{"x", "y", "z"}).tokens(), (V{"a", "b", "x", "y", "z"}));
  EXPECT_TRUE(latte::reconstruct(s, at(0), V{}).empty());
  EXPECT_THROW(latte::reconstruct(s, at(9), V{}), latte::Error);
}

TEST(FirstDivergence, Examples) {
  auto d = [](V a, V b) {
    return latte::first_divergence(LatexScript::from_tokens(std::move(a)), LatexScript::from_tokens(std::move(b))).index;
  };
  EXPECT_EQ(d({"a", "b", "c"}, {"a", "b", "d"}), 2u);
  EXPECT_EQ(d({"a", "b"}, {"a", "b", "c"}), 2u);
  EXPECT_EQ(d({"a", "b", "c"}, {"a", "b"}), 2u);
  EXPECT_EQ(d({"a", "b", "c", "d", "e"}, {"a", "b", "c", "d", "e"}), 5u);
}

TEST(TrainingPair, ComposesLabelPromptAndTarget) {
  const auto p = latte::make_training_pair(LatexScript::from_tokens({"a", "x"}), LatexScript::from_tokens({"a", "b", "c"}));
  EXPECT_EQ(p.label.index, 1u);
  EXPECT_EQ(p.label.source, FaultLocation::Source::GroundTruthLabel);
  EXPECT_EQ(p.prompt, (V{"x", "<s>", "a"}));
  EXPECT_EQ(p.target, (V{"b", "c"}));
  const auto same = LatexScript::from_tokens({"a"});
  EXPECT_THROW(latte::make_training_pair(same, same), latte::Error);
}

V mutate(std::mt19937_64& rng, V t, const V& vocab) {
  std::uniform_int_distribution<int> op(0, 2);
  std::uniform_int_distribution<std::size_t> tok(0, vocab.size() - 1);
  std::uniform_int_distribution<std::size_t> pos(0, t.size());
  const std::size_t p = pos(rng);
  switch (op(rng)) {
    case 0: t.insert(t.begin() + static_cast<std::ptrdiff_t>(p), vocab[tok(rng)]); break;
    case 1: if (p < t.size()) t.erase(t.begin() + static_cast<std::ptrdiff_t>(p)); break;
    default: if (p < t.size()) t[p] = vocab[tok(rng)]; break;
  }
  return t;
}

TEST(TrainingPair, RoundTripAndPromptShapeOnRandomMutations) {
  const V vocab{"\\frac", "{", "}", "x", "y", "^", "_", "1", "2", "\\sum", "&", "\\\\"};
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> len(1, 30);
  std::uniform_int_distribution<std::size_t> tok(0, vocab.size() - 1);
  int made = 0;
  while (made < 500) {
    V gt_tokens;
    for (std::size_t n = len(rng); n > 0; --n) gt_tokens.push_back(vocab[tok(rng)]);
    const auto gt = LatexScript::from_tokens(gt_tokens);
    const auto bad = LatexScript::from_tokens(mutate(rng, gt_tokens, vocab));
    if (bad == gt) continue;
    ++made;
    const auto pair = latte::make_training_pair(bad, gt);
    ASSERT_EQ(latte::reconstruct(bad, pair.label, pair.target), gt);
    ASSERT_EQ(pair.prompt.size(), bad.size() + 1);
    ASSERT_EQ(std::count(pair.prompt.begin(), pair.prompt.end(), latte::kSeparatorToken), 1);
  }
}

// ---------------------------------------------------------------------------

struct Scenario {
  latte::PixelGrid gt = fixture::glyph_render(fixture::kTargetSource);
  latte::FixtureRenderer renderer = fixture::scenario_renderer();
  latte::RenderKind kind = latte::RenderKind::formula();
};

TEST(Recognize, CorrectFirstDraftMatchesInOneRound) {
  Scenario sc;
  auto mock = latte::MockBackend::from_jsonl(R"({"role":"generate","match":1,"response":{"latex":"x^{2}"}})");
  const auto trace = latte::recognize(sc.gt, sc.kind, mock, sc.renderer);
  EXPECT_EQ(trace.status, TraceStatus::Matched);
  ASSERT_EQ(trace.rounds.size(), 1u);
  EXPECT_FALSE(trace.rounds[0].fault.has_value());
  EXPECT_FALSE(trace.rounds[0].delta.has_value());
  EXPECT_EQ(mock.total_calls(), 1u);
}

TEST(Recognize, CorrectiveRefinementMatchesAtRoundTwo) {
  Scenario sc;
  auto mock = latte::MockBackend::from_jsonl(fixture::corrective_mock_jsonl());
  std::vector<std::size_t> delta_rounds;
  latte::RecognizeOptions opts;
  opts.on_delta = [&](std::size_t round, const latte::DeltaView& dv, const latte::PixelGrid& view) {
    delta_rounds.push_back(round);
    EXPECT_GT(dv.distance, 0u);
    EXPECT_EQ(view.width(), latte::kFormulaSpec.target_width);
    EXPECT_EQ(view.height(), 2 * latte::kFormulaSpec.target_height + latte::kDividerRows);
  };
  const auto trace = latte::recognize(sc.gt, sc.kind, mock, sc.renderer, opts);
  EXPECT_EQ(trace.status, TraceStatus::Matched);
  ASSERT_EQ(trace.rounds.size(), 2u);
  EXPECT_EQ(trace.rounds[0].candidate.raw(), "x^{3}");
  ASSERT_TRUE(trace.rounds[0].delta.has_value());
  EXPECT_EQ(trace.rounds[1].candidate.raw(), "x^{2}");
  ASSERT_TRUE(trace.rounds[1].fault.has_value());
  EXPECT_EQ(trace.rounds[1].fault->index, 3u);
  EXPECT_TRUE(trace.rounds[1].matched);
  EXPECT_EQ(delta_rounds, (std::vector<std::size_t>{1}));
  EXPECT_EQ(mock.calls(Role::Generate), 1u);
  EXPECT_EQ(mock.calls(Role::Localize), 1u);
  EXPECT_EQ(mock.calls(Role::Refine), 1u);
}

TEST(Recognize, AlwaysWrongExhaustsBudget) {
  Scenario sc;
  for (std::size_t k : {1u, 2u, 4u, 6u}) {
    auto mock = latte::MockBackend::from_jsonl(fixture::always_wrong_mock_jsonl());
    latte::RecognizeOptions opts;
    opts.budget = k;
    const auto trace = latte::recognize(sc.gt, sc.kind, mock, sc.renderer, opts);
    EXPECT_EQ(trace.status, TraceStatus::BudgetExhausted);
    EXPECT_EQ(trace.rounds.size(), k);
    EXPECT_EQ(mock.calls(Role::Generate), 1u);
    EXPECT_EQ(mock.calls(Role::Localize), k - 1);
    EXPECT_EQ(mock.calls(Role::Refine), k - 1);
    for (const auto& r : trace.rounds) EXPECT_FALSE(r.matched);
  }
}

TEST(Recognize, UnrenderableCandidateStillGetsFeedback) {
  Scenario sc;
  auto mock = latte::MockBackend::from_jsonl(R"({"role":"generate","match":1,"response":{"latex":"\\undefined{"}}
{"role":"localize","match":1,"response":{"index":0}}
{"role":"refine","match":1,"response":{"completion_tokens":["x","^","{","2","}"]}}
)");
  const auto trace = latte::recognize(sc.gt, sc.kind, mock, sc.renderer);
  EXPECT_EQ(trace.status, TraceStatus::Matched);
  ASSERT_EQ(trace.rounds.size(), 2u);
  EXPECT_EQ(trace.rounds[0].render.status, latte::RenderStatus::CompileError);
  ASSERT_TRUE(trace.rounds[0].delta.has_value());
}

TEST(Recognize, BackendFailuresEndTraceWithoutThrowing) {
  Scenario sc;
  auto unscripted = latte::MockBackend::from_jsonl("");
  auto trace = latte::recognize(sc.gt, sc.kind, unscripted, sc.renderer);
  EXPECT_EQ(trace.status, TraceStatus::BackendError);
  EXPECT_TRUE(trace.rounds.empty());
  EXPECT_NE(trace.error.find("unscripted"), std::string::npos);

  auto bad_index = latte::MockBackend::from_jsonl(R"({"role":"generate","match":1,"response":{"latex":"x^{3}"}}
{"role":"localize","match":1,"response":{"index":99}}
)");
  trace = latte::recognize(sc.gt, sc.kind, bad_index, sc.renderer);
  EXPECT_EQ(trace.status, TraceStatus::BackendError);
  EXPECT_EQ(trace.rounds.size(), 1u);
  EXPECT_NE(trace.error.find("protocol"), std::string::npos);

  auto model = latte::MockBackend::from_jsonl(R"({"role":"generate","match":1,"response":{"error":"out of memory"}})");
  trace = latte::recognize(sc.gt, sc.kind, model, sc.renderer);
  EXPECT_EQ(trace.status, TraceStatus::BackendError);
  EXPECT_NE(trace.error.find("out of memory"), std::string::npos);
}

TEST(Recognize, ZeroBudgetRejected) {
  Scenario sc;
  auto mock = latte::MockBackend::from_jsonl(fixture::corrective_mock_jsonl());
  latte::RecognizeOptions opts;
  opts.budget = 0;
  EXPECT_THROW(latte::recognize(sc.gt, sc.kind, mock, sc.renderer, opts), latte::Error);
}

TEST(TraceJson, CarriesStatusRoundsAndDeltaStats) {
  Scenario sc;
  auto mock = latte::MockBackend::from_jsonl(fixture::corrective_mock_jsonl());
  const auto j = latte::trace_to_json(latte::recognize(sc.gt, sc.kind, mock, sc.renderer));
  EXPECT_EQ(j["status"], "matched");
  ASSERT_EQ(j["rounds"].size(), 2u);
  EXPECT_EQ(j["rounds"][0]["fault_index"], nullptr);
  EXPECT_EQ(j["rounds"][1]["fault_index"], 3);
  EXPECT_EQ(j["rounds"][0]["delta"]["orientation"].get<std::string>().empty(), false);
  EXPECT_EQ(j["final_latex"], "x^{2}");
}

}  // namespace
