#include "latte/fault_head.hpp"

#include "latte/backend.hpp"
#include "latte/backend_http.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <thread>

namespace {

using latte::BackendError;
using latte::BackendRequest;
using latte::BackendResponse;
using latte::MockBackend;
using latte::Role;
using V = std::vector<std::string>;

latte::PixelGrid tiny(std::uint8_t shade = 0) { return latte::PixelGrid(2, 3, latte::Pixel{shade, shade, shade}); }

template <class F>
std::optional<BackendError::Kind> failure_kind(F&& f) {
  try {
    f();
  } catch (const BackendError& e) {
    return e.kind();
  }
  return std::nullopt;
}

TEST(Base64, RoundTripsAllLengths) {
  std::mt19937_64 rng(1);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(latte::base64_decode(latte::base64_encode(bytes)), bytes);
  }
  const std::string hello = "hello";
  EXPECT_EQ(latte::base64_encode(std::vector<std::uint8_t>(hello.begin(), hello.end())), "aGVsbG8=");
  EXPECT_THROW(latte::base64_decode("abc"), BackendError);
  EXPECT_THROW(latte::base64_decode("ab!="), BackendError);
}

TEST(WireFormat, RequestsRoundTrip) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 30; ++i) {
    const auto img = oracle::random_image(rng, 1 + i % 5, 1 + i % 7);
    const V toks{"\\frac", "{", "é", "}", "<s>"};
    for (const BackendRequest& req :
         {BackendRequest::generate(img), BackendRequest::localize(img, toks), BackendRequest::refine(img, toks)}) {
      const auto j = latte::request_to_json(req);
      const auto back = latte::request_from_json(req.role, nlohmann::json::parse(j.dump()));
      EXPECT_EQ(back.image, req.image);
      EXPECT_EQ(back.tokens, req.tokens);
    }
  }
  const auto refine = latte::request_to_json(BackendRequest::refine(tiny(), {"a"}));
  EXPECT_TRUE(refine.contains("prompt_tokens"));
  EXPECT_FALSE(refine.contains("tokens"));
  EXPECT_TRUE(latte::request_to_json(BackendRequest::localize(tiny(), {"a"})).contains("tokens"));
}

TEST(WireFormat, ResponsesRoundTrip) {
  for (const BackendResponse& r : {BackendResponse::generated("x^{2}"), BackendResponse::localized(7),
                                   BackendResponse::refined({"2", "}"}), BackendResponse::refined({})}) {
    EXPECT_EQ(latte::response_from_json(r.role, latte::response_to_json(r)), r);
  }
}

TEST(WireFormat, MalformedBodiesAreProtocolErrors) {
  using nlohmann::json;
  const auto img = latte::base64_encode(latte::encode_png(tiny()));
  auto kind = [](auto f) { return failure_kind(f); };
  EXPECT_EQ(kind([] { latte::request_from_json(Role::Generate, json::array()); }), BackendError::Kind::Protocol);
  EXPECT_EQ(kind([&] { latte::request_from_json(Role::Generate, {{"image_png_base64", img}, {"tokens", V{}}}); }),
            BackendError::Kind::Protocol);
  EXPECT_EQ(kind([&] { latte::request_from_json(Role::Localize, {{"image_png_base64", img}}); }),
            BackendError::Kind::Protocol);
  EXPECT_EQ(kind([&] { latte::request_from_json(Role::Refine, {{"image_png_base64", img}, {"tokens", V{}}}); }),
            BackendError::Kind::Protocol);
  EXPECT_EQ(kind([] { latte::request_from_json(Role::Generate, {{"image_png_base64", "AAAA"}}); }),
            BackendError::Kind::Protocol);
  EXPECT_EQ(kind([] { latte::response_from_json(Role::Localize, {{"index", -1}}); }), BackendError::Kind::Protocol);
  EXPECT_EQ(kind([] { latte::response_from_json(Role::Localize, {{"index", "3"}}); }), BackendError::Kind::Protocol);
  EXPECT_EQ(kind([] { latte::response_from_json(Role::Generate, {{"latex", "x"}, {"extra", 1}}); }),
            BackendError::Kind::Protocol);
  EXPECT_EQ(kind([] { latte::response_from_json(Role::Refine, {{"completion_tokens", {1, 2}}}); }),
            BackendError::Kind::Protocol);
}

TEST(WireFormat, ErrorBodiesRoundTrip) {
  for (auto k : {BackendError::Kind::Protocol, BackendError::Kind::Model, BackendError::Kind::Unscripted}) {
    const BackendError e(k, "boom");
    const BackendError back = latte::error_from_json(latte::error_to_json(e).dump());
    EXPECT_EQ(back.kind(), k);
    EXPECT_STREQ(back.what(), "boom");
  }
  EXPECT_EQ(latte::error_from_json("<html>").kind(), BackendError::Kind::Protocol);
  EXPECT_EQ(latte::http_status(BackendError::Kind::Protocol), 400);
  EXPECT_EQ(latte::http_status(BackendError::Kind::Unscripted), 404);
  EXPECT_EQ(latte::http_status(BackendError::Kind::Model), 500);
}

// ---------------------------------------------------------------------------

TEST(MockBackend, EmptyFixtureIsUnscripted) {
  auto mock = MockBackend::from_jsonl("");
  EXPECT_EQ(failure_kind([&] { mock.call(BackendRequest::generate(tiny())); }), BackendError::Kind::Unscripted);
  EXPECT_EQ(mock.calls(Role::Generate), 1u);
}

TEST(MockBackend, MatchesDigestThenCallNumberThenWildcard) {
  const auto special = tiny(9);
  auto mock = MockBackend::from_jsonl(
      R"({"role":"generate","match":")" + latte::image_digest(special) + R"(","response":{"latex":"by digest"}}
{"role":"generate","match":2,"response":{"latex":"second"}}
{"role":"generate","match":"*","response":{"latex":"anything"}}
)");
  EXPECT_EQ(mock.call(BackendRequest::generate(tiny())).latex, "anything");
  EXPECT_EQ(mock.call(BackendRequest::generate(tiny())).latex, "second");
  EXPECT_EQ(mock.call(BackendRequest::generate(special)).latex, "by digest");
  EXPECT_EQ(mock.call(BackendRequest::generate(tiny())).latex, "anything");
  EXPECT_EQ(mock.calls(Role::Generate), 4u);
  EXPECT_EQ(mock.calls(Role::Refine), 0u);
}

TEST(MockBackend, ScriptedErrorsAndIndexBounds) {
  auto mock = MockBackend::from_jsonl(R"({"role":"refine","match":1,"response":{"error":"cuda oom"}}
{"role":"localize","match":1,"response":{"index":3}}
{"role":"localize","match":2,"response":{"index":4}}
)");
  EXPECT_EQ(failure_kind([&] { mock.call(BackendRequest::refine(tiny(), {"a"})); }), BackendError::Kind::Model);
  EXPECT_EQ(mock.call(BackendRequest::localize(tiny(), {"a", "b", "c"})).index, 3u);
  EXPECT_EQ(failure_kind([&] { mock.call(BackendRequest::localize(tiny(), {"a", "b", "c"})); }),
            BackendError::Kind::Protocol);
}

TEST(MockBackend, RejectsMalformedFixtures) {
  EXPECT_THROW(MockBackend::from_jsonl("not json"), latte::FixtureError);
  EXPECT_THROW(MockBackend::from_jsonl(R"({"role":"judge","match":1,"response":{}})"), latte::FixtureError);
  EXPECT_THROW(MockBackend::from_jsonl(R"({"role":"generate","match":0,"response":{"latex":"x"}})"),
               latte::FixtureError);
  EXPECT_THROW(MockBackend::from_jsonl(R"({"role":"generate","match":"abc","response":{"latex":"x"}})"),
               latte::FixtureError);
  EXPECT_THROW(MockBackend::from_jsonl(R"({"role":"generate","match":1,"response":{"index":1}})"),
               latte::FixtureError);
  EXPECT_THROW(MockBackend::from_jsonl(R"({"role":"generate","match":1,"response":{"latex":"x"}}
{"role":"generate","match":1,"response":{"latex":"y"}})"),
               latte::FixtureError);
  EXPECT_THROW(MockBackend::from_file("/nonexistent/fixture.jsonl"), latte::FixtureError);
}

TEST(MockBackend, ConcurrentCallsAreCounted) {
  auto mock = MockBackend::from_jsonl(R"({"role":"generate","match":"*","response":{"latex":"x"}})");
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&] {
        for (int i = 0; i < 50; ++i) mock.call(BackendRequest::generate(tiny()));
      });
    }
  }
  EXPECT_EQ(mock.calls(Role::Generate), 400u);
}

// ---------------------------------------------------------------------------

class ServedMock : public ::testing::Test {
 protected:
  void serve(const std::string& fixture) {
    mock_.emplace(MockBackend::from_jsonl(fixture));
    latte::mount_protocol(server_, *mock_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::jthread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::optional<MockBackend> mock_;
  httplib::Server server_;
  int port_ = 0;
  std::jthread thread_;
};

TEST_F(ServedMock, ClientAndServerAgreeWithInProcessMock) {
  serve(fixture::corrective_mock_jsonl());
  latte::HttpBackend http(url(), std::chrono::seconds(5));
  EXPECT_EQ(http.call(BackendRequest::generate(tiny())).latex, "x^{3}");
  EXPECT_EQ(http.call(BackendRequest::localize(tiny(), {"x", "^", "{", "3", "}"})).index, 3u);
  EXPECT_EQ(http.call(BackendRequest::refine(tiny(), {"3", "}", "<s>", "x", "^", "{"})).completion_tokens,
            (V{"2", "}"}));
  EXPECT_EQ(mock_->total_calls(), 3u);
  // Second refine is not scripted: the server answers 404 and the client
  // rebuilds the same error kind.
  EXPECT_EQ(failure_kind([&] { http.call(BackendRequest::refine(tiny(), {"<s>"})); }),
            BackendError::Kind::Unscripted);
}

TEST_F(ServedMock, ServerRejectsBadRequests) {
  serve(fixture::corrective_mock_jsonl());
  httplib::Client client(url());
  auto res = client.Post("/v1/generate", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(latte::error_from_json(res->body).kind(), BackendError::Kind::Protocol);
  res = client.Post("/v1/localize", R"({"image_png_base64":"AAAA","tokens":[]})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  res = client.Post("/v1/nothing", "{}", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
}

TEST_F(ServedMock, OutOfBoundsIndexFromServerIsRejectedByClient) {
  serve(R"({"role":"localize","match":"*","response":{"index":10}})");
  latte::HttpBackend http(url(), std::chrono::seconds(5));
  // The server-side mock already refuses to return it.
  EXPECT_EQ(failure_kind([&] { http.call(BackendRequest::localize(tiny(), {"a"})); }), BackendError::Kind::Protocol);
}

TEST(HttpBackend, UnreachableServerIsTransportError) {
  httplib::Server probe;
  const int port = probe.bind_to_any_port("127.0.0.1");
  probe.stop();
  latte::HttpBackend http("http://127.0.0.1:" + std::to_string(port), std::chrono::seconds(2));
  EXPECT_EQ(failure_kind([&] { http.call(BackendRequest::generate(tiny())); }), BackendError::Kind::Transport);
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> to_rows(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) rows[static_cast<std::size_t>(r)].push_back(m(r, c));
  }
  return rows;
}

TEST(FaultHead, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> dim(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = dim(rng);
    const int d_hidden = dim(rng);
    const int d_out = dim(rng);
    auto random = [&](int r, int c) {
      Eigen::MatrixXd m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
      return m;
    };
    const Eigen::MatrixXd hidden = random(n, d_hidden);
    const latte::AttentionHead head(random(d_out, d_hidden), random(d_out, d_hidden));
    const auto got = latte::fl_head_forward(hidden, head);
    const auto want = oracle::dense_fault_head(to_rows(hidden), to_rows(head.query_weights), to_rows(head.key_weights));

    ASSERT_EQ(got.probabilities.size(), n);
    EXPECT_NEAR(got.probabilities.sum(), 1.0, 1e-9);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(got.probabilities[i], want.p[static_cast<std::size_t>(i)], 1e-6);
    const auto best = std::max_element(want.logits.begin(), want.logits.end()) - want.logits.begin();
    EXPECT_EQ(got.index, best);
  }
}

TEST(FaultHead, TiesResolveToLowestIndexAndShapesAreChecked) {
  const Eigen::MatrixXd hidden = Eigen::MatrixXd::Ones(4, 3);
  const latte::AttentionHead head(Eigen::MatrixXd::Ones(2, 3), Eigen::MatrixXd::Ones(2, 3));
  const auto out = latte::fl_head_forward(hidden, head);
  EXPECT_EQ(out.index, 0);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.probabilities[i], 0.25);

  EXPECT_THROW(latte::AttentionHead(Eigen::MatrixXd::Ones(2, 3), Eigen::MatrixXd::Ones(3, 3)), latte::Error);
  EXPECT_THROW(latte::fl_head_forward(Eigen::MatrixXd::Ones(4, 5), head), latte::Error);
  EXPECT_THROW(latte::fl_head_forward(Eigen::MatrixXd(0, 3), head), latte::Error);
}

TEST(FaultHead, SingleTokenIsCertain) {
  const latte::AttentionHead head(Eigen::MatrixXd::Random(4, 8), Eigen::MatrixXd::Random(4, 8));
  const auto out = latte::fl_head_forward(Eigen::MatrixXd::Random(1, 8), head);
  ASSERT_EQ(out.probabilities.size(), 1);
  EXPECT_DOUBLE_EQ(out.probabilities[0], 1.0);
  EXPECT_EQ(out.index, 0);
}

TEST(FaultHead, ArgmaxInvariantUnderPositiveScaling) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd hidden(5, 8), wq(4, 8), wk(4, 8);
    for (auto* m : {&hidden, &wq, &wk}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = gauss(rng);
    }
    const auto base = latte::fl_head_forward(hidden, latte::AttentionHead(wq, wk));
    // Scaling W_q by c > 0 scales every logit by c.
    for (double c : {0.01, 3.0, 250.0}) {
      EXPECT_EQ(latte::fl_head_forward(hidden, latte::AttentionHead(wq * c, wk)).index, base.index);
    }
  }
}

TEST(FaultHead, LargeLogitsStayFinite) {
  Eigen::MatrixXd hidden = Eigen::MatrixXd::Identity(3, 3) * 100.0;
  hidden(2, 0) = 100.0;
  const latte::AttentionHead head(Eigen::MatrixXd::Identity(3, 3) * 10.0, Eigen::MatrixXd::Identity(3, 3) * 10.0);
  const auto out = latte::fl_head_forward(hidden, head);
  EXPECT_TRUE(out.probabilities.allFinite());
  EXPECT_NEAR(out.probabilities.sum(), 1.0, 1e-12);
  EXPECT_EQ(out.index, 2);
}

}  // namespace
