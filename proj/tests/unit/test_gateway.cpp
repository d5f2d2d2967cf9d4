#include <chrono>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "protex/error.hpp"
#include "protex/gateway/http_provider.hpp"
#include "protex/gateway/server.hpp"
#include "protex/gateway/session.hpp"
#include "protex/synthetic.hpp"
#include "test_util.hpp"

using namespace protex;
using namespace protex::gateway;
using nlohmann::json;

namespace {

Dataset clusters() {
  ClusterSpec spec;
  spec.n_train = 80;
  spec.n_val = 20;
  spec.n_test = 20;
  spec.seed = 8;
  return make_gaussian_clusters(spec);
}

TrainConfig cfg10() {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.prototypes = 10;
  cfg.seed = 3;
  cfg.validate_every = 2;
  cfg.head_finetune_epochs = 3;
  cfg.relearn_epochs = 5;
  return cfg;
}

/// Session + server on an ephemeral port.
struct Live {
  Session session;
  Server server;
  int port = 0;
  httplib::Client cli;

  Live(Dataset ds, TrainConfig cfg, std::unique_ptr<EmbeddingProvider> provider = nullptr,
       std::optional<Model> model = std::nullopt)
      : session(std::move(ds), std::move(cfg), std::move(provider), std::move(model)),
        server(session),
        port(server.bind("127.0.0.1", 0)),
        cli("127.0.0.1", port) {
    server.start();
    cli.set_read_timeout(60);
  }

  std::pair<int, json> get(const std::string& path) {
    auto r = cli.Get(path);
    if (!r) return {-1, nullptr};
    return {r->status, json::parse(r->body)};
  }
  std::pair<int, json> post(const std::string& path, const std::string& body) {
    auto r = cli.Post(path, body, "application/json");
    if (!r) return {-1, nullptr};
    return {r->status, json::parse(r->body)};
  }
};

/// Minimal /embed sidecar backed by the toy encoder.
struct FakeEmbedder {
  ToyEncoder enc;
  httplib::Server svr;
  std::thread th;
  int port = 0;
  std::size_t reply_dim;

  FakeEmbedder(std::size_t dim, std::uint64_t seed, TokenTable table = {}, std::size_t reply = 0)
      : enc(dim, seed, std::move(table)), reply_dim(reply ? reply : dim) {
    svr.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      const auto j = json::parse(req.body);
      const auto toks = j.at("tokens").get<std::vector<std::string>>();
      if (toks.empty()) {
        res.status = 400;
        res.set_content(R"({"error": "empty token list"})", "application/json");
        return;
      }
      const auto e = enc.embed(toks);
      json rows = json::array();
      for (std::size_t r = 0; r < e.tokens.rows(); ++r) {
        std::vector<float> v(e.tokens.row(r).begin(), e.tokens.row(r).end());
        v.resize(reply_dim, 0.0f);
        rows.push_back(v);
      }
      auto s = e.sentence;
      s.resize(reply_dim, 0.0f);
      res.set_content(json{{"sentence", s}, {"tokens", rows}}.dump(), "application/json");
    });
    port = svr.bind_to_any_port("127.0.0.1");
    th = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~FakeEmbedder() {
    svr.stop();
    th.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST(Gateway, StatusMapping) {
  EXPECT_EQ(http_status(ErrorCode::UnknownPrototype), 404);
  EXPECT_EQ(http_status(ErrorCode::UnknownExample), 404);
  EXPECT_EQ(http_status(ErrorCode::InvalidState), 409);
  EXPECT_EQ(http_status(ErrorCode::ProviderCapability), 422);
  EXPECT_EQ(http_status(ErrorCode::CertaintyRange), 400);
  EXPECT_EQ(http_status(ErrorCode::ParseError), 400);
}

TEST(Gateway, ReadEndpointsAndErrors) {
  Live live(clusters(), cfg10());
  auto [st, protos] = live.get("/v1/prototypes");
  ASSERT_EQ(st, 200);
  ASSERT_EQ(protos["prototypes"].size(), 10u);
  const auto digest = protos["digest"].get<std::string>();

  auto [s404, err] = live.post("/v1/interact", R"({"op": "remove", "target": 999})");
  EXPECT_EQ(s404, 404);
  EXPECT_EQ(err["error"], "UnknownPrototype");

  auto [s400, bad] = live.post("/v1/interact", "{not json");
  EXPECT_EQ(s400, 400);
  EXPECT_EQ(bad["error"], "ParseError");
  auto [s400b, badc] = live.post("/v1/interact", R"({"op": "soft_replace", "target": 0, "example_id": "e1", "certainty": 2})");
  EXPECT_EQ(s400b, 400);
  EXPECT_EQ(badc["error"], "CertaintyRange");
  auto [s422, cap] = live.post("/v1/explain", R"({"text": "novel words"})");
  EXPECT_EQ(s422, 422);
  EXPECT_EQ(cap["error"], "ProviderCapability");
  auto [s409, idle] = live.post("/v1/train/pause", "");
  EXPECT_EQ(s409, 409);
  EXPECT_EQ(idle["error"], "InvalidState");
  auto [snf, nf] = live.get("/v1/nowhere");
  EXPECT_EQ(snf, 404);
  EXPECT_EQ(nf["error"], "NotFound");

  auto [se, ex] = live.post("/v1/explain", R"({"id": "e3", "top": 4})");
  ASSERT_EQ(se, 200);
  const auto& items = ex["items"];
  ASSERT_EQ(items.size(), 4u);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const double s = items[i]["similarity"], w = items[i]["head_weight"], imp = items[i]["importance"];
    EXPECT_NEAR(imp, s * w, 1e-9);
    EXPECT_EQ(items[i]["rendered"], format_importance(s, w));
    if (i) EXPECT_GE(items[i - 1]["importance"].get<double>(), imp);
  }

  live.get("/v1/status");
  live.post("/v1/faithfulness", "{}");
  auto [sf, _] = live.get("/v1/prototypes");
  (void)sf;
  EXPECT_EQ(live.get("/v1/status").second["digest"], digest);  // reads never mutate
  EXPECT_EQ(live.session.snapshot()->digest(), digest);
}

TEST(Gateway, TrainingStreamsEpochMetrics) {
  auto cfg = cfg10();
  Live live(clusters(), cfg);
  auto [st, started] = live.post("/v1/train", R"({"epochs": 10, "seed": 3})");
  ASSERT_EQ(st, 202);
  EXPECT_EQ(started["epochs"], 10);

  // replay from the first event over SSE
  std::string stream;
  httplib::Client sse("127.0.0.1", live.port);
  sse.set_read_timeout(60);
  httplib::Headers h{{"Last-Event-ID", "0"}};
  sse.Get("/v1/metrics/stream", h, [&](const char* data, std::size_t n) {
    stream.append(data, n);
    return stream.find("event: done") == std::string::npos;
  });
  live.session.wait_idle();

  std::size_t epochs_seen = 0;
  std::size_t pos = 0;
  const double head_lr = lr_at(8, cfg);
  while ((pos = stream.find("event: epoch\ndata: ", pos)) != std::string::npos) {
    pos += 19;
    const auto end = stream.find('\n', pos);
    const auto ev = json::parse(stream.substr(pos, end - pos));
    const auto e = ev["epoch"].get<std::size_t>();
    const double expected = ev["phase"] == "joint" ? lr_at(static_cast<double>(e), cfg) : head_lr;
    EXPECT_DOUBLE_EQ(ev["lr"].get<double>(), expected) << "epoch " << e;
    ++epochs_seen;
  }
  EXPECT_EQ(epochs_seen, 8u + 3u);
  EXPECT_NE(stream.find("id: 1\n"), std::string::npos);
  const auto status = live.get("/v1/status").second;
  EXPECT_EQ(status["phase"], "idle");
  EXPECT_TRUE(status["report"].is_object());
  EXPECT_EQ(live.session.snapshot()->digest(), status["digest"]);
}

// Runs long enough that the session is still training when the checks run;
// the Session destructor cancels it.
constexpr const char* kEndless = R"({"epochs": 1000000})";

TEST(Gateway, CommandsDuringTrainingApplyAtEpochBoundaries) {
  Live live(clusters(), cfg10());
  ASSERT_EQ(live.post("/v1/train", kEndless).first, 202);
  auto [st, out] = live.post("/v1/interact", R"({"op": "remove", "target": 0})");
  ASSERT_EQ(st, 200);
  EXPECT_TRUE(out["accepted"].get<bool>());
  EXPECT_EQ(live.get("/v1/status").second["phase"], "training");
  auto [s409, busy] = live.post("/v1/train", "{}");
  EXPECT_EQ(s409, 409);
  EXPECT_EQ(busy["error"], "InvalidState");
  EXPECT_EQ(live.get("/v1/prototypes").second["prototypes"].size(), 9u);
}

TEST(Gateway, PauseResume) {
  Live live(clusters(), cfg10());
  ASSERT_EQ(live.post("/v1/train", kEndless).first, 202);
  ASSERT_EQ(live.post("/v1/train/pause", "").first, 200);
  for (int i = 0; i < 500 && live.get("/v1/status").second["phase"] != "paused"; ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  const auto paused = live.get("/v1/status").second;
  ASSERT_EQ(paused["phase"], "paused");
  const auto epoch = paused["epoch"].get<std::size_t>();
  // a command while paused applies at once, without advancing training
  auto [st, out] = live.post("/v1/interact", R"({"op": "finetune", "target": 1})");
  EXPECT_EQ(st, 200);
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_EQ(live.get("/v1/status").second["epoch"], epoch);
  ASSERT_EQ(live.post("/v1/train/resume", "").first, 200);
  for (int i = 0; i < 500 && live.get("/v1/status").second["epoch"] == epoch; ++i)
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  EXPECT_GT(live.get("/v1/status").second["epoch"].get<std::size_t>(), epoch);
}

TEST(Gateway, CheckpointRoundTrip) {
  Live live(clusters(), cfg10());
  auto r = live.cli.Get("/v1/checkpoint");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  const std::string bytes = r->body;
  live.post("/v1/interact", R"({"op": "remove", "target": 3})");
  EXPECT_EQ(live.get("/v1/prototypes").second["prototypes"].size(), 9u);
  auto put = live.cli.Put("/v1/checkpoint", bytes, "application/octet-stream");
  ASSERT_TRUE(put);
  EXPECT_EQ(put->status, 200);
  EXPECT_EQ(live.get("/v1/prototypes").second["prototypes"].size(), 10u);
  EXPECT_EQ(live.session.checkpoint_bytes(), bytes);
  auto bad = live.cli.Put("/v1/checkpoint", "garbage", "application/octet-stream");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
}

TEST(HttpProvider, MatchesEncoderAndValidatesReplies) {
  FakeEmbedder fake(6, 21);
  HttpEmbeddingProvider p(fake.url(), 6);
  const std::vector<std::string> toks{"the", "food", "was", "great"};
  const auto a = p.embed(toks), b = p.embed(toks);
  const auto ref = fake.enc.embed(toks);
  EXPECT_EQ(a.sentence, ref.sentence);
  EXPECT_EQ(a.tokens, ref.tokens);
  EXPECT_EQ(a.sentence, b.sentence);  // deterministic
  try {
    p.embed(std::vector<std::string>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }

  FakeEmbedder wrong(6, 21, {}, 5);
  HttpEmbeddingProvider q(wrong.url(), 6);
  try {
    q.embed(toks);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
  }
  HttpEmbeddingProvider dead("http://127.0.0.1:1", 6);
  EXPECT_THROW(dead.embed(toks), Error);

  ProviderSpec spec;
  spec.kind = ProviderKind::http;
  spec.dim = 6;
  spec.url = fake.url();
  EXPECT_TRUE(make_gateway_provider(spec)->supports_novel_text());
}

TEST(HttpProvider, PruneThroughEmbedEndpoint) {
  // dataset embedded by the same encoder that serves /embed
  FakeEmbedder fake(8, 5);
  Dataset ds;
  ds.mode = Mode::sentence;
  ds.dim = 8;
  ds.classes = 2;
  const char* texts[] = {"great food. friendly staff. we will come back again and again for the pasta",
                         "terrible service. cold food. never again will we set foot in this place"};
  for (int i = 0; i < 20; ++i) {
    auto ex = embed_example("t" + std::to_string(i), i % 2, split_whitespace(texts[i % 2]), Mode::sentence, fake.enc);
    ex.text = texts[i % 2];
    ex.split = i < 14 ? Split::train : i < 17 ? Split::val : Split::test;
    ds.examples.push_back(std::move(ex));
  }
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.prototypes = 2;
  cfg.head_finetune_epochs = 2;
  auto model = train(ds, init_model(cfg, ds), cfg).model;  // projection sets display texts
  ASSERT_TRUE(model.protos.display[0].has_value());

  Live live(ds, cfg, std::make_unique<HttpEmbeddingProvider>(fake.url(), 8), model);
  auto [st, out] = live.post("/v1/interact", R"({"op": "prune", "target": 0, "prune_threshold": -1})");
  ASSERT_EQ(st, 200) << out.dump();
  EXPECT_TRUE(out["accepted"].get<bool>());
  const auto protos = live.get("/v1/prototypes").second["prototypes"];
  EXPECT_EQ(split_whitespace(protos[0]["display"].get<std::string>()).size(), 4u);  // two sentences

  auto [se, ex] = live.post("/v1/explain", R"({"text": "great food."})");
  EXPECT_EQ(se, 200);
  EXPECT_TRUE(ex["id"].is_null());
}
