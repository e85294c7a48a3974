#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "perprompt/backends.hpp"
#include "perprompt/errors.hpp"

using namespace perprompt;
using nlohmann::json;

namespace {

// A loopback server on an ephemeral port, stopped on destruction.
class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& server() { return server_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

HttpEndpoint endpoint(const std::string& url, int attempts = 3) {
  HttpEndpoint e;
  e.base_url = url;
  e.retry.max_attempts = attempts;
  e.retry.initial_backoff = std::chrono::milliseconds{1};
  e.retry.max_backoff = std::chrono::milliseconds{4};
  e.timeout = std::chrono::milliseconds{2000};
  return e;
}

class CountingModel final : public ResponseModel {
 public:
  std::string id() const override { return "counting"; }
  std::string respond(const std::string& prompt) override {
    ++calls;
    return "re " + prompt;
  }
  int calls = 0;
};

}  // namespace

TEST_CASE("hash embeddings are unit length, deterministic and seed dependent") {
  HashEmbedder a(16, 1), b(16, 1), c(16, 2);
  const std::vector<std::string> tokens{"alpha", "beta", "alpha"};
  const Matrix ea = a.embed_tokens(tokens);
  CHECK(ea.rows == 3);
  CHECK(ea.cols == 16);
  for (std::size_t t = 0; t < 3; ++t) {
    double norm = 0.0;
    for (double v : ea.row(t)) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(ea.data == b.embed_tokens(tokens).data);
  CHECK(ea.data != c.embed_tokens(tokens).data);
  for (std::size_t i = 0; i < 16; ++i) CHECK(ea(0, i) == ea(2, i));
  CHECK_THROWS(a.embed_tokens(std::vector<std::string>{}));
}

TEST_CASE("one-hot embeddings map unknown tokens to zero") {
  OneHotEmbedder e({"x", "y"});
  const Matrix m = e.embed_tokens(std::vector<std::string>{"y", "z"});
  CHECK(m.data == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("the mock responder drops noise and truncates") {
  MockResponder plain;
  CHECK(plain.respond("a  b c") == "Advice: a b c");
  MockResponder noisy(MockResponderConfig{{"<n>"}, 2, "R:"});
  CHECK(noisy.respond("<n> a <n> b c") == "R: a b");
  CHECK(noisy.respond("<n>") == "R:");
  CHECK_THROWS_AS(plain.respond("  "), SchemaError);
}

TEST_CASE("the constant responder ignores its prompt") {
  ConstantResponder c("fixed reply");
  CHECK(c.respond("one") == "fixed reply");
  CHECK(c.respond("two") == "fixed reply");
}

TEST_CASE("retry backoff grows geometrically up to the cap") {
  RetryPolicy p;
  p.initial_backoff = std::chrono::milliseconds{100};
  p.multiplier = 3.0;
  p.max_backoff = std::chrono::milliseconds{500};
  CHECK(p.backoff_before(1).count() == 0);
  CHECK(p.backoff_before(2).count() == 100);
  CHECK(p.backoff_before(3).count() == 300);
  CHECK(p.backoff_before(4).count() == 500);
}

TEST_CASE("caching response model memoizes on the prompt") {
  auto inner = std::make_shared<CountingModel>();
  CachingResponseModel cache(inner);
  CHECK(cache.respond("p") == "re p");
  CHECK(cache.respond("p") == "re p");
  CHECK(cache.respond("q") == "re q");
  CHECK(inner->calls == 2);
  CHECK(cache.hits() == 1);
}

TEST_CASE("a transient server error is retried") {
  LocalServer srv;
  std::atomic<int> calls{0};
  srv.server().Post("/respond", [&](const httplib::Request& req, httplib::Response& res) {
    if (calls++ == 0) {
      res.status = 503;
      return;
    }
    const auto body = json::parse(req.body);
    res.set_content(json{{"text", "ok " + body.at("prompt").get<std::string>()}}.dump(), "application/json");
  });
  std::vector<json> log;
  HttpResponseModel model(endpoint(srv.url()), [&](const json& e) { log.push_back(e); });
  CHECK(model.respond("hello") == "ok hello");
  CHECK(calls == 2);
  REQUIRE(log.size() == 2);
  CHECK(log[0].at("status") == 503);
  CHECK(log[1].at("status") == 200);
  CHECK(log[1].at("attempt") == 2);
}

TEST_CASE("persistent server errors exhaust the retry budget") {
  LocalServer srv;
  std::atomic<int> calls{0};
  srv.server().Post("/respond", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 500;
  });
  HttpResponseModel model(endpoint(srv.url(), 4));
  CHECK_THROWS_AS(model.respond("x"), TransportError);
  CHECK(calls == 4);
}

TEST_CASE("client errors are not retried") {
  LocalServer srv;
  std::atomic<int> calls{0};
  srv.server().Post("/respond", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
  });
  HttpResponseModel model(endpoint(srv.url(), 4));
  CHECK_THROWS_AS(model.respond("x"), TransportError);
  CHECK(calls == 1);
}

TEST_CASE("malformed replies are transport errors") {
  LocalServer srv;
  srv.server().Post("/respond", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "application/json");
  });
  HttpResponseModel model(endpoint(srv.url()));
  CHECK_THROWS_AS(model.respond("x"), TransportError);
}

TEST_CASE("an unreachable endpoint is a transport error") {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpResponseModel model(endpoint("http://127.0.0.1:" + std::to_string(port), 2));
  CHECK_THROWS_AS(model.respond("x"), TransportError);
}

TEST_CASE("the bearer token is sent but never logged") {
  LocalServer srv;
  std::string seen;
  srv.server().Post("/respond", [&](const httplib::Request& req, httplib::Response& res) {
    seen = req.get_header_value("Authorization");
    res.set_content(json{{"text", "fine"}}.dump(), "application/json");
  });
  ::setenv("PERPROMPT_TEST_TOKEN", "s3cret-value", 1);
  std::string logged;
  auto ep = endpoint(srv.url());
  ep.credentials_env = "PERPROMPT_TEST_TOKEN";
  HttpResponseModel model(ep, [&](const json& e) { logged += e.dump(); });
  CHECK(model.respond("x") == "fine");
  ::unsetenv("PERPROMPT_TEST_TOKEN");
  CHECK(seen == "Bearer s3cret-value");
  CHECK_FALSE(logged.empty());
  CHECK(logged.find("s3cret-value") == std::string::npos);
}

TEST_CASE("remote embeddings report their dimension and are cached") {
  LocalServer srv;
  std::atomic<int> calls{0};
  srv.server().Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    const json body = json::parse(req.body);
    json vectors = json::array();
    for (const auto& t : body.at("texts")) {
      const double len = static_cast<double>(t.get<std::string>().size());
      vectors.push_back(json::array({len, 1.0, 0.0}));
    }
    res.set_content(json{{"vectors", vectors}, {"dim", 3}}.dump(), "application/json");
  });
  auto inner = std::make_shared<HttpEmbeddingProvider>(endpoint(srv.url()));
  CachingEmbeddingProvider cache(inner);
  CHECK(cache.dimension() == 3);
  const std::vector<std::string> tokens{"ab", "c"};
  const Matrix m = cache.embed_tokens(tokens);
  CHECK(m.data == std::vector<double>{2, 1, 0, 1, 1, 0});
  CHECK(cache.embed_tokens(tokens).data == m.data);
  CHECK(calls == 2);  // dimension probe plus one embedding request
}

TEST_CASE("remote embeddings with the wrong shape are rejected") {
  LocalServer srv;
  srv.server().Post("/embed", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"vectors", {{1.0, 2.0}}}, {"dim", 3}}.dump(), "application/json");
  });
  HttpEmbeddingProvider e(endpoint(srv.url()));
  CHECK_THROWS_AS(e.embed_tokens(std::vector<std::string>{"a"}), TransportError);
}
