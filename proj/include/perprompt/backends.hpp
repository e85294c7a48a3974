#pragma once

// Token-embedding providers and response models: deterministic offline
// implementations plus HTTP clients for remote services.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "perprompt/tensor.hpp"

namespace perprompt {

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() = 0;
  // One row per token, in token order. Throws on an empty token list.
  virtual Matrix embed_tokens(std::span<const std::string> tokens) = 0;
};

class ResponseModel {
 public:
  virtual ~ResponseModel() = default;
  virtual std::string id() const = 0;
  virtual std::string respond(const std::string& prompt) = 0;
};

// Offline embedder: each token maps to a pseudo-random Gaussian direction of
// unit length, a pure function of (token, dimension, seed).
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::size_t dimension = 32, std::uint64_t seed = 0);
  std::string id() const override;
  std::size_t dimension() override { return dimension_; }
  Matrix embed_tokens(std::span<const std::string> tokens) override;
  std::vector<double> embed_token(const std::string& token) const;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

// Embeds tokens as one-hot vectors over a fixed vocabulary; unknown tokens
// get the zero vector. Used to check BERTScore against bag-overlap scores.
class OneHotEmbedder final : public EmbeddingProvider {
 public:
  explicit OneHotEmbedder(std::vector<std::string> vocabulary);
  std::string id() const override { return "onehot"; }
  std::size_t dimension() override { return index_.size(); }
  Matrix embed_tokens(std::span<const std::string> tokens) override;

 private:
  std::map<std::string, std::size_t> index_;
};

struct MockResponderConfig {
  std::set<std::string> noise_vocab;
  std::size_t max_tokens = 0;  // 0 keeps every token
  std::string prefix = "Advice:";
};

// Offline response model: drops the noise tokens from the prompt, keeps at
// most max_tokens of the rest and wraps them in a fixed template.
class MockResponder final : public ResponseModel {
 public:
  explicit MockResponder(MockResponderConfig config = {});
  std::string id() const override { return "mock"; }
  std::string respond(const std::string& prompt) override;

 private:
  MockResponderConfig config_;
};

// Ignores the prompt entirely.
class ConstantResponder final : public ResponseModel {
 public:
  explicit ConstantResponder(std::string text = "Please follow the routine examination schedule.");
  std::string id() const override { return "constant"; }
  std::string respond(const std::string& prompt) override;

 private:
  std::string text_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{5000};

  // Delay before attempt `attempt` (1-based; attempt 1 has no delay).
  std::chrono::milliseconds backoff_before(int attempt) const;
};

struct HttpEndpoint {
  std::string base_url;          // e.g. http://127.0.0.1:8080
  std::string credentials_env;   // environment variable holding a bearer token; may be empty
  RetryPolicy retry;
  std::chrono::milliseconds timeout{30000};
};

// Receives one JSON object per HTTP attempt (request, status, response).
using RequestLogger = std::function<void(const nlohmann::json&)>;

// POST /embed {"texts": [...]} -> {"vectors": [[...]...], "dim": D}
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpEndpoint endpoint, RequestLogger logger = {});
  std::string id() const override { return "http-embed:" + endpoint_.base_url; }
  std::size_t dimension() override;
  Matrix embed_tokens(std::span<const std::string> tokens) override;

 private:
  HttpEndpoint endpoint_;
  RequestLogger logger_;
  std::once_flag probe_once_;
  std::size_t dimension_ = 0;
};

// POST /respond {"prompt": "..."} -> {"text": "..."}
class HttpResponseModel final : public ResponseModel {
 public:
  explicit HttpResponseModel(HttpEndpoint endpoint, RequestLogger logger = {});
  std::string id() const override { return "http-respond:" + endpoint_.base_url; }
  std::string respond(const std::string& prompt) override;

 private:
  HttpEndpoint endpoint_;
  RequestLogger logger_;
};

// Memoizes responses on (backend id, prompt) for the lifetime of a run.
class CachingResponseModel final : public ResponseModel {
 public:
  explicit CachingResponseModel(std::shared_ptr<ResponseModel> inner);
  std::string id() const override { return inner_->id(); }
  std::string respond(const std::string& prompt) override;
  std::size_t hits() const;

 private:
  std::shared_ptr<ResponseModel> inner_;
  mutable std::mutex mutex_;
  std::map<std::string, std::string> cache_;
  std::size_t hits_ = 0;
};

// Memoizes embedding matrices on the exact token list.
class CachingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit CachingEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner);
  std::string id() const override { return inner_->id(); }
  std::size_t dimension() override { return inner_->dimension(); }
  Matrix embed_tokens(std::span<const std::string> tokens) override;

 private:
  std::shared_ptr<EmbeddingProvider> inner_;
  std::mutex mutex_;
  std::map<std::vector<std::string>, Matrix> cache_;
};

// Sends one JSON POST with retries; exposed for the remote predictor and tests.
nlohmann::json post_json_with_retry(const HttpEndpoint& endpoint, const std::string& path,
                                    const nlohmann::json& body, const RequestLogger& logger);

}  // namespace perprompt
