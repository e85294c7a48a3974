#include "perprompt/backends.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

#include "httplib.h"
#include "perprompt/errors.hpp"
#include "perprompt/hash.hpp"
#include "perprompt/prompt.hpp"

namespace perprompt {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Uniform in (0, 1].
double unit_open(std::uint64_t& state) {
  return (static_cast<double>(splitmix64(state) >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

HashEmbedder::HashEmbedder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
  if (dimension == 0) throw DimensionError("embedding dimension must be positive");
}

std::string HashEmbedder::id() const {
  return "hash-d" + std::to_string(dimension_) + "-s" + std::to_string(seed_);
}

std::vector<double> HashEmbedder::embed_token(const std::string& token) const {
  std::uint64_t state = stable_hash(token) ^ (seed_ * 0xD1B54A32D192ED03ULL) ^ dimension_;
  std::vector<double> v(dimension_);
  for (std::size_t i = 0; i < dimension_; i += 2) {
    // Box-Muller
    const double r = std::sqrt(-2.0 * std::log(unit_open(state)));
    const double theta = 2.0 * std::numbers::pi * unit_open(state);
    v[i] = r * std::cos(theta);
    if (i + 1 < dimension_) v[i + 1] = r * std::sin(theta);
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

Matrix HashEmbedder::embed_tokens(std::span<const std::string> tokens) {
  if (tokens.empty()) throw SchemaError("cannot embed an empty token list");
  Matrix e(tokens.size(), dimension_);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto v = embed_token(tokens[t]);
    std::copy(v.begin(), v.end(), e.row(t).begin());
  }
  return e;
}

OneHotEmbedder::OneHotEmbedder(std::vector<std::string> vocabulary) {
  for (auto& token : vocabulary) index_.emplace(std::move(token), index_.size());
}

Matrix OneHotEmbedder::embed_tokens(std::span<const std::string> tokens) {
  if (tokens.empty()) throw SchemaError("cannot embed an empty token list");
  Matrix e(tokens.size(), index_.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto it = index_.find(tokens[t]);
    if (it != index_.end()) e(t, it->second) = 1.0;
  }
  return e;
}

MockResponder::MockResponder(MockResponderConfig config) : config_(std::move(config)) {}

std::string MockResponder::respond(const std::string& prompt) {
  auto tokens = tokenize(prompt);
  if (tokens.empty()) throw SchemaError("cannot respond to an empty prompt");
  std::vector<std::string> kept;
  for (auto& t : tokens) {
    if (config_.noise_vocab.contains(t)) continue;
    if (config_.max_tokens != 0 && kept.size() == config_.max_tokens) break;
    kept.push_back(std::move(t));
  }
  if (kept.empty()) return config_.prefix;
  return config_.prefix + " " + detokenize(kept);
}

ConstantResponder::ConstantResponder(std::string text) : text_(std::move(text)) {
  if (text_.empty()) throw SchemaError("constant responder text must be nonempty");
}

std::string ConstantResponder::respond(const std::string& prompt) {
  if (prompt.empty()) throw SchemaError("cannot respond to an empty prompt");
  return text_;
}

std::chrono::milliseconds RetryPolicy::backoff_before(int attempt) const {
  if (attempt <= 1) return std::chrono::milliseconds{0};
  double delay = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, attempt - 2);
  delay = std::min(delay, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds{static_cast<long long>(delay)};
}

json post_json_with_retry(const HttpEndpoint& endpoint, const std::string& path, const json& body,
                          const RequestLogger& logger) {
  httplib::Client client(endpoint.base_url);
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - seconds);
  client.set_connection_timeout(seconds.count(), micros.count());
  client.set_read_timeout(seconds.count(), micros.count());
  httplib::Headers headers;
  if (!endpoint.credentials_env.empty()) {
    if (const char* token = std::getenv(endpoint.credentials_env.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  const std::string payload = body.dump();
  const int attempts = std::max(1, endpoint.retry.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    std::this_thread::sleep_for(endpoint.retry.backoff_before(attempt));
    auto result = client.Post(path, headers, payload, "application/json");
    json entry{{"endpoint", endpoint.base_url + path}, {"attempt", attempt}, {"request", body}};
    if (!result) {
      last_error = "transport failure: " + httplib::to_string(result.error());
      entry["error"] = last_error;
      if (logger) logger(entry);
      continue;
    }
    entry["status"] = result->status;
    entry["response"] = result->body;
    if (logger) logger(entry);
    if (result->status == 429 || result->status >= 500) {
      last_error = "HTTP " + std::to_string(result->status);
      continue;
    }
    if (result->status != 200) {
      throw TransportError(endpoint.base_url + path + " returned HTTP " + std::to_string(result->status));
    }
    try {
      return json::parse(result->body);
    } catch (const json::parse_error& e) {
      throw TransportError(endpoint.base_url + path + " returned malformed JSON: " + e.what());
    }
  }
  throw TransportError(endpoint.base_url + path + " failed after " + std::to_string(attempts) +
                       " attempts: " + last_error);
}

HttpEmbeddingProvider::HttpEmbeddingProvider(HttpEndpoint endpoint, RequestLogger logger)
    : endpoint_(std::move(endpoint)), logger_(std::move(logger)) {}

std::size_t HttpEmbeddingProvider::dimension() {
  std::call_once(probe_once_, [this] {
    const std::vector<std::string> probe{"probe"};
    json reply = post_json_with_retry(endpoint_, "/embed", json{{"texts", probe}}, logger_);
    if (!reply.contains("dim") || !reply.at("dim").is_number_unsigned() || reply.at("dim").get<std::size_t>() == 0) {
      throw TransportError("embedding endpoint did not report a positive dim");
    }
    dimension_ = reply.at("dim").get<std::size_t>();
  });
  return dimension_;
}

Matrix HttpEmbeddingProvider::embed_tokens(std::span<const std::string> tokens) {
  if (tokens.empty()) throw SchemaError("cannot embed an empty token list");
  const std::size_t dim = dimension();
  json reply = post_json_with_retry(endpoint_, "/embed",
                                    json{{"texts", std::vector<std::string>(tokens.begin(), tokens.end())}}, logger_);
  if (!reply.contains("vectors") || !reply.at("vectors").is_array() || reply.at("vectors").size() != tokens.size()) {
    throw TransportError("embedding endpoint returned the wrong number of vectors");
  }
  Matrix e(tokens.size(), dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const json& row = reply.at("vectors")[t];
    if (!row.is_array() || row.size() != dim) throw TransportError("embedding endpoint returned a vector of wrong size");
    for (std::size_t i = 0; i < dim; ++i) e(t, i) = row[i].get<double>();
  }
  return e;
}

HttpResponseModel::HttpResponseModel(HttpEndpoint endpoint, RequestLogger logger)
    : endpoint_(std::move(endpoint)), logger_(std::move(logger)) {}

std::string HttpResponseModel::respond(const std::string& prompt) {
  if (prompt.empty()) throw SchemaError("cannot respond to an empty prompt");
  json reply = post_json_with_retry(endpoint_, "/respond", json{{"prompt", prompt}}, logger_);
  if (!reply.contains("text") || !reply.at("text").is_string()) {
    throw TransportError("response endpoint reply lacks a text field");
  }
  std::string text = reply.at("text").get<std::string>();
  if (text.empty()) throw TransportError("response endpoint returned an empty reply");
  return text;
}

CachingResponseModel::CachingResponseModel(std::shared_ptr<ResponseModel> inner) : inner_(std::move(inner)) {}

std::string CachingResponseModel::respond(const std::string& prompt) {
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(prompt);
    if (it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  std::string text = inner_->respond(prompt);
  std::lock_guard lock(mutex_);
  return cache_.emplace(prompt, std::move(text)).first->second;
}

std::size_t CachingResponseModel::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

CachingEmbeddingProvider::CachingEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner)
    : inner_(std::move(inner)) {}

Matrix CachingEmbeddingProvider::embed_tokens(std::span<const std::string> tokens) {
  std::vector<std::string> key(tokens.begin(), tokens.end());
  {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  Matrix e = inner_->embed_tokens(tokens);
  std::lock_guard lock(mutex_);
  return cache_.emplace(std::move(key), std::move(e)).first->second;
}

}  // namespace perprompt
