#include "perprompt/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "perprompt/backends.hpp"
#include "perprompt/errors.hpp"

namespace perprompt {

Mlp make_policy(std::size_t embed_dim, std::size_t encoding_dim, const PolicyConfig& config, Rng& init_rng) {
  return Mlp("policy", 2 * embed_dim + encoding_dim, {config.hidden, config.hidden, 1}, config.dropout, init_rng);
}

std::vector<ParamView> ModelParams::parameters() {
  auto out = encoder.parameters();
  auto p = policy.parameters();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<ConstParamView> ModelParams::parameters() const {
  auto out = encoder.parameters();
  auto p = policy.parameters();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::vector<double> mean_pool(const Matrix& embeddings) {
  if (embeddings.rows == 0) throw SchemaError("mean pooling needs at least one row");
  std::vector<double> mean(embeddings.cols, 0.0);
  for (std::size_t r = 0; r < embeddings.rows; ++r) {
    for (std::size_t c = 0; c < embeddings.cols; ++c) mean[c] += embeddings(r, c);
  }
  for (double& v : mean) v /= static_cast<double>(embeddings.rows);
  return mean;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double top = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

namespace {

std::vector<double> policy_tail(std::span<const double> mean, std::span<const double> encoding) {
  std::vector<double> tail(mean.begin(), mean.end());
  tail.insert(tail.end(), encoding.begin(), encoding.end());
  return tail;
}

double log_softmax_at(std::span<const double> probs, std::size_t index) { return std::log(probs[index]); }

}  // namespace

std::vector<double> deletion_distribution(const Matrix& embeddings, std::span<const double> mean,
                                          std::span<const double> encoding, const Mlp& policy, Mode mode, Rng* rng,
                                          Mlp::Cache* cache) {
  if (embeddings.rows < 2) throw SchemaError("a deletion step needs at least two tokens");
  if (mean.size() != embeddings.cols) throw DimensionError("mean embedding does not match the embedding width");
  const auto tail = policy_tail(mean, encoding);
  const Matrix logits = policy.forward(embeddings, tail, mode, rng, cache);
  return softmax(logits.data);
}

namespace {

RolloutResult run_episode(const PromptState& s0, std::span<const double> encoding, std::size_t n, const Mlp& policy,
                          EmbeddingProvider& embedder, Rng* rng, const RolloutOptions& options,
                          std::span<const std::size_t> forced) {
  if (n == 0) throw SchemaError("a rollout needs n >= 1");
  if (s0.tokens.size() <= n) throw PromptTooShortError("prompt has no more tokens than deletions");
  RolloutResult out;
  out.trajectory.subject_id = s0.subject_id;
  out.trajectory.n = n;
  PromptState state = s0;
  state.budget = std::max(state.budget, state.step + n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix e = embedder.embed_tokens(state.tokens);
    const auto mean = mean_pool(e);
    StepRecord record;
    const auto probs = deletion_distribution(e, mean, encoding, policy, options.dropout, rng,
                                             options.keep_records ? &record.cache : nullptr);
    std::size_t chosen = 0;
    if (!forced.empty()) {
      chosen = forced[i];
      if (chosen >= probs.size()) throw SchemaError("replayed action out of range");
    } else if (options.action == ActionMode::kGreedy) {
      chosen = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    } else {
      const double u = unit(*rng);
      double cumulative = 0.0;
      chosen = probs.size() - 1;
      for (std::size_t t = 0; t < probs.size(); ++t) {
        cumulative += probs[t];
        if (u < cumulative) {
          chosen = t;
          break;
        }
      }
    }
    out.trajectory.steps.push_back({state.tokens.size(), chosen, log_softmax_at(probs, chosen)});
    if (options.keep_records) {
      record.probs = probs;
      record.chosen = chosen;
      out.records.push_back(std::move(record));
    }
    state = apply_deletion(state, chosen);
  }
  out.final_state = std::move(state);
  return out;
}

}  // namespace

RolloutResult rollout(const PromptState& s0, std::span<const double> encoding, std::size_t n, const Mlp& policy,
                      EmbeddingProvider& embedder, Rng& rng, const RolloutOptions& options) {
  return run_episode(s0, encoding, n, policy, embedder, &rng, options, {});
}

RolloutResult replay(const PromptState& s0, std::span<const double> encoding, std::span<const std::size_t> actions,
                     const Mlp& policy, EmbeddingProvider& embedder) {
  if (actions.empty()) throw SchemaError("replay needs at least one action");
  RolloutOptions options{ActionMode::kGreedy, Mode::kEval, true};
  return run_episode(s0, encoding, actions.size(), policy, embedder, nullptr, options, actions);
}

double reinforce_loss(const Trajectory& trajectory, double reward) {
  if (trajectory.steps.size() != trajectory.n || trajectory.n == 0) {
    throw SchemaError("incomplete trajectory: " + std::to_string(trajectory.steps.size()) + " of " +
                      std::to_string(trajectory.n) + " steps");
  }
  double sum = 0.0;
  for (const auto& step : trajectory.steps) sum += step.log_prob;
  return -sum * reward;
}

void accumulate_log_prob_gradient(const ModelParams& params, const Mlp::Cache& encoder_cache,
                                  std::span<const StepRecord> steps, double scale, ModelParams& grads) {
  if (scale == 0.0) return;
  const std::size_t encoding_dim = params.encoder.output_dim();
  std::vector<double> d_encoding(encoding_dim, 0.0);
  for (const StepRecord& step : steps) {
    // d log p_j / d z_t = [t == j] - p_t
    Matrix d_logits(step.probs.size(), 1);
    for (std::size_t t = 0; t < step.probs.size(); ++t) {
      d_logits(t, 0) = scale * ((t == step.chosen ? 1.0 : 0.0) - step.probs[t]);
    }
    const std::size_t tail_dim = step.cache.tail.size();
    if (tail_dim < encoding_dim) throw DimensionError("policy input lacks the subject encoding");
    std::vector<double> d_tail(tail_dim, 0.0);
    params.policy.backward(step.cache, d_logits, grads.policy, d_tail);
    // The tail is [mean embedding | encoding]; embeddings are frozen.
    const std::size_t offset = tail_dim - encoding_dim;
    for (std::size_t i = 0; i < encoding_dim; ++i) d_encoding[i] += d_tail[offset + i];
  }
  Matrix d_out(1, encoding_dim);
  d_out.data = std::move(d_encoding);
  params.encoder.backward(encoder_cache, d_out, grads.encoder);
}

AdamState make_adam(const ModelParams& params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params.parameters()) {
    state.first_moment.emplace_back(p.values.size(), 0.0);
    state.second_moment.emplace_back(p.values.size(), 0.0);
  }
  return state;
}

void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state) {
  auto views = params.parameters();
  const auto grad_views = grads.parameters();
  if (views.size() != state.first_moment.size() || grad_views.size() != views.size()) {
    throw DimensionError("optimizer state does not match the parameters");
  }
  for (const auto& g : grad_views) {
    for (double v : g.values) {
      if (!std::isfinite(v)) throw NonFiniteGradientError(g.name);
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < views.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto values = views[k].values;
    auto g = grad_views[k].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

namespace {

double episode_loss(const ModelParams& params, const EpisodeFixture& fixture, EmbeddingProvider& embedder) {
  const auto encoding = encode(params.encoder, fixture.flat, Mode::kEval);
  const auto result = replay(fixture.s0, encoding, fixture.actions, params.policy, embedder);
  return reinforce_loss(result.trajectory, fixture.reward);
}

}  // namespace

GradientCheckResult gradient_check(const ModelParams& params, const EpisodeFixture& fixture,
                                   EmbeddingProvider& embedder, double h) {
  Mlp::Cache encoder_cache;
  const auto encoding = encode(params.encoder, fixture.flat, Mode::kEval, nullptr, &encoder_cache);
  const auto replayed = replay(fixture.s0, encoding, fixture.actions, params.policy, embedder);
  ModelParams grads = params.zeros_like();
  accumulate_log_prob_gradient(params, encoder_cache, replayed.records, -fixture.reward, grads);

  GradientCheckResult result;
  for (const auto& g : grads.parameters()) result.analytic.insert(result.analytic.end(), g.values.begin(), g.values.end());

  ModelParams probe = params;
  auto views = probe.parameters();
  for (auto& view : views) {
    for (std::size_t i = 0; i < view.values.size(); ++i) {
      const double original = view.values[i];
      view.values[i] = original + h;
      const double plus = episode_loss(probe, fixture, embedder);
      view.values[i] = original - h;
      const double minus = episode_loss(probe, fixture, embedder);
      view.values[i] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double analytic = result.analytic[result.numeric.size()];
      result.numeric.push_back(numeric);
      // Components below 1e-6 in magnitude are compared in absolute terms.
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      const double rel = std::abs(analytic - numeric) / scale;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = view.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace perprompt
