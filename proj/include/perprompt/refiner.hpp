#pragma once

// Word-deletion refinement. A policy network scores every token of the
// current prompt from [token embedding | mean embedding | subject encoding];
// a softmax over those scores is the deletion distribution. An episode
// deletes n tokens and is rewarded once; training follows REINFORCE with
// Adam updates on both the policy and the subject encoder.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "perprompt/mlp.hpp"
#include "perprompt/prompt.hpp"
#include "perprompt/retrieval.hpp"

namespace perprompt {

class EmbeddingProvider;

struct PolicyConfig {
  std::size_t hidden = 256;
  double dropout = 0.4;
};

// Three dense layers: (2 * embed_dim + encoding_dim) -> hidden -> hidden -> 1.
Mlp make_policy(std::size_t embed_dim, std::size_t encoding_dim, const PolicyConfig& config, Rng& init_rng);

// Trainable networks. Gradients are held in a second instance of this type.
struct ModelParams {
  Mlp encoder;
  Mlp policy;

  ModelParams zeros_like() const { return {encoder.zeros_like(), policy.zeros_like()}; }
  std::vector<ParamView> parameters();
  std::vector<ConstParamView> parameters() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Row mean of a nonempty embedding matrix.
std::vector<double> mean_pool(const Matrix& embeddings);

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

// Per-token deletion probabilities. Requires at least two tokens.
std::vector<double> deletion_distribution(const Matrix& embeddings, std::span<const double> mean,
                                          std::span<const double> encoding, const Mlp& policy, Mode mode,
                                          Rng* rng = nullptr, Mlp::Cache* cache = nullptr);

enum class ActionMode { kSample, kGreedy };

struct TrajectoryStep {
  std::size_t token_count_before = 0;
  std::size_t chosen_index = 0;
  double log_prob = 0.0;

  friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

struct Trajectory {
  std::string subject_id;
  std::size_t n = 0;  // steps an episode must contain
  std::vector<TrajectoryStep> steps;
  double reward = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

// Forward state of one step, kept for backpropagation.
struct StepRecord {
  Mlp::Cache cache;
  std::vector<double> probs;
  std::size_t chosen = 0;
};

struct RolloutResult {
  PromptState final_state;
  Trajectory trajectory;
  std::vector<StepRecord> records;  // filled when requested
};

struct RolloutOptions {
  ActionMode action = ActionMode::kGreedy;
  Mode dropout = Mode::kEval;
  bool keep_records = false;
};

// Applies n deletions to s0, re-embedding the state and recomputing the
// distribution before every deletion. Sampling and dropout draw from rng.
// Greedy mode takes the most probable token, lowest index on ties.
RolloutResult rollout(const PromptState& s0, std::span<const double> encoding, std::size_t n, const Mlp& policy,
                      EmbeddingProvider& embedder, Rng& rng, const RolloutOptions& options);

// Replays a fixed action sequence in eval mode.
RolloutResult replay(const PromptState& s0, std::span<const double> encoding, std::span<const std::size_t> actions,
                     const Mlp& policy, EmbeddingProvider& embedder);

// -(sum of step log-probabilities) * reward.
double reinforce_loss(const Trajectory& trajectory, double reward);

// Adds d/dtheta [scale * sum_i log pi(a_i | s_i)] to `grads` for both
// networks. The encoder receives gradient through the encoding that each step
// appended to its policy input.
void accumulate_log_prob_gradient(const ModelParams& params, const Mlp::Cache& encoder_cache,
                                  std::span<const StepRecord> steps, double scale, ModelParams& grads);

struct AdamConfig {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState make_adam(const ModelParams& params, const AdamConfig& config);

// One bias-corrected Adam step. Throws NonFiniteGradientError naming the
// first parameter tensor with a NaN or infinite gradient; parameters are left
// untouched in that case.
void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state);

// Everything needed to evaluate one episode's loss with fixed actions.
struct EpisodeFixture {
  std::vector<double> flat;        // padded subject vector
  PromptState s0;
  std::vector<std::size_t> actions;
  double reward = 1.0;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::vector<double> analytic;  // flattened over ModelParams::parameters()
  std::vector<double> numeric;
};

// Compares the analytic REINFORCE gradient with central differences of step
// `h` over every parameter. Dropout must be disabled in both networks' use
// (everything runs in eval mode).
GradientCheckResult gradient_check(const ModelParams& params, const EpisodeFixture& fixture,
                                   EmbeddingProvider& embedder, double h = 1e-5);

}  // namespace perprompt
