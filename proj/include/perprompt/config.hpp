#pragma once

// Run configuration, read from a JSON file whose keys mirror the field names
// below. Unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "perprompt/dataset.hpp"
#include "perprompt/refiner.hpp"
#include "perprompt/retrieval.hpp"

namespace perprompt {

enum class PredictorKind { kOracle, kKnn, kRemote };
enum class UpdateGranularity { kEpisode, kEpoch };
enum class BaselinePrompt { kPlain, kCoarse, kBoth };

struct AblationToggles {
  bool SP = true;  // self-informed: predicted label sentence
  bool PP = true;  // peer-informed: similar-case section
  bool PR = true;  // prompt refinement by the learned deletion policy
};

struct RunConfig {
  // Data: a record/meta file pair, or the synthetic generator when empty.
  std::string records_path;
  std::string meta_path;
  SynthConfig synth{240, 35, 12, 45, 1.5, 1.0};
  std::string train_before = "2022-01-01";
  std::string val_before = "2022-07-01";

  PredictorKind predictor = PredictorKind::kKnn;
  std::size_t predictor_k = 10;

  std::size_t k = 10;
  std::size_t n = 10;
  double learning_rate = 0.005;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::size_t repeats = 1;

  // Backends: "hash" | "remote" embedder, "mock" | "constant" | "remote" responder.
  std::string embedder = "hash";
  std::size_t embedding_dim = 32;
  std::uint64_t embedding_seed = 0;
  std::string responder = "mock";
  std::size_t mock_max_tokens = 0;
  std::string constant_text = "Please follow the routine examination schedule.";
  std::string embed_endpoint;
  std::string respond_endpoint;
  std::string predictor_endpoint;
  std::string credentials_env;
  int max_attempts = 3;
  int initial_backoff_ms = 200;

  EncoderConfig encoder;
  PolicyConfig policy;

  AblationToggles ablation;
  UpdateGranularity update_granularity = UpdateGranularity::kEpisode;
  ActionMode inference_action_mode = ActionMode::kGreedy;
  BaselinePrompt baseline = BaselinePrompt::kBoth;
  bool bleu_smoothing = false;

  // Rigged environment: this many designated noise tokens are inserted into
  // every coarse prompt, the mock responder drops them, and references become
  // the responder's answer to the noise-free prompt.
  std::size_t noise_tokens = 0;

  std::vector<std::size_t> sweep_k{5, 10, 15, 20};
  std::vector<std::size_t> sweep_n{5, 10, 15, 20};
  std::size_t heatmap_columns = 100;
  double max_abort_fraction = 0.1;

  // Throws SchemaError on an inconsistent configuration.
  void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

std::string to_string(PredictorKind kind);
std::string to_string(UpdateGranularity granularity);
std::string to_string(ActionMode mode);
std::string to_string(BaselinePrompt baseline);

}  // namespace perprompt
