#pragma once

// Experiment pipeline: training, inference, evaluation tables, ablation,
// hyper-parameter sweeps and the deletion heatmap.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "perprompt/backends.hpp"
#include "perprompt/checkpoint.hpp"
#include "perprompt/config.hpp"
#include "perprompt/dataset.hpp"
#include "perprompt/metrics.hpp"
#include "perprompt/predictor.hpp"
#include "perprompt/prompt.hpp"
#include "perprompt/retrieval.hpp"

namespace perprompt {

// Append-only run log, written as one JSON object per line.
class RunLog {
 public:
  void append(nlohmann::json entry) { entries_.push_back(std::move(entry)); }
  const std::vector<nlohmann::json>& entries() const { return entries_; }
  void write(const std::filesystem::path& path) const;
  static RunLog read(const std::filesystem::path& path);

 private:
  std::vector<nlohmann::json> entries_;
};

// The designated noise tokens of the rigged environment.
std::vector<std::string> noise_vocabulary(std::size_t count);

// Data, padded vectors, label predictions and backends shared by every phase
// of one run.
class Experiment {
 public:
  explicit Experiment(RunConfig config, RequestLogger logger = {});

  const RunConfig& config() const { return config_; }
  const Dataset& dataset() const { return dataset_; }
  const DatasetSplit& split() const { return split_; }
  std::size_t target_visits() const { return target_visits_; }
  const NormalizationStats& normalization() const { return normalization_; }
  const std::vector<double>& flat(const std::string& subject_id) const;
  const std::string& predicted_label(const std::string& subject_id) const;
  const std::string& train_label(const std::string& subject_id) const;
  const std::vector<std::string>& noise() const { return noise_; }

  EmbeddingProvider& embedder() { return *embedder_; }
  ResponseModel& responder() { return *responder_; }
  const Predictor& predictor() const { return *predictor_; }

  struct Episode {
    NeighborSet neighbors;
    PromptState s0;         // coarse prompt the policy edits
    std::string reference;  // text the responses are scored against
  };

  // Retrieves neighbours from the train pool with `encoding`, builds the
  // coarse prompt and resolves the reference. Throws PromptTooShortError.
  Episode prepare_episode(const SubjectRecord& record, std::span<const double> encoding,
                          std::span<const PoolEntry> train_pool, const PromptToggles& toggles);

 private:
  RunConfig config_;
  Dataset dataset_;
  DatasetSplit split_;
  NormalizationStats normalization_;
  std::size_t target_visits_ = 0;
  std::unordered_map<std::string, std::vector<double>> flats_;
  std::unordered_map<std::string, std::string> predictions_;
  std::unordered_map<std::string, std::string> train_labels_;
  std::vector<std::string> noise_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::shared_ptr<ResponseModel> responder_;
  std::unique_ptr<Predictor> predictor_;
};

// Freshly initialized parameters and optimizer for the experiment's dimensions.
Checkpoint initial_checkpoint(Experiment& experiment);

// Encodes every train subject in eval mode.
std::vector<PoolEntry> encode_train_pool(const Experiment& experiment, const Mlp& encoder);

struct TrainResult {
  Checkpoint checkpoint;                 // best-validation epoch
  RunLog log;
  std::vector<double> epoch_mean_reward; // mean train-episode reward per epoch
};

TrainResult train(Experiment& experiment);

struct InferenceRecord {
  std::string subject_id;
  std::string predicted_label;
  std::vector<std::string> neighbors;
  std::string plain_prompt;
  std::string coarse_prompt;
  std::string refined_prompt;
  std::string response_plain;
  std::string response_coarse;
  std::string response_refined;
  std::string reference;
  std::vector<std::size_t> deleted;  // step-0 indices, in deletion order

  friend bool operator==(const InferenceRecord&, const InferenceRecord&) = default;
};

// Refines and answers the prompts of `subjects`. Appends one log entry per
// subject when `log` is given.
std::vector<InferenceRecord> infer(Experiment& experiment, const Checkpoint& checkpoint,
                                   std::span<const SubjectRecord> subjects, RunLog* log = nullptr);

void write_inference(const std::vector<InferenceRecord>& records, const std::filesystem::path& path);
std::vector<InferenceRecord> read_inference(const std::filesystem::path& path);

struct ReportRow {
  std::string model;
  std::string prompt;  // "before (plain prompt)", "before (coarse prompt)", "after"
  MetricsReport metrics;
};

std::vector<ReportRow> evaluate_run(std::span<const InferenceRecord> records, EmbeddingProvider& embedder,
                                    const std::string& model, BaselinePrompt baseline, const BleuOptions& bleu = {});
std::string format_report(std::span<const ReportRow> rows);
nlohmann::json report_to_json(std::span<const ReportRow> rows);

// Writes checkpoint.bin, runlog.jsonl, inference.jsonl, report.txt,
// report.json and heatmap.csv into `out_dir`.
struct PipelineOutputs {
  TrainResult training;
  std::vector<InferenceRecord> inference;
  std::vector<ReportRow> report;
};
PipelineOutputs run_pipeline(const RunConfig& config, const std::filesystem::path& out_dir);

struct AblationRow {
  std::string id;  // "1", "2", "3", "PMLM"
  AblationToggles toggles;
  MetricsReport metrics;  // "after" row, averaged over repeats
  std::vector<InferenceRecord> inference;  // first repeat
};

std::vector<AblationRow> ablate(const RunConfig& config, const std::filesystem::path& out_dir);
std::string format_ablation(std::span<const AblationRow> rows);
nlohmann::json ablation_to_json(std::span<const AblationRow> rows);

struct SweepPoint {
  std::size_t k = 0;
  std::size_t n = 0;
  bool skipped = false;
  std::string reason;
  MetricsReport metrics;
};

std::vector<SweepPoint> sweep(const RunConfig& config, const std::filesystem::path& out_dir);
std::string format_sweep(std::span<const SweepPoint> points);
nlohmann::json sweep_to_json(std::span<const SweepPoint> points);

// Deletion counts of inference episodes: row = iteration, column = step-0
// token index (first `columns` indices).
Matrix heatmap(const RunLog& log, std::size_t columns);
std::string heatmap_csv(const Matrix& counts);

// Mean reward when every deletion is drawn uniformly at random, over
// `passes` sweeps of the train split.
double mean_uniform_reward(Experiment& experiment, std::size_t passes);

struct NoiseMass {
  double policy = 0.0;   // mean probability the policy puts on noise tokens at s0
  double uniform = 0.0;  // mean of (noise count / |s0|)
  std::size_t subjects = 0;
};

NoiseMass measure_noise_mass(Experiment& experiment, const Checkpoint& checkpoint,
                             std::span<const SubjectRecord> subjects);

}  // namespace perprompt
