#include "perprompt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

#include "perprompt/errors.hpp"
#include "perprompt/hash.hpp"
#include "perprompt/refiner.hpp"

namespace perprompt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;
constexpr std::uint64_t kInferStream = 0x696e666572ULL;
constexpr std::uint64_t kUniformStream = 0x756e69666fULL;

HttpEndpoint make_endpoint(const RunConfig& config, const std::string& url) {
  if (url.empty()) throw SchemaError("remote backend selected without an endpoint");
  HttpEndpoint endpoint;
  endpoint.base_url = url;
  endpoint.credentials_env = config.credentials_env;
  endpoint.retry.max_attempts = config.max_attempts;
  endpoint.retry.initial_backoff = std::chrono::milliseconds{config.initial_backoff_ms};
  return endpoint;
}

std::string rng_text(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

std::vector<double> bertscore_f1_pair(const std::string& a, const std::string& b, const std::string& reference,
                                      EmbeddingProvider& embedder) {
  const auto ref = tokenize(reference);
  return {bertscore(tokenize(a), ref, embedder).f1, bertscore(tokenize(b), ref, embedder).f1};
}

void scale_params(ModelParams& params, double factor) {
  for (auto& view : params.parameters()) {
    for (double& v : view.values) v *= factor;
  }
}

void add_params(ModelParams& target, const ModelParams& source) {
  auto dst = target.parameters();
  const auto src = std::as_const(source).parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].values.size(); ++j) dst[i].values[j] += src[i].values[j];
  }
}

std::vector<std::size_t> deleted_indices(const PromptState& state) {
  std::vector<std::size_t> out;
  out.reserve(state.deletions.size());
  for (const auto& d : state.deletions) out.push_back(d.original_index);
  return out;
}

// Episode-level failures that are logged and skipped rather than fatal.
template <typename Fn>
bool run_guarded(Fn&& fn, std::string& reason) {
  try {
    fn();
    return true;
  } catch (const PromptTooShortError& e) {
    reason = std::string("prompt-too-short: ") + e.what();
  } catch (const TransportError& e) {
    reason = std::string("transport: ") + e.what();
  } catch (const NonFiniteGradientError& e) {
    reason = std::string("non-finite-gradient: ") + e.what();
  } catch (const VocabularyError& e) {
    reason = std::string("vocabulary: ") + e.what();
  }
  return false;
}

void check_abort_fraction(const RunConfig& config, std::size_t aborted, std::size_t total, const std::string& what) {
  if (total == 0) return;
  if (static_cast<double>(aborted) > config.max_abort_fraction * static_cast<double>(total)) {
    throw Error(what + ": " + std::to_string(aborted) + " of " + std::to_string(total) +
                " episodes aborted, run stopped");
  }
}

PromptToggles toggles_of(const RunConfig& config) { return {config.ablation.SP, config.ablation.PP}; }

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

json metrics_json(const MetricsReport& m) {
  return {{"bleu4", 100.0 * m.bleu4},
          {"rougeL", 100.0 * m.rougeL_f},
          {"rouge1", 100.0 * m.rouge1_f},
          {"rouge2", 100.0 * m.rouge2_f},
          {"bertscore_p", 100.0 * m.bertscore_precision},
          {"bertscore_r", 100.0 * m.bertscore_recall},
          {"bertscore_f1", 100.0 * m.bertscore_f1}};
}

std::string metric_cells(const MetricsReport& m) {
  const double values[] = {m.bleu4, m.rougeL_f, m.rouge1_f, m.rouge2_f,
                           m.bertscore_precision, m.bertscore_recall, m.bertscore_f1};
  std::string out;
  for (double v : values) {
    std::string cell = fmt2(100.0 * v);
    out += std::string(cell.size() < 9 ? 9 - cell.size() : 1, ' ') + cell;
  }
  return out;
}

const char* kMetricHeader = "   BLEU-4  ROUGE-L  ROUGE-1  ROUGE-2     BS-P     BS-R    BS-F1";

std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

MetricsReport mean_reports(std::span<const MetricsReport> reports) {
  MetricsReport out;
  if (reports.empty()) return out;
  for (const auto& r : reports) {
    out.bleu4 += r.bleu4;
    out.rouge1_f += r.rouge1_f;
    out.rouge2_f += r.rouge2_f;
    out.rougeL_f += r.rougeL_f;
    out.bertscore_precision += r.bertscore_precision;
    out.bertscore_recall += r.bertscore_recall;
    out.bertscore_f1 += r.bertscore_f1;
  }
  const double n = static_cast<double>(reports.size());
  out.bleu4 /= n;
  out.rouge1_f /= n;
  out.rouge2_f /= n;
  out.rougeL_f /= n;
  out.bertscore_precision /= n;
  out.bertscore_recall /= n;
  out.bertscore_f1 /= n;
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Runs the full pipeline once per repeat (seed, seed + 1, ...) and averages
// the "after" rows.
std::pair<MetricsReport, std::vector<InferenceRecord>> repeated_after(const RunConfig& config,
                                                                      const fs::path& out_dir) {
  std::vector<MetricsReport> after;
  std::vector<InferenceRecord> first;
  for (std::size_t r = 0; r < config.repeats; ++r) {
    RunConfig run = config;
    run.seed = config.seed + r;
    run.repeats = 1;
    const fs::path dir = config.repeats == 1 ? out_dir : out_dir / ("seed-" + std::to_string(run.seed));
    PipelineOutputs outputs = run_pipeline(run, dir);
    after.push_back(outputs.report.back().metrics);
    if (r == 0) first = std::move(outputs.inference);
  }
  return {mean_reports(after), std::move(first)};
}

}  // namespace

void RunLog::write(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& entry : entries_) out << entry.dump() << '\n';
}

RunLog RunLog::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  RunLog log;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      log.append(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("run log: ") + e.what(), number);
    }
  }
  return log;
}

std::vector<std::string> noise_vocabulary(std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "<noise-%02zu>", i + 1);
    out.emplace_back(buf);
  }
  return out;
}

Experiment::Experiment(RunConfig config, RequestLogger logger) : config_(std::move(config)) {
  config_.validate();
  if (config_.records_path.empty()) {
    dataset_ = synth_generate(config_.synth, config_.seed);
  } else {
    dataset_ = load_dataset(config_.records_path, config_.meta_path);
  }
  split_ = split_by_date(dataset_, {parse_date(config_.train_before), parse_date(config_.val_before)});
  if (split_.train.empty()) throw SchemaError("train split is empty");

  normalization_ = dataset_.normalization ? *dataset_.normalization : fit_normalization(split_.train);
  for (const auto& r : split_.train) target_visits_ = std::max(target_visits_, r.visit_count());
  for (const auto& r : dataset_.records) flats_[r.subject_id] = pad_and_flatten(r, target_visits_, normalization_);
  for (const auto& r : split_.train) train_labels_[r.subject_id] = r.label;

  noise_ = noise_vocabulary(config_.noise_tokens);

  if (config_.embedder == "hash") {
    embedder_ = std::make_shared<HashEmbedder>(config_.embedding_dim, config_.embedding_seed);
  } else if (config_.embedder == "remote") {
    embedder_ = std::make_shared<CachingEmbeddingProvider>(
        std::make_shared<HttpEmbeddingProvider>(make_endpoint(config_, config_.embed_endpoint), logger));
  } else {
    throw SchemaError("unknown embedder '" + config_.embedder + "'");
  }

  std::shared_ptr<ResponseModel> responder;
  if (config_.responder == "mock") {
    MockResponderConfig mock;
    mock.noise_vocab.insert(noise_.begin(), noise_.end());
    mock.max_tokens = config_.mock_max_tokens;
    responder = std::make_shared<MockResponder>(mock);
  } else if (config_.responder == "constant") {
    responder = std::make_shared<ConstantResponder>(config_.constant_text);
  } else if (config_.responder == "remote") {
    responder = std::make_shared<HttpResponseModel>(make_endpoint(config_, config_.respond_endpoint), logger);
  } else {
    throw SchemaError("unknown responder '" + config_.responder + "'");
  }
  responder_ = std::make_shared<CachingResponseModel>(std::move(responder));

  switch (config_.predictor) {
    case PredictorKind::kOracle:
      predictor_ = std::make_unique<OraclePredictor>();
      break;
    case PredictorKind::kKnn: {
      LabeledPool pool;
      for (const auto& r : split_.train) {
        pool.entries.push_back({r.subject_id, flats_.at(r.subject_id)});
        pool.labels.push_back(r.label);
      }
      predictor_ = std::make_unique<KnnPredictor>(std::move(pool), config_.predictor_k);
      break;
    }
    case PredictorKind::kRemote: {
      auto model = std::make_shared<CachingResponseModel>(
          std::make_shared<HttpResponseModel>(make_endpoint(config_, config_.predictor_endpoint), logger));
      predictor_ = std::make_unique<RemotePredictor>(model, dataset_.metric_names, dataset_.label_vocab);
      break;
    }
  }
  // Labels are predicted once; the first remote call doubles as the ping.
  for (const auto& r : dataset_.records) predictions_[r.subject_id] = predictor_->predict(r, flats_.at(r.subject_id));
}

const std::vector<double>& Experiment::flat(const std::string& subject_id) const {
  const auto it = flats_.find(subject_id);
  if (it == flats_.end()) throw SchemaError("unknown subject '" + subject_id + "'");
  return it->second;
}

const std::string& Experiment::predicted_label(const std::string& subject_id) const {
  const auto it = predictions_.find(subject_id);
  if (it == predictions_.end()) throw SchemaError("unknown subject '" + subject_id + "'");
  return it->second;
}

const std::string& Experiment::train_label(const std::string& subject_id) const {
  const auto it = train_labels_.find(subject_id);
  if (it == train_labels_.end()) throw SchemaError("'" + subject_id + "' is not a train subject");
  return it->second;
}

Experiment::Episode Experiment::prepare_episode(const SubjectRecord& record, std::span<const double> encoding,
                                                std::span<const PoolEntry> train_pool,
                                                const PromptToggles& toggles) {
  Episode episode;
  episode.neighbors = top_k_similar(encoding, train_pool, config_.k, record.subject_id);
  std::vector<std::string> labels;
  labels.reserve(episode.neighbors.size());
  for (const auto& nb : episode.neighbors) labels.push_back(train_label(nb.id));

  const std::size_t budget = config_.ablation.PR ? config_.n : 0;
  PromptState s0 = build_coarse_prompt(summarize(record, dataset_.metric_names), predicted_label(record.subject_id),
                                       labels, budget, toggles);
  if (noise_.empty()) {
    episode.reference = record.reference_response.value_or("");
    episode.s0 = std::move(s0);
  } else {
    episode.reference = responder_->respond(s0.text());
    Rng noise_rng(config_.seed ^ kNoiseStream ^ stable_hash(record.subject_id));
    episode.s0 = inject_noise(s0, noise_, noise_rng);
  }
  return episode;
}

Checkpoint initial_checkpoint(Experiment& experiment) {
  Rng rng(experiment.config().seed);
  const auto& config = experiment.config();
  Checkpoint ck;
  const std::size_t input_dim = experiment.target_visits() * experiment.dataset().metric_count();
  ck.params.encoder = make_encoder(input_dim, config.encoder, rng);
  ck.embedding_dim = experiment.embedder().dimension();
  ck.params.policy = make_policy(ck.embedding_dim, ck.params.encoder.output_dim(), config.policy, rng);
  ck.adam = make_adam(ck.params, AdamConfig{config.learning_rate});
  ck.rng_state = rng_text(rng);
  ck.template_version = std::string(template_version());
  ck.target_visits = experiment.target_visits();
  ck.normalization = experiment.normalization();
  ck.epoch = 0;
  return ck;
}

std::vector<PoolEntry> encode_train_pool(const Experiment& experiment, const Mlp& encoder) {
  std::vector<PoolEntry> pool;
  pool.reserve(experiment.split().train.size());
  for (const auto& r : experiment.split().train) {
    pool.push_back({r.subject_id, encode(encoder, experiment.flat(r.subject_id), Mode::kEval)});
  }
  return pool;
}

namespace {

// Mean greedy-rollout reward over `subjects`; nullopt when nothing completed.
std::optional<double> validation_reward(Experiment& ex, const ModelParams& params,
                                        std::span<const SubjectRecord> subjects) {
  if (subjects.empty()) return std::nullopt;
  const auto pool = encode_train_pool(ex, params.encoder);
  const auto toggles = toggles_of(ex.config());
  double total = 0.0;
  std::size_t done = 0;
  Rng unused(0);
  for (const auto& record : subjects) {
    std::string reason;
    run_guarded(
        [&] {
          const auto encoding = encode(params.encoder, ex.flat(record.subject_id), Mode::kEval);
          auto episode = ex.prepare_episode(record, encoding, pool, toggles);
          if (episode.reference.empty()) return;
          const auto result = rollout(episode.s0, encoding, ex.config().n, params.policy, ex.embedder(), unused,
                                      {ActionMode::kGreedy, Mode::kEval, false});
          total += compute_reward(ex.responder().respond(result.final_state.text()),
                                  ex.responder().respond(episode.s0.text()), episode.reference, ex.embedder());
          ++done;
        },
        reason);
  }
  if (done == 0) return std::nullopt;
  return total / static_cast<double>(done);
}

}  // namespace

TrainResult train(Experiment& ex) {
  const RunConfig& config = ex.config();
  TrainResult result;
  RunLog& log = result.log;
  Checkpoint current = initial_checkpoint(ex);
  Rng run_rng;
  {
    std::istringstream in(current.rng_state);
    in >> run_rng;
  }

  log.append({{"type", "config"},
              {"config", config_to_json(config)},
              {"template_version", std::string(template_version())},
              {"predictor", ex.predictor().kind()},
              {"embedder", ex.embedder().id()},
              {"responder", ex.responder().id()},
              {"target_visits", ex.target_visits()},
              {"split", {{"train", ex.split().train.size()}, {"val", ex.split().val.size()},
                         {"test", ex.split().test.size()}}}});

  if (!config.ablation.PR) {
    log.append({{"type", "checkpoint"}, {"epoch", 0}, {"selection", "initialization"}});
    result.checkpoint = std::move(current);
    return result;
  }

  const auto toggles = toggles_of(config);
  std::optional<Checkpoint> best;
  double best_val = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(ex.split().train.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto pool = encode_train_pool(ex, current.params.encoder);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), run_rng);

    const bool per_epoch = config.update_granularity == UpdateGranularity::kEpoch;
    ModelParams epoch_grads;
    if (per_epoch) epoch_grads = current.params.zeros_like();
    double sum_reward = 0.0, sum_f1_refined = 0.0, sum_f1_initial = 0.0;
    std::size_t completed = 0, aborted = 0;

    for (std::size_t idx : order) {
      const SubjectRecord& record = ex.split().train[idx];
      const std::uint64_t episode_seed = run_rng();
      std::string reason;
      const bool ok = run_guarded(
          [&] {
            Rng rng(episode_seed);
            const auto& params = current.params;
            const auto& flat = ex.flat(record.subject_id);
            const auto eval_encoding = encode(params.encoder, flat, Mode::kEval);
            auto episode = ex.prepare_episode(record, eval_encoding, pool, toggles);
            if (episode.reference.empty()) {
              throw SchemaError("train subject '" + record.subject_id + "' has no reference response");
            }
            Mlp::Cache encoder_cache;
            const auto encoding = encode(params.encoder, flat, Mode::kTrain, &rng, &encoder_cache);
            auto rolled = rollout(episode.s0, encoding, config.n, params.policy, ex.embedder(), rng,
                                  {ActionMode::kSample, Mode::kTrain, true});
            const std::string refined = ex.responder().respond(rolled.final_state.text());
            const std::string initial = ex.responder().respond(episode.s0.text());
            const double reward = compute_reward(refined, initial, episode.reference, ex.embedder());
            rolled.trajectory.reward = reward;
            rolled.trajectory.seed = episode_seed;

            if (per_epoch) {
              const auto f1 = bertscore_f1_pair(refined, initial, episode.reference, ex.embedder());
              ModelParams grads = params.zeros_like();
              accumulate_log_prob_gradient(params, encoder_cache, rolled.records, 1.0, grads);
              add_params(epoch_grads, grads);
              sum_f1_refined += f1[0];
              sum_f1_initial += f1[1];
            } else {
              ModelParams grads = params.zeros_like();
              accumulate_log_prob_gradient(params, encoder_cache, rolled.records, -reward, grads);
              adam_update(current.params, grads, current.adam);
            }
            sum_reward += reward;
            ++completed;
            log.append({{"type", "episode"},
                        {"phase", "train"},
                        {"epoch", epoch},
                        {"subject_id", record.subject_id},
                        {"seed", episode_seed},
                        {"reward", reward},
                        {"tokens_s0", episode.s0.tokens.size()},
                        {"deleted", deleted_indices(rolled.final_state)}});
          },
          reason);
      if (!ok) {
        ++aborted;
        log.append({{"type", "episode_aborted"},
                    {"phase", "train"},
                    {"epoch", epoch},
                    {"subject_id", record.subject_id},
                    {"reason", reason}});
      }
    }
    check_abort_fraction(config, aborted, order.size(), "epoch " + std::to_string(epoch));

    if (per_epoch && completed > 0) {
      const double n = static_cast<double>(completed);
      const double epoch_reward = sum_f1_refined / n - sum_f1_initial / n;
      scale_params(epoch_grads, -epoch_reward);
      adam_update(current.params, epoch_grads, current.adam);
    }

    const double mean_reward = completed ? sum_reward / static_cast<double>(completed) : 0.0;
    result.epoch_mean_reward.push_back(mean_reward);
    const auto val = validation_reward(ex, current.params, ex.split().val);
    json entry = {{"type", "epoch"},
                  {"epoch", epoch},
                  {"episodes", completed},
                  {"aborted", aborted},
                  {"mean_reward", mean_reward},
                  {"val_reward", nullptr}};
    if (val) entry["val_reward"] = *val;
    log.append(std::move(entry));

    current.epoch = epoch;
    current.rng_state = rng_text(run_rng);
    if (val && *val > best_val) {
      best_val = *val;
      best = current;
    }
  }

  if (best) {
    log.append({{"type", "checkpoint"}, {"epoch", best->epoch}, {"selection", "best-validation"},
                {"val_reward", best_val}});
    result.checkpoint = std::move(*best);
  } else {
    log.append({{"type", "checkpoint"}, {"epoch", current.epoch}, {"selection", "final-epoch"}});
    result.checkpoint = std::move(current);
  }
  return result;
}

std::vector<InferenceRecord> infer(Experiment& ex, const Checkpoint& ck, std::span<const SubjectRecord> subjects,
                                   RunLog* log) {
  const RunConfig& config = ex.config();
  if (ck.template_version != template_version()) {
    throw SchemaError("checkpoint template version " + ck.template_version + " does not match " +
                      std::string(template_version()));
  }
  if (ck.embedding_dim != ex.embedder().dimension()) throw DimensionError("checkpoint embedding dimension mismatch");
  if (ck.target_visits != ex.target_visits() ||
      ck.params.encoder.input_dim() != ex.target_visits() * ex.dataset().metric_count()) {
    throw DimensionError("checkpoint encoder input does not match the dataset");
  }

  const auto pool = encode_train_pool(ex, ck.params.encoder);
  const auto toggles = toggles_of(config);
  const bool want_plain = config.baseline != BaselinePrompt::kCoarse;
  Rng rng(config.seed ^ kInferStream);
  std::vector<InferenceRecord> out;
  std::size_t aborted = 0;

  for (const auto& record : subjects) {
    std::string reason;
    const bool ok = run_guarded(
        [&] {
          const auto encoding = encode(ck.params.encoder, ex.flat(record.subject_id), Mode::kEval);
          auto episode = ex.prepare_episode(record, encoding, pool, toggles);
          InferenceRecord rec;
          rec.subject_id = record.subject_id;
          rec.predicted_label = ex.predicted_label(record.subject_id);
          for (const auto& nb : episode.neighbors) rec.neighbors.push_back(nb.id);
          rec.coarse_prompt = episode.s0.text();
          rec.reference = episode.reference;
          PromptState refined = episode.s0;
          if (config.ablation.PR) {
            refined = rollout(episode.s0, encoding, config.n, ck.params.policy, ex.embedder(), rng,
                              {config.inference_action_mode, Mode::kEval, false})
                          .final_state;
          }
          rec.refined_prompt = refined.text();
          rec.deleted = deleted_indices(refined);
          if (want_plain) {
            rec.plain_prompt = build_eval_prompt(record, ex.dataset().metric_names);
            rec.response_plain = ex.responder().respond(rec.plain_prompt);
          }
          rec.response_coarse = ex.responder().respond(rec.coarse_prompt);
          rec.response_refined = ex.responder().respond(rec.refined_prompt);
          if (log) {
            log->append({{"type", "episode"},
                         {"phase", "infer"},
                         {"subject_id", rec.subject_id},
                         {"tokens_s0", episode.s0.tokens.size()},
                         {"deleted", rec.deleted}});
          }
          out.push_back(std::move(rec));
        },
        reason);
    if (!ok) {
      ++aborted;
      if (log) {
        log->append({{"type", "episode_aborted"}, {"phase", "infer"}, {"subject_id", record.subject_id},
                     {"reason", reason}});
      }
    }
  }
  check_abort_fraction(config, aborted, subjects.size(), "inference");
  return out;
}

void write_inference(const std::vector<InferenceRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) {
    json j = {{"subject_id", r.subject_id},           {"predicted_label", r.predicted_label},
              {"neighbors", r.neighbors},             {"plain_prompt", r.plain_prompt},
              {"coarse_prompt", r.coarse_prompt},     {"refined_prompt", r.refined_prompt},
              {"response_plain", r.response_plain},   {"response_coarse", r.response_coarse},
              {"response_refined", r.response_refined}, {"reference", r.reference},
              {"deleted", r.deleted}};
    out << j.dump() << '\n';
  }
}

std::vector<InferenceRecord> read_inference(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<InferenceRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      InferenceRecord r;
      j.at("subject_id").get_to(r.subject_id);
      j.at("predicted_label").get_to(r.predicted_label);
      j.at("neighbors").get_to(r.neighbors);
      j.at("plain_prompt").get_to(r.plain_prompt);
      j.at("coarse_prompt").get_to(r.coarse_prompt);
      j.at("refined_prompt").get_to(r.refined_prompt);
      j.at("response_plain").get_to(r.response_plain);
      j.at("response_coarse").get_to(r.response_coarse);
      j.at("response_refined").get_to(r.response_refined);
      j.at("reference").get_to(r.reference);
      j.at("deleted").get_to(r.deleted);
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("inference record: ") + e.what(), number);
    }
  }
  return out;
}

std::vector<ReportRow> evaluate_run(std::span<const InferenceRecord> records, EmbeddingProvider& embedder,
                                    const std::string& model, BaselinePrompt baseline, const BleuOptions& bleu) {
  std::vector<std::string> refs, plain, coarse, refined;
  for (const auto& r : records) {
    if (r.reference.empty()) continue;
    refs.push_back(r.reference);
    plain.push_back(r.response_plain);
    coarse.push_back(r.response_coarse);
    refined.push_back(r.response_refined);
  }
  if (refs.empty()) throw SchemaError("no inference record has a reference response");

  std::vector<ReportRow> rows;
  if (baseline != BaselinePrompt::kCoarse) {
    rows.push_back({model, "before (plain prompt)", corpus_mean(plain, refs, embedder, bleu)});
  }
  if (baseline != BaselinePrompt::kPlain) {
    rows.push_back({model, "before (coarse prompt)", corpus_mean(coarse, refs, embedder, bleu)});
  }
  rows.push_back({model, "after", corpus_mean(refined, refs, embedder, bleu)});
  return rows;
}

std::string format_report(std::span<const ReportRow> rows) {
  std::size_t model_width = 5;
  for (const auto& r : rows) model_width = std::max(model_width, r.model.size());
  std::string out = pad_right("Model", model_width + 2) + pad_right("Prompt", 24) + kMetricHeader + "\n";
  for (const auto& r : rows) {
    out += pad_right(r.model, model_width + 2) + pad_right(r.prompt, 24) + metric_cells(r.metrics) + "\n";
  }
  return out;
}

json report_to_json(std::span<const ReportRow> rows) {
  json out = json::array();
  for (const auto& r : rows) out.push_back({{"model", r.model}, {"prompt", r.prompt}, {"metrics", metrics_json(r.metrics)}});
  return out;
}

PipelineOutputs run_pipeline(const RunConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  RequestLogger logger;
  const bool remote = config.embedder == "remote" || config.responder == "remote" ||
                      config.predictor == PredictorKind::kRemote;
  std::shared_ptr<std::ofstream> request_log;
  if (remote) {
    request_log = std::make_shared<std::ofstream>(out_dir / "requests.jsonl", std::ios::binary);
    logger = [request_log](const json& entry) { *request_log << entry.dump() << '\n'; };
  }
  Experiment ex(config, logger);
  PipelineOutputs outputs;
  outputs.training = train(ex);
  save_checkpoint(outputs.training.checkpoint, out_dir / "checkpoint.bin");
  outputs.training.log.append({{"type", "checkpoint_file"}, {"path", "checkpoint.bin"}});

  const auto& subjects = ex.split().test.empty() ? ex.split().val : ex.split().test;
  if (subjects.empty()) throw SchemaError("no val or test subjects to run inference on");
  outputs.inference = infer(ex, outputs.training.checkpoint, subjects, &outputs.training.log);
  outputs.training.log.write(out_dir / "runlog.jsonl");
  write_inference(outputs.inference, out_dir / "inference.jsonl");

  outputs.report = evaluate_run(outputs.inference, ex.embedder(), ex.responder().id(), config.baseline,
                                BleuOptions{config.bleu_smoothing});
  write_text(out_dir / "report.txt", format_report(outputs.report));
  write_text(out_dir / "report.json", report_to_json(outputs.report).dump(2) + "\n");
  if (config.ablation.PR) {
    write_text(out_dir / "heatmap.csv", heatmap_csv(heatmap(outputs.training.log, config.heatmap_columns)));
  }
  return outputs;
}

std::vector<AblationRow> ablate(const RunConfig& config, const fs::path& out_dir) {
  struct Variant {
    const char* id;
    AblationToggles toggles;
  };
  const Variant variants[] = {
      {"1", {false, true, true}}, {"2", {true, false, true}}, {"3", {true, true, false}}, {"PMLM", {true, true, true}}};
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    RunConfig run = config;
    run.ablation = v.toggles;
    auto [metrics, inference] = repeated_after(run, out_dir / "ablation" / v.id);
    rows.push_back({v.id, v.toggles, metrics, std::move(inference)});
  }
  return rows;
}

std::string format_ablation(std::span<const AblationRow> rows) {
  std::string out = std::string("ID    SP   PP   PR ") + kMetricHeader + "\n";
  const auto mark = [](bool on) { return on ? std::string("on   ") : std::string("off  "); };
  for (const auto& r : rows) {
    out += pad_right(r.id, 6) + mark(r.toggles.SP) + mark(r.toggles.PP) + mark(r.toggles.PR).substr(0, 3) +
           metric_cells(r.metrics) + "\n";
  }
  return out;
}

json ablation_to_json(std::span<const AblationRow> rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"id", r.id},
                   {"SP", r.toggles.SP},
                   {"PP", r.toggles.PP},
                   {"PR", r.toggles.PR},
                   {"metrics", metrics_json(r.metrics)}});
  }
  return out;
}

std::vector<SweepPoint> sweep(const RunConfig& config, const fs::path& out_dir) {
  std::vector<SweepPoint> points;
  for (std::size_t k : config.sweep_k) {
    for (std::size_t n : config.sweep_n) {
      SweepPoint point;
      point.k = k;
      point.n = n;
      RunConfig run = config;
      run.k = k;
      run.n = n;
      try {
        point.metrics = repeated_after(run, out_dir / "sweep" / ("k" + std::to_string(k) + "_n" + std::to_string(n))).first;
      } catch (const Error& e) {
        point.skipped = true;
        point.reason = e.what();
      }
      points.push_back(std::move(point));
    }
  }
  return points;
}

std::string format_sweep(std::span<const SweepPoint> points) {
  std::string out = "    k     n     BS-P     BS-R    BS-F1  status\n";
  for (const auto& p : points) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%5zu %5zu", p.k, p.n);
    out += buf;
    if (p.skipped) {
      out += "        -        -        -  skipped: " + p.reason + "\n";
    } else {
      for (double v : {p.metrics.bertscore_precision, p.metrics.bertscore_recall, p.metrics.bertscore_f1}) {
        std::snprintf(buf, sizeof(buf), " %8.2f", 100.0 * v);
        out += buf;
      }
      out += "  ok\n";
    }
  }
  return out;
}

json sweep_to_json(std::span<const SweepPoint> points) {
  json out = json::array();
  for (const auto& p : points) {
    json j = {{"k", p.k}, {"n", p.n}, {"skipped", p.skipped}};
    if (p.skipped) {
      j["reason"] = p.reason;
    } else {
      j["metrics"] = metrics_json(p.metrics);
    }
    out.push_back(std::move(j));
  }
  return out;
}

Matrix heatmap(const RunLog& log, std::size_t columns) {
  if (columns == 0) throw SchemaError("heatmap needs at least one column");
  std::vector<std::vector<std::size_t>> episodes;
  std::size_t rows = 0;
  for (const auto& entry : log.entries()) {
    if (entry.value("type", "") != "episode" || entry.value("phase", "") != "infer") continue;
    auto deleted = entry.at("deleted").get<std::vector<std::size_t>>();
    if (deleted.empty()) continue;
    rows = std::max(rows, deleted.size());
    episodes.push_back(std::move(deleted));
  }
  if (episodes.empty()) throw SchemaError("run log has no inference deletions");
  Matrix counts(rows, columns);
  for (const auto& deleted : episodes) {
    for (std::size_t step = 0; step < deleted.size(); ++step) {
      if (deleted[step] < columns) counts(step, deleted[step]) += 1.0;
    }
  }
  return counts;
}

std::string heatmap_csv(const Matrix& counts) {
  std::string out;
  for (std::size_t i = 0; i < counts.rows; ++i) {
    for (std::size_t j = 0; j < counts.cols; ++j) {
      if (j) out += ',';
      out += std::to_string(static_cast<long long>(counts(i, j)));
    }
    out += '\n';
  }
  return out;
}

double mean_uniform_reward(Experiment& ex, std::size_t passes) {
  const Checkpoint init = initial_checkpoint(ex);
  const auto pool = encode_train_pool(ex, init.params.encoder);
  const auto toggles = toggles_of(ex.config());
  Rng rng(ex.config().seed ^ kUniformStream);
  double total = 0.0;
  std::size_t done = 0;
  for (std::size_t pass = 0; pass < passes; ++pass) {
    for (const auto& record : ex.split().train) {
      std::string reason;
      run_guarded(
          [&] {
            const auto encoding = encode(init.params.encoder, ex.flat(record.subject_id), Mode::kEval);
            auto episode = ex.prepare_episode(record, encoding, pool, toggles);
            PromptState state = episode.s0;
            for (std::size_t step = 0; step < ex.config().n; ++step) {
              std::uniform_int_distribution<std::size_t> pick(0, state.tokens.size() - 1);
              state = apply_deletion(state, pick(rng));
            }
            total += compute_reward(ex.responder().respond(state.text()), ex.responder().respond(episode.s0.text()),
                                    episode.reference, ex.embedder());
            ++done;
          },
          reason);
    }
  }
  if (done == 0) throw Error("no uniform-policy episode completed");
  return total / static_cast<double>(done);
}

NoiseMass measure_noise_mass(Experiment& ex, const Checkpoint& ck, std::span<const SubjectRecord> subjects) {
  const std::set<std::string> noise(ex.noise().begin(), ex.noise().end());
  const auto pool = encode_train_pool(ex, ck.params.encoder);
  const auto toggles = toggles_of(ex.config());
  NoiseMass mass;
  for (const auto& record : subjects) {
    std::string reason;
    run_guarded(
        [&] {
          const auto encoding = encode(ck.params.encoder, ex.flat(record.subject_id), Mode::kEval);
          auto episode = ex.prepare_episode(record, encoding, pool, toggles);
          const Matrix embeddings = ex.embedder().embed_tokens(episode.s0.tokens);
          const auto mean = mean_pool(embeddings);
          const auto probs = deletion_distribution(embeddings, mean, encoding, ck.params.policy, Mode::kEval);
          double policy = 0.0;
          std::size_t count = 0;
          for (std::size_t t = 0; t < probs.size(); ++t) {
            if (noise.contains(episode.s0.tokens[t])) {
              policy += probs[t];
              ++count;
            }
          }
          mass.policy += policy;
          mass.uniform += static_cast<double>(count) / static_cast<double>(probs.size());
          ++mass.subjects;
        },
        reason);
  }
  if (mass.subjects == 0) throw Error("no subject produced a refinable prompt");
  mass.policy /= static_cast<double>(mass.subjects);
  mass.uniform /= static_cast<double>(mass.subjects);
  return mass;
}

}  // namespace perprompt
