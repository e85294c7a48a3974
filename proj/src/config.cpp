#include "perprompt/config.hpp"

#include <fstream>
#include <set>

#include "perprompt/errors.hpp"

namespace perprompt {

using nlohmann::json;

std::string to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::kOracle:
      return "oracle";
    case PredictorKind::kRemote:
      return "remote";
    case PredictorKind::kKnn:
      break;
  }
  return "knn";
}

std::string to_string(UpdateGranularity granularity) {
  return granularity == UpdateGranularity::kEpoch ? "epoch" : "episode";
}

std::string to_string(ActionMode mode) { return mode == ActionMode::kSample ? "sample" : "greedy"; }

std::string to_string(BaselinePrompt baseline) {
  switch (baseline) {
    case BaselinePrompt::kPlain:
      return "plain";
    case BaselinePrompt::kCoarse:
      return "coarse";
    case BaselinePrompt::kBoth:
      break;
  }
  return "both";
}

namespace {

// Reads keys of one JSON object, rejecting any key that is never read.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ParseError(where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ParseError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ParseError("unknown config key " + where_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename Enum>
Enum parse_enum(const std::string& text, std::initializer_list<std::pair<const char*, Enum>> options,
                const char* key) {
  for (const auto& [name, value] : options) {
    if (text == name) return value;
  }
  throw ParseError(std::string("invalid value '") + text + "' for " + key);
}

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "config");
  r.get("records_path", c.records_path);
  r.get("meta_path", c.meta_path);
  if (const json* synth = r.child("synth")) {
    Reader s(*synth, "synth");
    s.get("subjects", c.synth.subjects);
    s.get("metrics", c.synth.metrics);
    s.get("labels", c.synth.labels);
    s.get("max_visits", c.synth.max_visits);
    s.get("class_offset", c.synth.class_offset);
    s.get("noise", c.synth.noise);
    s.finish();
  }
  r.get("train_before", c.train_before);
  r.get("val_before", c.val_before);

  std::string predictor = to_string(c.predictor);
  r.get("predictor", predictor);
  c.predictor = parse_enum<PredictorKind>(
      predictor, {{"oracle", PredictorKind::kOracle}, {"knn", PredictorKind::kKnn}, {"remote", PredictorKind::kRemote}},
      "predictor");
  r.get("predictor_k", c.predictor_k);
  r.get("k", c.k);
  r.get("n", c.n);
  r.get("learning_rate", c.learning_rate);
  r.get("epochs", c.epochs);
  r.get("seed", c.seed);
  r.get("repeats", c.repeats);

  r.get("embedder", c.embedder);
  r.get("embedding_dim", c.embedding_dim);
  r.get("embedding_seed", c.embedding_seed);
  r.get("responder", c.responder);
  r.get("mock_max_tokens", c.mock_max_tokens);
  r.get("constant_text", c.constant_text);
  r.get("embed_endpoint", c.embed_endpoint);
  r.get("respond_endpoint", c.respond_endpoint);
  r.get("predictor_endpoint", c.predictor_endpoint);
  r.get("credentials_env", c.credentials_env);
  r.get("max_attempts", c.max_attempts);
  r.get("initial_backoff_ms", c.initial_backoff_ms);

  if (const json* enc = r.child("encoder")) {
    Reader e(*enc, "encoder");
    e.get("hidden", c.encoder.hidden);
    e.get("output", c.encoder.output);
    e.get("dropout", c.encoder.dropout);
    e.finish();
  }
  if (const json* pol = r.child("policy")) {
    Reader p(*pol, "policy");
    p.get("hidden", c.policy.hidden);
    p.get("dropout", c.policy.dropout);
    p.finish();
  }
  if (const json* abl = r.child("ablation")) {
    Reader a(*abl, "ablation");
    a.get("SP", c.ablation.SP);
    a.get("PP", c.ablation.PP);
    a.get("PR", c.ablation.PR);
    a.finish();
  }

  std::string granularity = to_string(c.update_granularity);
  r.get("update_granularity", granularity);
  c.update_granularity = parse_enum<UpdateGranularity>(
      granularity, {{"episode", UpdateGranularity::kEpisode}, {"epoch", UpdateGranularity::kEpoch}},
      "update_granularity");
  std::string action = to_string(c.inference_action_mode);
  r.get("inference_action_mode", action);
  c.inference_action_mode = parse_enum<ActionMode>(
      action, {{"greedy", ActionMode::kGreedy}, {"sample", ActionMode::kSample}}, "inference_action_mode");
  std::string baseline = to_string(c.baseline);
  r.get("baseline", baseline);
  c.baseline = parse_enum<BaselinePrompt>(
      baseline, {{"plain", BaselinePrompt::kPlain}, {"coarse", BaselinePrompt::kCoarse}, {"both", BaselinePrompt::kBoth}},
      "baseline");
  r.get("bleu_smoothing", c.bleu_smoothing);
  r.get("noise_tokens", c.noise_tokens);
  r.get("sweep_k", c.sweep_k);
  r.get("sweep_n", c.sweep_n);
  r.get("heatmap_columns", c.heatmap_columns);
  r.get("max_abort_fraction", c.max_abort_fraction);
  r.finish();
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  return json{
      {"records_path", c.records_path},
      {"meta_path", c.meta_path},
      {"synth",
       {{"subjects", c.synth.subjects},
        {"metrics", c.synth.metrics},
        {"labels", c.synth.labels},
        {"max_visits", c.synth.max_visits},
        {"class_offset", c.synth.class_offset},
        {"noise", c.synth.noise}}},
      {"train_before", c.train_before},
      {"val_before", c.val_before},
      {"predictor", to_string(c.predictor)},
      {"predictor_k", c.predictor_k},
      {"k", c.k},
      {"n", c.n},
      {"learning_rate", c.learning_rate},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"repeats", c.repeats},
      {"embedder", c.embedder},
      {"embedding_dim", c.embedding_dim},
      {"embedding_seed", c.embedding_seed},
      {"responder", c.responder},
      {"mock_max_tokens", c.mock_max_tokens},
      {"constant_text", c.constant_text},
      {"embed_endpoint", c.embed_endpoint},
      {"respond_endpoint", c.respond_endpoint},
      {"predictor_endpoint", c.predictor_endpoint},
      {"credentials_env", c.credentials_env},
      {"max_attempts", c.max_attempts},
      {"initial_backoff_ms", c.initial_backoff_ms},
      {"encoder", {{"hidden", c.encoder.hidden}, {"output", c.encoder.output}, {"dropout", c.encoder.dropout}}},
      {"policy", {{"hidden", c.policy.hidden}, {"dropout", c.policy.dropout}}},
      {"ablation", {{"SP", c.ablation.SP}, {"PP", c.ablation.PP}, {"PR", c.ablation.PR}}},
      {"update_granularity", to_string(c.update_granularity)},
      {"inference_action_mode", to_string(c.inference_action_mode)},
      {"baseline", to_string(c.baseline)},
      {"bleu_smoothing", c.bleu_smoothing},
      {"noise_tokens", c.noise_tokens},
      {"sweep_k", c.sweep_k},
      {"sweep_n", c.sweep_n},
      {"heatmap_columns", c.heatmap_columns},
      {"max_abort_fraction", c.max_abort_fraction},
  };
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void RunConfig::validate() const {
  if (k == 0) throw SchemaError("k must be at least 1");
  if (n == 0) throw SchemaError("n must be at least 1");
  if (predictor_k == 0) throw SchemaError("predictor_k must be at least 1");
  if (!(learning_rate >= 0.0)) throw SchemaError("learning_rate must be non-negative");
  if (repeats == 0) throw SchemaError("repeats must be at least 1");
  if (embedding_dim == 0) throw SchemaError("embedding_dim must be positive");
  if (encoder.hidden == 0 || encoder.output == 0 || policy.hidden == 0) {
    throw SchemaError("network widths must be positive");
  }
  if (records_path.empty() != meta_path.empty()) {
    throw SchemaError("records_path and meta_path must be given together");
  }
  if (embedder != "hash" && embedder != "remote") throw SchemaError("embedder must be 'hash' or 'remote'");
  if (responder != "mock" && responder != "constant" && responder != "remote") {
    throw SchemaError("responder must be 'mock', 'constant' or 'remote'");
  }
  if (embedder == "remote" && embed_endpoint.empty()) throw SchemaError("remote embedder needs embed_endpoint");
  if (responder == "remote" && respond_endpoint.empty()) throw SchemaError("remote responder needs respond_endpoint");
  if (predictor == PredictorKind::kRemote && predictor_endpoint.empty()) {
    throw SchemaError("remote predictor needs predictor_endpoint");
  }
  if (noise_tokens > 0 && responder != "mock") throw SchemaError("noise_tokens requires the mock responder");
  if (max_abort_fraction < 0.0 || max_abort_fraction > 1.0) throw SchemaError("max_abort_fraction must lie in [0, 1]");
  if (heatmap_columns == 0) throw SchemaError("heatmap_columns must be positive");
  if (!(parse_date(train_before) < parse_date(val_before))) throw SchemaError("train_before must precede val_before");
}

}  // namespace perprompt
