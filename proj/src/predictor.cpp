#include "perprompt/predictor.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "perprompt/backends.hpp"
#include "perprompt/errors.hpp"
#include "perprompt/prompt.hpp"

namespace perprompt {

std::string OraclePredictor::predict(const SubjectRecord& record, std::span<const double>) const {
  return record.label;
}

KnnPredictor::KnnPredictor(LabeledPool pool, std::size_t k) : pool_(std::move(pool)), k_(k) {
  if (k_ == 0) throw SchemaError("knn predictor needs k >= 1");
  if (pool_.entries.empty()) throw SchemaError("knn predictor needs a nonempty pool");
  if (pool_.entries.size() != pool_.labels.size()) throw DimensionError("pool labels do not match pool entries");
}

std::string majority_vote(const NeighborSet& neighbors, const LabeledPool& pool) {
  if (neighbors.empty()) throw SchemaError("cannot vote without neighbours");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pool.entries.size(); ++i) index.emplace(pool.entries[i].id, i);
  struct Tally {
    std::size_t votes = 0;
    double similarity = 0.0;
  };
  std::map<std::string, Tally> tally;
  for (const auto& nb : neighbors) {
    auto it = index.find(nb.id);
    if (it == index.end()) throw SchemaError("neighbour " + nb.id + " is not in the pool");
    Tally& t = tally[pool.labels[it->second]];
    ++t.votes;
    t.similarity += nb.score;
  }
  // std::map iterates labels in ascending order, so strict comparisons keep
  // the smallest label on a full tie.
  auto best = tally.begin();
  for (auto it = tally.begin(); it != tally.end(); ++it) {
    if (it->second.votes > best->second.votes ||
        (it->second.votes == best->second.votes && it->second.similarity > best->second.similarity)) {
      best = it;
    }
  }
  return best->first;
}

std::string KnnPredictor::predict(const SubjectRecord& record, std::span<const double> flat) const {
  const auto neighbors = top_k_similar(flat, pool_.entries, k_, record.subject_id);
  return majority_vote(neighbors, pool_);
}

RemotePredictor::RemotePredictor(std::shared_ptr<ResponseModel> model, std::vector<std::string> metric_names,
                                 std::vector<std::string> label_vocab)
    : model_(std::move(model)), metric_names_(std::move(metric_names)), label_vocab_(std::move(label_vocab)) {}

std::string RemotePredictor::predict(const SubjectRecord& record, std::span<const double>) const {
  std::string reply = model_->respond(build_predictor_prompt(record, metric_names_, label_vocab_));
  const auto first = reply.find_first_not_of(" \t\r\n");
  const auto last = reply.find_last_not_of(" \t\r\n");
  reply = first == std::string::npos ? std::string() : reply.substr(first, last - first + 1);
  if (std::find(label_vocab_.begin(), label_vocab_.end(), reply) == label_vocab_.end()) {
    throw VocabularyError("remote predictor replied '" + reply + "', which is not a vocabulary label");
  }
  return reply;
}

F1Scores f1_scores(std::span<const std::string> gold, std::span<const std::string> predicted) {
  if (gold.empty()) throw SchemaError("cannot score an empty split");
  if (gold.size() != predicted.size()) throw DimensionError("gold and predicted labels differ in length");
  std::set<std::string> classes(gold.begin(), gold.end());
  classes.insert(predicted.begin(), predicted.end());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += gold[i] == predicted[i];
  F1Scores out;
  out.micro = static_cast<double>(correct) / static_cast<double>(gold.size());
  double f1_sum = 0.0;
  for (const auto& c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool g = gold[i] == c;
      const bool p = predicted[i] == c;
      tp += g && p;
      fp += !g && p;
      fn += g && !p;
    }
    const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    f1_sum += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  out.macro = f1_sum / static_cast<double>(classes.size());
  return out;
}

F1Scores evaluate_predictor(const Predictor& predictor, std::span<const SubjectRecord> records,
                            std::span<const std::vector<double>> flats) {
  if (records.empty()) throw SchemaError("cannot evaluate a predictor on an empty split");
  if (flats.size() != records.size()) throw DimensionError("one padded vector per record is required");
  std::vector<std::string> gold;
  std::vector<std::string> predicted;
  for (std::size_t i = 0; i < records.size(); ++i) {
    gold.push_back(records[i].label);
    predicted.push_back(predictor.predict(records[i], flats[i]));
  }
  return f1_scores(gold, predicted);
}

}  // namespace perprompt
