#pragma once

// Label predictors: oracle (stored label), k-nearest-neighbour vote, and a
// remote model queried with a templated prompt.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "perprompt/dataset.hpp"
#include "perprompt/retrieval.hpp"

namespace perprompt {

class ResponseModel;

// Training subjects available to a predictor: their padded vectors and labels.
struct LabeledPool {
  std::vector<PoolEntry> entries;
  std::vector<std::string> labels;  // parallel to entries
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string kind() const = 0;
  // `flat` is the subject's padded vector; predictors that do not use it ignore it.
  virtual std::string predict(const SubjectRecord& record, std::span<const double> flat) const = 0;
};

// Returns the stored label. Test fixture only.
class OraclePredictor final : public Predictor {
 public:
  std::string kind() const override { return "oracle"; }
  std::string predict(const SubjectRecord& record, std::span<const double> flat) const override;
};

// Majority vote over the labels of the k most similar pool subjects. Vote ties
// go to the label with the highest summed similarity, then the smallest label.
class KnnPredictor final : public Predictor {
 public:
  KnnPredictor(LabeledPool pool, std::size_t k);
  std::string kind() const override { return "knn"; }
  std::string predict(const SubjectRecord& record, std::span<const double> flat) const override;

 private:
  LabeledPool pool_;
  std::size_t k_;
};

// Sends the predictor prompt to a response model and requires an exact
// (whitespace-trimmed) vocabulary match.
class RemotePredictor final : public Predictor {
 public:
  RemotePredictor(std::shared_ptr<ResponseModel> model, std::vector<std::string> metric_names,
                  std::vector<std::string> label_vocab);
  std::string kind() const override { return "remote"; }
  std::string predict(const SubjectRecord& record, std::span<const double> flat) const override;

 private:
  std::shared_ptr<ResponseModel> model_;
  std::vector<std::string> metric_names_;
  std::vector<std::string> label_vocab_;
};

// Vote over a neighbour list (exposed for tests).
std::string majority_vote(const NeighborSet& neighbors, const LabeledPool& pool);

struct F1Scores {
  double micro = 0.0;
  double macro = 0.0;
};

// Single-label multiclass F1. Classes enter the macro average when they occur
// in the gold labels or the predictions.
F1Scores f1_scores(std::span<const std::string> gold, std::span<const std::string> predicted);

// Runs `predictor` over `records` and scores it against their labels.
F1Scores evaluate_predictor(const Predictor& predictor, std::span<const SubjectRecord> records,
                            std::span<const std::vector<double>> flats);

}  // namespace perprompt
