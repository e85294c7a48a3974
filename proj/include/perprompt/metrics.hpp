#pragma once

// Text-generation metrics over whitespace tokens and the BERTScore reward.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace perprompt {

class EmbeddingProvider;

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Harmonic mean, 0 when both inputs are 0.
double harmonic_mean(double p, double r);

struct BleuOptions {
  // Adds one to numerator and denominator of zero-overlap n-gram orders n >= 2.
  bool smoothing = false;
};

// Sentence BLEU-4: geometric mean of clipped 1..4-gram precisions times the
// brevity penalty. Zero when any precision is zero (unsmoothed) or the
// candidate is empty.
double bleu4(std::span<const std::string> candidate, std::span<const std::string> reference,
             const BleuOptions& options = {});

// Clipped n-gram overlap precision / recall / F.
PrfScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
PrfScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

// Greedy-matching BERTScore over token embeddings, without IDF weighting or
// baseline rescaling.
PrfScore bertscore(std::span<const std::string> candidate, std::span<const std::string> reference,
                   EmbeddingProvider& embedder);

// F1(refined, reference) - F1(initial, reference).
double compute_reward(const std::string& refined_response, const std::string& initial_response,
                      const std::string& reference, EmbeddingProvider& embedder);

struct MetricsReport {
  double bleu4 = 0.0;
  double rouge1_f = 0.0;
  double rouge2_f = 0.0;
  double rougeL_f = 0.0;
  double bertscore_precision = 0.0;
  double bertscore_recall = 0.0;
  double bertscore_f1 = 0.0;
};

// All metrics for one candidate / reference pair.
MetricsReport score_pair(const std::string& candidate, const std::string& reference, EmbeddingProvider& embedder,
                         const BleuOptions& bleu = {});

// Mean of each metric over aligned pairs.
MetricsReport corpus_mean(std::span<const std::string> candidates, std::span<const std::string> references,
                          EmbeddingProvider& embedder, const BleuOptions& bleu = {});

}  // namespace perprompt
