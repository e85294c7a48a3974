#include "perprompt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "perprompt/backends.hpp"
#include "perprompt/errors.hpp"
#include "perprompt/prompt.hpp"
#include "perprompt/retrieval.hpp"

namespace perprompt {

double harmonic_mean(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> count_ngrams(std::span<const std::string> tokens, std::size_t n) {
  std::map<Gram, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Gram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

// Clipped overlap count between candidate and reference n-grams.
std::size_t clipped_overlap(const std::map<Gram, std::size_t>& cand, const std::map<Gram, std::size_t>& ref) {
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

std::size_t total(const std::map<Gram, std::size_t>& counts) {
  std::size_t n = 0;
  for (const auto& [gram, count] : counts) n += count;
  return n;
}

}  // namespace

double bleu4(std::span<const std::string> candidate, std::span<const std::string> reference,
             const BleuOptions& options) {
  if (reference.empty()) throw SchemaError("BLEU needs a nonempty reference");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = count_ngrams(candidate, n);
    const auto ref = count_ngrams(reference, n);
    double matched = static_cast<double>(clipped_overlap(cand, ref));
    double possible = static_cast<double>(total(cand));
    if (options.smoothing && n >= 2 && matched == 0.0) {
      matched += 1.0;
      possible += 1.0;
    }
    if (matched == 0.0 || possible == 0.0) return 0.0;
    log_sum += std::log(matched / possible);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = c < r ? std::exp(1.0 - r / c) : 1.0;
  return brevity * std::exp(log_sum / 4.0);
}

PrfScore rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
  if (n == 0) throw SchemaError("ROUGE-N needs n >= 1");
  const auto cand = count_ngrams(candidate, n);
  const auto ref = count_ngrams(reference, n);
  const std::size_t cand_total = total(cand);
  const std::size_t ref_total = total(ref);
  if (cand_total == 0 || ref_total == 0) return {};
  const double overlap = static_cast<double>(clipped_overlap(cand, ref));
  PrfScore s;
  s.precision = overlap / static_cast<double>(cand_total);
  s.recall = overlap / static_cast<double>(ref_total);
  s.f1 = harmonic_mean(s.precision, s.recall);
  return s;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

PrfScore rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) return {};
  const double l = static_cast<double>(lcs_length(candidate, reference));
  PrfScore s;
  s.precision = l / static_cast<double>(candidate.size());
  s.recall = l / static_cast<double>(reference.size());
  s.f1 = harmonic_mean(s.precision, s.recall);
  return s;
}

PrfScore bertscore(std::span<const std::string> candidate, std::span<const std::string> reference,
                   EmbeddingProvider& embedder) {
  if (candidate.empty() || reference.empty()) throw SchemaError("BERTScore needs nonempty candidate and reference");
  const Matrix c = embedder.embed_tokens(candidate);
  const Matrix r = embedder.embed_tokens(reference);
  std::vector<double> best_for_cand(c.rows, -1.0);
  std::vector<double> best_for_ref(r.rows, -1.0);
  for (std::size_t i = 0; i < c.rows; ++i) {
    for (std::size_t j = 0; j < r.rows; ++j) {
      const double s = cosine_similarity(c.row(i), r.row(j));
      best_for_cand[i] = std::max(best_for_cand[i], s);
      best_for_ref[j] = std::max(best_for_ref[j], s);
    }
  }
  PrfScore out;
  for (double s : best_for_cand) out.precision += s;
  for (double s : best_for_ref) out.recall += s;
  out.precision /= static_cast<double>(c.rows);
  out.recall /= static_cast<double>(r.rows);
  out.f1 = harmonic_mean(out.precision, out.recall);
  return out;
}

double compute_reward(const std::string& refined_response, const std::string& initial_response,
                      const std::string& reference, EmbeddingProvider& embedder) {
  const auto ref = tokenize(reference);
  if (refined_response == initial_response) {
    // Identical responses score identically; skip the embedding work.
    if (tokenize(refined_response).empty() || ref.empty()) throw SchemaError("reward needs nonempty texts");
    return 0.0;
  }
  const double refined = bertscore(tokenize(refined_response), ref, embedder).f1;
  const double initial = bertscore(tokenize(initial_response), ref, embedder).f1;
  return refined - initial;
}

MetricsReport score_pair(const std::string& candidate, const std::string& reference, EmbeddingProvider& embedder,
                         const BleuOptions& bleu) {
  const auto cand = tokenize(candidate);
  const auto ref = tokenize(reference);
  MetricsReport m;
  m.bleu4 = bleu4(cand, ref, bleu);
  m.rouge1_f = rouge_n(cand, ref, 1).f1;
  m.rouge2_f = rouge_n(cand, ref, 2).f1;
  m.rougeL_f = rouge_l(cand, ref).f1;
  if (!cand.empty()) {
    const PrfScore bs = bertscore(cand, ref, embedder);
    m.bertscore_precision = bs.precision;
    m.bertscore_recall = bs.recall;
    m.bertscore_f1 = bs.f1;
  }
  return m;
}

MetricsReport corpus_mean(std::span<const std::string> candidates, std::span<const std::string> references,
                          EmbeddingProvider& embedder, const BleuOptions& bleu) {
  if (candidates.size() != references.size()) {
    throw DimensionError("evaluation needs aligned responses and references (" + std::to_string(candidates.size()) +
                         " vs " + std::to_string(references.size()) + ")");
  }
  MetricsReport mean;
  if (candidates.empty()) return mean;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const MetricsReport m = score_pair(candidates[i], references[i], embedder, bleu);
    mean.bleu4 += m.bleu4;
    mean.rouge1_f += m.rouge1_f;
    mean.rouge2_f += m.rouge2_f;
    mean.rougeL_f += m.rougeL_f;
    mean.bertscore_precision += m.bertscore_precision;
    mean.bertscore_recall += m.bertscore_recall;
    mean.bertscore_f1 += m.bertscore_f1;
  }
  const double n = static_cast<double>(candidates.size());
  mean.bleu4 /= n;
  mean.rouge1_f /= n;
  mean.rouge2_f /= n;
  mean.rougeL_f /= n;
  mean.bertscore_precision /= n;
  mean.bertscore_recall /= n;
  mean.bertscore_f1 /= n;
  return mean;
}

}  // namespace perprompt
