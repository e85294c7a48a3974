#pragma once

// Tokenization, prompt templates and the editable prompt state.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perprompt/dataset.hpp"
#include "perprompt/tensor.hpp"

namespace perprompt {

// Splits on runs of whitespace. Punctuation stays attached to its word.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(std::span<const std::string> tokens);

// Raw text of a bundled template; throws std::out_of_range for unknown names.
const std::string& template_text(std::string_view name);
std::string_view template_version();

// Minimum number of tokens a coarse prompt must keep after n deletions.
inline constexpr std::size_t kPromptFloor = 8;

struct Deletion {
  std::size_t step = 0;
  std::size_t original_index = 0;  // position in the step-0 token list
  std::string token;

  friend bool operator==(const Deletion&, const Deletion&) = default;
};

struct PromptState {
  std::string subject_id;
  std::vector<std::string> tokens;
  std::vector<std::size_t> origin;  // step-0 index of each current token
  std::size_t step = 0;
  std::size_t budget = 0;           // number of deletions allowed (n)
  std::vector<Deletion> deletions;

  std::string text() const { return detokenize(tokens); }
  friend bool operator==(const PromptState&, const PromptState&) = default;
};

// A step-0 state over `tokens`.
PromptState make_state(std::string subject_id, std::vector<std::string> tokens, std::size_t budget);

// Removes tokens[index] and records its step-0 index.
PromptState apply_deletion(const PromptState& state, std::size_t index);

struct SubjectSummary {
  std::string subject_id;
  std::size_t visit_count = 0;
  std::vector<std::string> metric_names;
  std::vector<double> latest;  // raw values of the most recent visit
};

SubjectSummary summarize(const SubjectRecord& record, std::span<const std::string> metric_names);

// Self-informed (predicted label) and peer-informed (neighbour labels)
// sections of the coarse prompt.
struct PromptToggles {
  bool self_informed = true;
  bool peer_informed = true;
};

// Builds the step-0 state. `neighbor_labels` are ground-truth labels in
// similarity rank order. Throws PromptTooShortError when the prompt has at
// most n + kPromptFloor tokens.
PromptState build_coarse_prompt(const SubjectSummary& summary, const std::string& predicted_label,
                                std::span<const std::string> neighbor_labels, std::size_t n,
                                const PromptToggles& toggles = {});

// Inserts each of `noise` at a uniformly drawn position of a step-0 state.
PromptState inject_noise(const PromptState& s0, std::span<const std::string> noise, Rng& rng);

// Plain instruction + visit data, without personalization.
std::string build_eval_prompt(const SubjectRecord& record, std::span<const std::string> metric_names);

// Instruction + visit data + label choices for a remote label predictor.
std::string build_predictor_prompt(const SubjectRecord& record, std::span<const std::string> metric_names,
                                   std::span<const std::string> label_vocab);

}  // namespace perprompt
