#include "perprompt/prompt.hpp"

#include <cctype>
#include <cstdio>
#include <map>

#include "perprompt/errors.hpp"

namespace perprompt {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

PromptState make_state(std::string subject_id, std::vector<std::string> tokens, std::size_t budget) {
  PromptState s;
  s.subject_id = std::move(subject_id);
  s.origin.resize(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) s.origin[i] = i;
  s.tokens = std::move(tokens);
  s.budget = budget;
  return s;
}

PromptState apply_deletion(const PromptState& state, std::size_t index) {
  if (index >= state.tokens.size()) {
    throw SchemaError("deletion index " + std::to_string(index) + " out of range for " +
                      std::to_string(state.tokens.size()) + " tokens");
  }
  if (state.step >= state.budget) throw SchemaError("prompt state has used all of its deletions");
  PromptState next = state;
  const auto offset = static_cast<std::ptrdiff_t>(index);
  next.deletions.push_back({state.step, state.origin[index], state.tokens[index]});
  next.tokens.erase(next.tokens.begin() + offset);
  next.origin.erase(next.origin.begin() + offset);
  ++next.step;
  return next;
}

namespace {

std::string fill(const std::string& tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const std::size_t close = tpl.find('}', i);
      if (close != std::string::npos) {
        auto it = values.find(tpl.substr(i + 1, close - i - 1));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tpl[i++];
  }
  return out;
}

std::string format_value(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string visit_blocks(const SubjectRecord& record, std::span<const std::string> metric_names) {
  if (record.visits.cols != metric_names.size()) throw SchemaError("metric names do not match the record");
  std::string out;
  for (std::size_t v = 0; v < record.visits.rows; ++v) {
    std::string values;
    for (std::size_t m = 0; m < metric_names.size(); ++m) {
      if (m) values += ' ';
      values += metric_names[m] + "=" + format_value(record.visits(v, m));
    }
    if (v) out += '\n';
    out += fill(template_text("visit_block"), {{"index", std::to_string(v + 1)}, {"values", values}});
  }
  return out;
}

}  // namespace

SubjectSummary summarize(const SubjectRecord& record, std::span<const std::string> metric_names) {
  if (record.visits.rows == 0) throw SchemaError("subject " + record.subject_id + " has no visits");
  if (record.visits.cols != metric_names.size()) throw SchemaError("metric names do not match the record");
  auto last = record.visits.row(record.visits.rows - 1);
  return {record.subject_id, record.visits.rows, {metric_names.begin(), metric_names.end()},
          {last.begin(), last.end()}};
}

PromptState build_coarse_prompt(const SubjectSummary& summary, const std::string& predicted_label,
                                std::span<const std::string> neighbor_labels, std::size_t n,
                                const PromptToggles& toggles) {
  std::string latest;
  for (std::size_t m = 0; m < summary.metric_names.size(); ++m) {
    if (m) latest += ' ';
    latest += summary.metric_names[m] + "=" + format_value(summary.latest[m]);
  }
  std::string predicted;
  if (toggles.self_informed) predicted = fill(template_text("coarse_predicted"), {{"label", predicted_label}});
  std::string neighbors;
  if (toggles.peer_informed && !neighbor_labels.empty()) {
    std::string cases;
    for (std::size_t i = 0; i < neighbor_labels.size(); ++i) {
      if (i) cases += ' ';
      cases += fill(template_text("coarse_neighbor"), {{"rank", std::to_string(i + 1)}, {"label", neighbor_labels[i]}});
    }
    neighbors = fill(template_text("coarse_neighbors"), {{"cases", cases}});
  }
  const std::string text = fill(template_text("coarse"), {{"metric_count", std::to_string(summary.metric_names.size())},
                                                          {"visit_count", std::to_string(summary.visit_count)},
                                                          {"latest", latest},
                                                          {"predicted", predicted},
                                                          {"neighbors", neighbors}});
  auto tokens = tokenize(text);
  if (tokens.size() <= n + kPromptFloor) {
    throw PromptTooShortError("prompt too short to refine: " + std::to_string(tokens.size()) + " tokens for " +
                              std::to_string(n) + " deletions");
  }
  return make_state(summary.subject_id, std::move(tokens), n);
}

PromptState inject_noise(const PromptState& s0, std::span<const std::string> noise, Rng& rng) {
  if (s0.step != 0) throw SchemaError("noise can only be injected into a step-0 prompt");
  std::vector<std::string> tokens = s0.tokens;
  for (const auto& token : noise) {
    std::uniform_int_distribution<std::size_t> pos(0, tokens.size());
    tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(pos(rng)), token);
  }
  return make_state(s0.subject_id, std::move(tokens), s0.budget);
}

std::string build_eval_prompt(const SubjectRecord& record, std::span<const std::string> metric_names) {
  return fill(template_text("eval"), {{"visits", visit_blocks(record, metric_names)}});
}

std::string build_predictor_prompt(const SubjectRecord& record, std::span<const std::string> metric_names,
                                   std::span<const std::string> label_vocab) {
  std::string labels;
  for (std::size_t i = 0; i < label_vocab.size(); ++i) {
    if (i) labels += ", ";
    labels += label_vocab[i];
  }
  return fill(template_text("predictor"), {{"labels", labels}, {"visits", visit_blocks(record, metric_names)}});
}

}  // namespace perprompt
