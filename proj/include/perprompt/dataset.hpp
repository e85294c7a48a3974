#pragma once

// Subject records, normalization, padding, date splits and the synthetic
// corpus generator.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "perprompt/tensor.hpp"

namespace perprompt {

using Date = std::chrono::year_month_day;

// Parses "YYYY-MM-DD"; throws ParseError on malformed or impossible dates.
Date parse_date(const std::string& text);
std::string format_date(const Date& date);

struct SubjectRecord {
  std::string subject_id;
  Matrix visits;  // N_x visits x N_m metrics, chronological
  std::string label;
  std::optional<std::string> reference_response;
  Date last_visit_date;

  std::size_t visit_count() const { return visits.rows; }
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  // Identity transform over `metrics` columns.
  static NormalizationStats identity(std::size_t metrics);
  friend bool operator==(const NormalizationStats&, const NormalizationStats&) = default;
};

struct Dataset {
  std::vector<SubjectRecord> records;
  std::vector<std::string> metric_names;
  std::vector<std::string> label_vocab;
  std::optional<NormalizationStats> normalization;

  std::size_t metric_count() const { return metric_names.size(); }
  // Throws SchemaError / VocabularyError on the first violated invariant.
  void validate() const;
};

// Reads a line-delimited record file plus its meta file. Record order is
// preserved.
Dataset load_dataset(const std::filesystem::path& records_path, const std::filesystem::path& meta_path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& records_path,
                  const std::filesystem::path& meta_path);

// Per-metric population mean and standard deviation over every visit row.
// Constant metrics get stddev 1.
NormalizationStats fit_normalization(const std::vector<SubjectRecord>& train_records);

// Z-scores the visits, keeps the most recent `target_visits` of them and
// zero-pads the concatenation to target_visits * N_m values.
std::vector<double> pad_and_flatten(const SubjectRecord& record, std::size_t target_visits,
                                    const NormalizationStats& stats);

struct SplitSpec {
  Date train_before;
  Date val_before;
};

struct DatasetSplit {
  std::vector<SubjectRecord> train;
  std::vector<SubjectRecord> val;
  std::vector<SubjectRecord> test;
};

// train: last visit < train_before; val: < val_before; test: the rest.
DatasetSplit split_by_date(const Dataset& dataset, const SplitSpec& bounds);

struct SynthConfig {
  std::size_t subjects = 2373;
  std::size_t metrics = 35;
  std::size_t labels = 12;
  std::size_t max_visits = 45;
  double class_offset = 1.5;  // spread of class-conditional metric means, in metric stddevs
  double noise = 1.0;         // within-class visit noise, in metric stddevs
};

// Deterministic in (config, seed).
Dataset synth_generate(const SynthConfig& config, std::uint64_t seed);

}  // namespace perprompt
