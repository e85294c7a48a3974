#include "perprompt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "perprompt/errors.hpp"

namespace perprompt {

using nlohmann::json;

Date parse_date(const std::string& text) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char tail = 0;
  if (text.size() != 10 || std::sscanf(text.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw ParseError("malformed date '" + text + "', expected YYYY-MM-DD");
  }
  Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw ParseError("invalid calendar date '" + text + "'");
  return date;
}

std::string format_date(const Date& date) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

NormalizationStats NormalizationStats::identity(std::size_t metrics) {
  return {std::vector<double>(metrics, 0.0), std::vector<double>(metrics, 1.0)};
}

void Dataset::validate() const {
  std::set<std::string> vocab;
  for (const auto& label : label_vocab) {
    if (!vocab.insert(label).second) throw VocabularyError("duplicate label in vocabulary: " + label);
  }
  for (const auto& r : records) {
    if (r.visits.rows == 0) throw SchemaError("subject " + r.subject_id + " has no visits");
    if (r.visits.cols != metric_names.size()) {
      throw SchemaError("subject " + r.subject_id + " has " + std::to_string(r.visits.cols) + " metrics, expected " +
                        std::to_string(metric_names.size()));
    }
    for (double v : r.visits.data) {
      if (!std::isfinite(v)) throw SchemaError("subject " + r.subject_id + " has a non-finite value");
    }
    if (!vocab.contains(r.label)) throw VocabularyError("subject " + r.subject_id + " has unknown label " + r.label);
  }
}

namespace {

std::vector<std::string> string_array(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) throw ParseError(std::string("meta file lacks array '") + key + "'");
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw ParseError(std::string("non-string entry in '") + key + "'");
    out.push_back(v.get<std::string>());
  }
  return out;
}

SubjectRecord parse_record(const json& j, std::size_t metrics, std::size_t line) {
  auto require = [&](const char* key) -> const json& {
    if (!j.contains(key)) throw ParseError(std::string("missing key '") + key + "'", line);
    return j.at(key);
  };
  SubjectRecord r;
  const json& id = require("subject_id");
  if (!id.is_string()) throw ParseError("subject_id must be a string", line);
  r.subject_id = id.get<std::string>();

  const json& visits = require("visits");
  if (!visits.is_array()) throw ParseError("visits must be an array of arrays", line);
  if (visits.empty()) throw SchemaError("line " + std::to_string(line) + ": subject " + r.subject_id + " has no visits");
  r.visits = Matrix(visits.size(), metrics);
  for (std::size_t v = 0; v < visits.size(); ++v) {
    const json& row = visits[v];
    if (!row.is_array()) throw ParseError("visit rows must be arrays", line);
    if (row.size() != metrics) {
      throw SchemaError("line " + std::to_string(line) + ": visit " + std::to_string(v) + " has " +
                        std::to_string(row.size()) + " entries, expected " + std::to_string(metrics));
    }
    for (std::size_t m = 0; m < metrics; ++m) {
      if (!row[m].is_number()) throw ParseError("visit values must be numbers", line);
      r.visits(v, m) = row[m].get<double>();
    }
  }

  const json& label = require("label");
  if (!label.is_string()) throw ParseError("label must be a string", line);
  r.label = label.get<std::string>();

  if (j.contains("reference_response") && !j.at("reference_response").is_null()) {
    if (!j.at("reference_response").is_string()) throw ParseError("reference_response must be a string", line);
    r.reference_response = j.at("reference_response").get<std::string>();
  }
  const json& date = require("last_visit_date");
  if (!date.is_string()) throw ParseError("last_visit_date must be a string", line);
  try {
    r.last_visit_date = parse_date(date.get<std::string>());
  } catch (const ParseError& e) {
    throw ParseError(e.what(), line);
  }
  return r;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& records_path, const std::filesystem::path& meta_path) {
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw ParseError("cannot open meta file " + meta_path.string());
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::parse_error& e) {
    throw ParseError("meta file: " + std::string(e.what()));
  }
  Dataset ds;
  ds.metric_names = string_array(meta, "metric_names");
  ds.label_vocab = string_array(meta, "label_vocab");

  std::ifstream in(records_path);
  if (!in) throw ParseError("cannot open record file " + records_path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line);
    }
    if (!j.is_object()) throw ParseError("record must be an object", line);
    SubjectRecord r = parse_record(j, ds.metric_names.size(), line);
    if (std::find(ds.label_vocab.begin(), ds.label_vocab.end(), r.label) == ds.label_vocab.end()) {
      throw VocabularyError("line " + std::to_string(line) + ": unknown label '" + r.label + "'");
    }
    ds.records.push_back(std::move(r));
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& records_path,
                  const std::filesystem::path& meta_path) {
  std::ofstream meta(meta_path);
  meta << json{{"metric_names", dataset.metric_names}, {"label_vocab", dataset.label_vocab}}.dump(2) << '\n';
  std::ofstream out(records_path);
  for (const auto& r : dataset.records) {
    json visits = json::array();
    for (std::size_t v = 0; v < r.visits.rows; ++v) {
      auto row = r.visits.row(v);
      visits.push_back(std::vector<double>(row.begin(), row.end()));
    }
    json j{{"subject_id", r.subject_id},
           {"visits", std::move(visits)},
           {"label", r.label},
           {"reference_response", r.reference_response ? json(*r.reference_response) : json(nullptr)},
           {"last_visit_date", format_date(r.last_visit_date)}};
    out << j.dump() << '\n';
  }
  if (!out || !meta) throw Error("failed to write dataset to " + records_path.string());
}

NormalizationStats fit_normalization(const std::vector<SubjectRecord>& train_records) {
  if (train_records.empty()) throw SchemaError("cannot fit normalization on an empty split");
  const std::size_t metrics = train_records.front().visits.cols;
  std::vector<double> sum(metrics, 0.0);
  std::size_t rows = 0;
  for (const auto& r : train_records) {
    if (r.visits.cols != metrics) throw SchemaError("records disagree on metric count");
    for (std::size_t v = 0; v < r.visits.rows; ++v) {
      for (std::size_t m = 0; m < metrics; ++m) sum[m] += r.visits(v, m);
    }
    rows += r.visits.rows;
  }
  NormalizationStats stats{std::vector<double>(metrics), std::vector<double>(metrics, 0.0)};
  for (std::size_t m = 0; m < metrics; ++m) stats.mean[m] = sum[m] / static_cast<double>(rows);
  for (const auto& r : train_records) {
    for (std::size_t v = 0; v < r.visits.rows; ++v) {
      for (std::size_t m = 0; m < metrics; ++m) {
        const double d = r.visits(v, m) - stats.mean[m];
        stats.stddev[m] += d * d;
      }
    }
  }
  for (double& s : stats.stddev) {
    s = std::sqrt(s / static_cast<double>(rows));
    if (s == 0.0) s = 1.0;
  }
  return stats;
}

std::vector<double> pad_and_flatten(const SubjectRecord& record, std::size_t target_visits,
                                    const NormalizationStats& stats) {
  if (target_visits == 0) throw SchemaError("target_visits must be at least 1");
  const std::size_t metrics = record.visits.cols;
  if (stats.mean.size() != metrics) throw DimensionError("normalization stats do not match the metric count");
  std::vector<double> flat(target_visits * metrics, 0.0);
  const std::size_t kept = std::min(record.visits.rows, target_visits);
  const std::size_t first = record.visits.rows - kept;
  for (std::size_t v = 0; v < kept; ++v) {
    for (std::size_t m = 0; m < metrics; ++m) {
      flat[v * metrics + m] = (record.visits(first + v, m) - stats.mean[m]) / stats.stddev[m];
    }
  }
  return flat;
}

DatasetSplit split_by_date(const Dataset& dataset, const SplitSpec& bounds) {
  if (!(bounds.train_before < bounds.val_before)) throw SchemaError("split requires train_before < val_before");
  DatasetSplit split;
  for (const auto& r : dataset.records) {
    if (r.last_visit_date < bounds.train_before) {
      split.train.push_back(r);
    } else if (r.last_visit_date < bounds.val_before) {
      split.val.push_back(r);
    } else {
      split.test.push_back(r);
    }
  }
  return split;
}

namespace {

const char* const kAdvice[] = {
    "Keep the routine examination schedule and maintain a balanced diet with regular light exercise.",
    "Monitor blood pressure twice daily and report headaches or visual changes immediately.",
    "Limit refined sugar intake and record fasting glucose every morning before breakfast.",
    "Return for a follow-up scan within two weeks and track daily movement counts.",
    "Take the prescribed supplement with meals and repeat the blood count next visit.",
    "Rest frequently and avoid heavy lifting until the next clinical review.",
    "Continue thyroid medication at the current dose and recheck hormone levels monthly.",
    "Seek urgent care for sudden abdominal pain and keep the emergency contact available.",
    "Increase fluid intake and schedule additional monitoring sessions this week.",
    "Attend the specialist consultation and bring previous examination reports.",
    "Follow the iron rich meal plan and recheck hemoglobin after four weeks.",
    "Keep a daily symptom diary and discuss any irregular findings at the next appointment.",
};

}  // namespace

Dataset synth_generate(const SynthConfig& config, std::uint64_t seed) {
  if (config.subjects == 0 || config.metrics == 0 || config.labels == 0 || config.max_visits == 0) {
    throw SchemaError("synthetic config needs positive subjects, metrics, labels and max_visits");
  }
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  char name[32];
  for (std::size_t m = 0; m < config.metrics; ++m) {
    std::snprintf(name, sizeof(name), "metric_%02zu", m + 1);
    ds.metric_names.emplace_back(name);
  }
  for (std::size_t c = 0; c < config.labels; ++c) {
    std::snprintf(name, sizeof(name), "condition_%02zu", c + 1);
    ds.label_vocab.emplace_back(name);
  }

  // Metrics live on very different scales, as clinical measurements do.
  std::vector<double> base(config.metrics);
  std::vector<double> spread(config.metrics);
  for (std::size_t m = 0; m < config.metrics; ++m) {
    const double magnitude = std::pow(10.0, -1.0 + 3.5 * unit(rng));
    base[m] = magnitude * (1.0 + 2.0 * unit(rng));
    spread[m] = magnitude * (0.1 + 0.3 * unit(rng));
  }
  Matrix class_mean(config.labels, config.metrics);
  Matrix class_trend(config.labels, config.metrics);
  for (double& v : class_mean.data) v = config.class_offset * gauss(rng);
  for (double& v : class_trend.data) v = 0.5 * gauss(rng);

  std::binomial_distribution<std::size_t> extra_visits(config.max_visits - 1, 0.35);
  std::discrete_distribution<int> year_pick({56.0, 1638.0, 679.0});
  std::uniform_int_distribution<std::size_t> label_pick(0, config.labels - 1);
  std::uniform_int_distribution<unsigned> month_pick(1, 12);
  std::uniform_int_distribution<unsigned> day_pick(1, 28);

  const int width = static_cast<int>(std::to_string(config.subjects).size());
  for (std::size_t s = 0; s < config.subjects; ++s) {
    SubjectRecord r;
    std::snprintf(name, sizeof(name), "S%0*zu", width, s + 1);
    r.subject_id = name;
    const std::size_t label = label_pick(rng);
    r.label = ds.label_vocab[label];
    const std::size_t visits = 1 + extra_visits(rng);
    r.visits = Matrix(visits, config.metrics);
    std::vector<double> personal(config.metrics);
    for (double& v : personal) v = 0.3 * gauss(rng);
    for (std::size_t v = 0; v < visits; ++v) {
      const double progress = visits == 1 ? 1.0 : static_cast<double>(v) / static_cast<double>(visits - 1);
      for (std::size_t m = 0; m < config.metrics; ++m) {
        const double z = class_mean(label, m) + personal[m] + class_trend(label, m) * progress +
                         config.noise * gauss(rng);
        r.visits(v, m) = std::round((base[m] + spread[m] * z) * 1e4) / 1e4;
      }
    }
    const int year = 2020 + year_pick(rng);
    r.last_visit_date = Date{std::chrono::year{year}, std::chrono::month{month_pick(rng)},
                             std::chrono::day{day_pick(rng)}};

    // Two most atypical metrics at the last visit make the reference subject-specific.
    std::vector<std::pair<double, std::size_t>> deviation;
    for (std::size_t m = 0; m < config.metrics; ++m) {
      deviation.emplace_back(-std::abs((r.visits(visits - 1, m) - base[m]) / spread[m]), m);
    }
    std::sort(deviation.begin(), deviation.end());
    std::ostringstream ref;
    ref << "Assessment: " << r.label << ". " << kAdvice[label % std::size(kAdvice)];
    ref << " Notable findings:";
    for (std::size_t i = 0; i < std::min<std::size_t>(2, deviation.size()); ++i) {
      const std::size_t m = deviation[i].second;
      char value[48];
      std::snprintf(value, sizeof(value), "%.2f", r.visits(visits - 1, m));
      ref << (i == 0 ? " " : ", ") << ds.metric_names[m] << " " << value;
    }
    ref << ".";
    r.reference_response = ref.str();
    ds.records.push_back(std::move(r));
  }
  ds.validate();
  return ds;
}

}  // namespace perprompt
