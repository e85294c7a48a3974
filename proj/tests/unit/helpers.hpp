#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "perprompt/dataset.hpp"

namespace testing {

inline perprompt::SubjectRecord record(std::string id, std::vector<std::vector<double>> visits, std::string label,
                                       std::string date = "2021-06-01",
                                       std::optional<std::string> reference = std::nullopt) {
  perprompt::SubjectRecord r;
  r.subject_id = std::move(id);
  r.visits = perprompt::Matrix(visits.size(), visits.empty() ? 0 : visits.front().size());
  for (std::size_t v = 0; v < visits.size(); ++v) {
    for (std::size_t m = 0; m < visits[v].size(); ++m) r.visits(v, m) = visits[v][m];
  }
  r.label = std::move(label);
  r.last_visit_date = perprompt::parse_date(date);
  r.reference_response = std::move(reference);
  return r;
}

// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("perprompt-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
