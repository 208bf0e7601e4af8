#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "secnn/trainer.hpp"

namespace secnn {

inline constexpr int kMetricsSchemaVersion = 1;
inline constexpr const char* kMetricsFile = "metrics.jsonl";

nlohmann::json metrics_to_json(const MetricsRecord& record);
MetricsRecord metrics_from_json(const nlohmann::json& j);

// One compact JSON object, no trailing newline.
std::string metrics_line(const MetricsRecord& record);

std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path);

struct Milestone {
  std::size_t epoch = 0;
  std::size_t param_count = 0;
  double accuracy = 0.0;
};

struct RunSummary {
  std::optional<Milestone> at70;
  std::optional<Milestone> at80;
  Milestone best;  // first epoch with the highest accuracy
  std::size_t expansions = 0;
  std::size_t final_param_count = 0;
};

RunSummary summarize(const std::vector<MetricsRecord>& history);

// Rows: "Val Accuracy (at 70%)", "Val Accuracy (at 80%)",
// "Highest Val Accuracy (%)", "Parameters at Highest Accuracy".
std::string format_summary(const RunSummary& summary);

// Accuracy versus size for each expansion, plus the final model.
std::string format_growth_table(const std::vector<MetricsRecord>& history);

}  // namespace secnn
