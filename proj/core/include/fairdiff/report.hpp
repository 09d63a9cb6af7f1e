#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fairdiff/adjusted_dft.hpp"
#include "fairdiff/world.hpp"

namespace fairdiff {

/// Appends one JSON record per line.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write(const nlohmann::json& record);

 private:
  std::filesystem::path path_;
};

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& value);

/// Evaluation report as line records: one {"type":"context",...} per context followed by
/// one {"type":"summary",...}. from_records(to_records(r)) reproduces r exactly.
std::vector<nlohmann::json> report_to_records(const EvaluationReport& report);
EvaluationReport report_from_records(const std::vector<nlohmann::json>& records);
std::string render_report(const EvaluationReport& report);

/// One record per probed timestep with mean and 5/50/95 percentiles of each series.
std::vector<nlohmann::json> diagnostics_to_records(const GradDiagnostics& diagnostics);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> lower;  // optional band
  std::vector<double> upper;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::vector<PlotSeries> series;
};

/// Static SVG line chart.
void write_svg_plot(const std::filesystem::path& path, const PlotSpec& plot);

}  // namespace fairdiff
