#pragma once

#include "lasi/config.hpp"

namespace lasi::cli {

struct ReportRow {
  std::string label;       // model/run label, manifest order preserved
  std::string evaluation;  // "original", "-2 words", ...
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  int64_t n = 0;
};

std::vector<ReportRow> rows_from_manifests(std::span<const std::string> manifest_paths);

/// Text table, one row per (manifest, evaluation); the best cell in each
/// metric column is flagged with '*'.
std::string render_report(std::span<const ReportRow> rows);

void write_report_csv(const std::string& path, std::span<const ReportRow> rows);
std::vector<ReportRow> load_report_csv(const std::string& path);

}  // namespace lasi::cli
