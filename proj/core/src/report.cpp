#include "lasi/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace lasi::cli {

std::vector<ReportRow> rows_from_manifests(std::span<const std::string> manifest_paths) {
  if (manifest_paths.empty()) throw ConfigError("report: at least one manifest required");
  std::vector<ReportRow> rows;
  for (const auto& path : manifest_paths) {
    RunManifest m = RunManifest::load(path);
    if (m.evaluations.empty()) {
      throw DataError("manifest " + path + " has no evaluations to report");
    }
    for (const auto& [name, metrics] : m.evaluations) {
      ReportRow r;
      r.label = m.label.empty() ? path : m.label;
      r.evaluation = name;
      r.accuracy = metrics.accuracy();
      r.precision = metrics.weighted_precision();
      r.recall = metrics.weighted_recall();
      r.f1 = metrics.weighted_f1();
      r.n = metrics.n_examples();
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::string render_report(std::span<const ReportRow> rows) {
  double best[4] = {-1, -1, -1, -1};
  for (const auto& r : rows) {
    best[0] = std::max(best[0], r.accuracy);
    best[1] = std::max(best[1], r.precision);
    best[2] = std::max(best[2], r.recall);
    best[3] = std::max(best[3], r.f1);
  }
  size_t label_w = 5;
  for (const auto& r : rows) {
    label_w = std::max(label_w, r.label.size() + r.evaluation.size() + 3);
  }
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s %9s %9s %9s %9s %8s\n", static_cast<int>(label_w),
                "model", "Acc", "P", "R", "F1", "n");
  os << buf;
  for (const auto& r : rows) {
    std::string name = r.label;
    if (r.evaluation != "original") name += " [" + r.evaluation + "]";
    const double vals[4] = {r.accuracy, r.precision, r.recall, r.f1};
    std::string cells;
    for (int i = 0; i < 4; ++i) {
      char cell[32];
      std::snprintf(cell, sizeof(cell), " %7.4f%c", vals[i], vals[i] == best[i] ? '*' : ' ');
      cells += cell;
    }
    std::snprintf(buf, sizeof(buf), "%-*s%s %8lld\n", static_cast<int>(label_w), name.c_str(),
                  cells.c_str(), static_cast<long long>(r.n));
    os << buf;
  }
  return os.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

void write_report_csv(const std::string& path, std::span<const ReportRow> rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "label,evaluation,accuracy,precision,recall,f1,n\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g,%.17g,%lld\n", r.accuracy, r.precision,
                  r.recall, r.f1, static_cast<long long>(r.n));
    out << csv_escape(r.label) << "," << csv_escape(r.evaluation) << buf;
  }
}

std::vector<ReportRow> load_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("label,evaluation,", 0) != 0) {
    throw DataError(path + ": not a report CSV");
  }
  std::vector<ReportRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw DataError(path + ":" + std::to_string(line_no) + ": bad row");
    ReportRow r;
    r.label = f[0];
    r.evaluation = f[1];
    r.accuracy = std::stod(f[2]);
    r.precision = std::stod(f[3]);
    r.recall = std::stod(f[4]);
    r.f1 = std::stod(f[5]);
    r.n = std::stoll(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace lasi::cli
