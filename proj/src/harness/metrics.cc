// Copyright 2026 The Replicator Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "replicator/harness.h"

namespace replicator::harness {
namespace {

// Round-trippable and locale independent.
std::string FormatDouble(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

bool IsTimingColumn(const std::string& name) {
  return name == "wall_time_ms" || name == "throughput" || name == "steps_per_sec" ||
         name == "examples_per_sec";
}

MetricsWriter::MetricsWriter(const std::string& path, int num_losses,
                             std::vector<std::string> extra_columns)
    : num_losses_(num_losses), num_extras_(extra_columns.size()) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  out_.open(path, std::ios::trunc);
  if (!out_) throw ConfigError("cannot write metrics file " + path);
  header_ = {"global_step", "wall_time_ms"};
  for (int r = 0; r < num_losses; ++r) header_.push_back("loss_" + std::to_string(r));
  header_.push_back("throughput");
  header_.push_back("checksum");
  for (auto& c : extra_columns) header_.push_back(std::move(c));
  for (size_t i = 0; i < header_.size(); ++i) out_ << (i ? "," : "") << header_[i];
  out_ << "\n";
  out_.flush();
}

void MetricsWriter::Write(const MetricsRecord& record) {
  if (record.losses.size() != num_losses_ || record.extras.size() != num_extras_) {
    throw EvaluationError("metrics record has the wrong number of columns");
  }
  if (last_step_ && record.global_step <= *last_step_) {
    throw EvaluationError("metrics global_step must increase");
  }
  last_step_ = record.global_step;
  char checksum[24];
  std::snprintf(checksum, sizeof(checksum), "%016" PRIx64, record.checksum);
  out_ << record.global_step << "," << FormatDouble(record.wall_time_ms);
  for (double l : record.losses) out_ << "," << FormatDouble(l);
  out_ << "," << FormatDouble(record.throughput) << "," << checksum;
  for (double e : record.extras) out_ << "," << FormatDouble(e);
  out_ << "\n";
  out_.flush();
}

MetricsTable MetricsTable::Read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read metrics file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return Parse(buf.str());
}

MetricsTable MetricsTable::Parse(const std::string& text) {
  MetricsTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw EvaluationError("metrics file is empty");
  t.header_ = SplitCsvLine(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = SplitCsvLine(line);
    if (cells.size() != t.header_.size()) {
      throw EvaluationError("metrics row " + std::to_string(t.rows_.size()) + " has " +
                            std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(t.header_.size()));
    }
    t.rows_.push_back(std::move(cells));
  }
  return t;
}

bool MetricsTable::Has(const std::string& column) const {
  return std::find(header_.begin(), header_.end(), column) != header_.end();
}

size_t MetricsTable::Index(const std::string& column) const {
  auto it = std::find(header_.begin(), header_.end(), column);
  if (it == header_.end()) throw EvaluationError("metrics file has no column '" + column + "'");
  return static_cast<size_t>(it - header_.begin());
}

const std::string& MetricsTable::Cell(size_t row, const std::string& column) const {
  return rows_.at(row).at(Index(column));
}

double MetricsTable::Value(size_t row, const std::string& column) const {
  const std::string& cell = Cell(row, column);
  if (cell == "nan") return std::nan("");
  return std::stod(cell);
}

std::vector<double> MetricsTable::Column(const std::string& column) const {
  std::vector<double> out;
  for (size_t r = 0; r < rows_.size(); ++r) out.push_back(Value(r, column));
  return out;
}

std::optional<std::string> CompareIgnoringTiming(const MetricsTable& a, const MetricsTable& b) {
  if (a.header() != b.header()) return "headers differ";
  if (a.rows() != b.rows()) {
    return "row counts differ: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows());
  }
  for (size_t r = 0; r < a.rows(); ++r) {
    for (const auto& col : a.header()) {
      if (IsTimingColumn(col)) continue;
      if (a.Cell(r, col) != b.Cell(r, col)) {
        return "row " + std::to_string(r) + " column " + col + ": " + a.Cell(r, col) + " vs " +
               b.Cell(r, col);
      }
    }
  }
  return std::nullopt;
}

}  // namespace replicator::harness
