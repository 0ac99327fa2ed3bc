// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "harr/error.hpp"
#include "harr/grpo.hpp"

namespace harr {

/// Exponential moving average with the span convention:
/// y_0 = x_0, y_t = b*y_{t-1} + (1-b)*x_t, b = 1 - 2/(window+1).
inline std::vector<double> ema_smooth(const std::vector<double>& series, std::size_t window) {
  if (window < 1) throw InvalidArgument("ema_smooth: window must be >= 1");
  if (series.empty()) throw InvalidArgument("ema_smooth: empty series");
  const double beta = 1.0 - 2.0 / (static_cast<double>(window) + 1.0);
  std::vector<double> out(series.size());
  out[0] = series[0];
  for (std::size_t t = 1; t < series.size(); ++t) out[t] = beta * out[t - 1] + (1.0 - beta) * series[t];
  return out;
}

/// Appends one JSON object per line; flushes after each record.
class JsonlWriter {
 public:
  JsonlWriter(const std::string& path, bool append) : path_(path) {
    out_.open(path, append ? std::ios::binary | std::ios::app : std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot write " + path);
  }

  void write(const nlohmann::json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline std::vector<StepMetrics> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path);
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(metrics_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed metrics record in " + path + ": " + e.what());
    }
  }
  return out;
}

}  // namespace harr
