#include "labelshift/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace labelshift {

LabeledLogitSet::LabeledLogitSet(Matrix logits, std::vector<int> labels)
    : logits_(std::move(logits)), labels_(std::move(labels)) {
  if (logits_.rows == 0) throw ArgumentError("LabeledLogitSet: empty logits");
  if (logits_.cols < 2) throw ArgumentError("LabeledLogitSet: need at least 2 classes");
  if (labels_.size() != logits_.rows)
    throw ArgumentError("LabeledLogitSet: labels/logits size mismatch");
  for (std::size_t k = 0; k < logits_.rows; ++k) {
    for (double v : logits_.row(k)) {
      if (!std::isfinite(v))
        throw ArgumentError("LabeledLogitSet: non-finite logit in row " + std::to_string(k));
    }
    if (labels_[k] < 0 || static_cast<std::size_t>(labels_[k]) >= logits_.cols)
      throw ArgumentError("LabeledLogitSet: label out of range in row " + std::to_string(k));
  }
}

ProbMatrix::ProbMatrix(Matrix rows) : rows_(std::move(rows)) {
  if (rows_.rows == 0) throw ArgumentError("ProbMatrix: empty matrix");
  for (std::size_t k = 0; k < rows_.rows; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rows_.cols; ++i) {
      double v = rows_.at(k, i);
      if (!std::isfinite(v) || v < -1e-12 || v > 1.0 + 1e-9)
        throw ArgumentError("ProbMatrix: entry out of [0,1] in row " + std::to_string(k));
      if (v < 0.0) rows_.at(k, i) = 0.0;
      sum += rows_.at(k, i);
    }
    if (std::abs(sum - 1.0) > SimplexVector::kRenormTolerance)
      throw ArgumentError("ProbMatrix: row " + std::to_string(k) + " sums to " +
                          std::to_string(sum));
    if (sum != 1.0) {
      for (std::size_t i = 0; i < rows_.cols; ++i) rows_.at(k, i) /= sum;
    }
  }
}

namespace {

DatasetFormat infer_format(const std::string& path, DatasetFormat format) {
  if (format != DatasetFormat::Auto) return format;
  if (path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0)
    return DatasetFormat::JsonLines;
  return DatasetFormat::Csv;
}

LabeledLogitSet load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  // Header: label,logit_0,...,logit_{m-1}
  std::size_t m = 0;
  {
    std::stringstream ss(line);
    std::string field;
    if (!std::getline(ss, field, ',') || field != "label")
      throw ParseError(path + ":1: expected header starting with 'label'");
    while (std::getline(ss, field, ',')) ++m;
    if (m < 2) throw ParseError(path + ":1: need at least 2 logit columns");
  }
  std::vector<double> data;
  std::vector<int> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::size_t col = 0;
    while (std::getline(ss, field, ',')) {
      try {
        if (col == 0) {
          labels.push_back(std::stoi(field));
        } else {
          data.push_back(std::stod(field));
        }
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad value '" + field + "'");
      }
      ++col;
    }
    if (col != m + 1)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(m + 1) + " fields, got " + std::to_string(col));
    if (labels.back() < 0 || static_cast<std::size_t>(labels.back()) >= m)
      throw ParseError(path + ": label out of range in row " +
                       std::to_string(lineno - 1));
  }
  if (labels.empty()) throw ParseError(path + ": no data rows");
  Matrix logits(labels.size(), m);
  logits.data = std::move(data);
  try {
    return LabeledLogitSet(std::move(logits), std::move(labels));
  } catch (const ArgumentError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

LabeledLogitSet load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<double> data;
  std::vector<int> labels;
  std::size_t m = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("label") || !j.contains("logits"))
      throw ParseError(path + ":" + std::to_string(lineno) + ": missing label/logits");
    labels.push_back(j.at("label").get<int>());
    const auto& row = j.at("logits");
    if (m == 0) m = row.size();
    if (row.size() != m)
      throw ParseError(path + ":" + std::to_string(lineno) + ": inconsistent width");
    if (labels.back() < 0 || static_cast<std::size_t>(labels.back()) >= m)
      throw ParseError(path + ": label out of range in row " + std::to_string(lineno));
    for (const auto& v : row) data.push_back(v.get<double>());
  }
  if (labels.empty()) throw ParseError(path + ": no data rows");
  Matrix logits(labels.size(), m);
  logits.data = std::move(data);
  try {
    return LabeledLogitSet(std::move(logits), std::move(labels));
  } catch (const ArgumentError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace

LabeledLogitSet load_dataset(const std::string& path, DatasetFormat format) {
  switch (infer_format(path, format)) {
    case DatasetFormat::JsonLines:
      return load_jsonl(path);
    default:
      return load_csv(path);
  }
}

void save_dataset(const LabeledLogitSet& data, const std::string& path,
                  DatasetFormat format) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  if (infer_format(path, format) == DatasetFormat::JsonLines) {
    for (std::size_t k = 0; k < data.size(); ++k) {
      nlohmann::json j;
      j["label"] = data.labels()[k];
      j["logits"] = std::vector<double>(data.logits().row(k).begin(),
                                        data.logits().row(k).end());
      out << j.dump() << '\n';
    }
  } else {
    out << "label";
    for (std::size_t i = 0; i < data.num_classes(); ++i) out << ",logit_" << i;
    out << '\n';
    for (std::size_t k = 0; k < data.size(); ++k) {
      out << data.labels()[k];
      for (double v : data.logits().row(k)) out << ',' << v;
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace labelshift
