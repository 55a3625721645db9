#pragma once

#include <string>
#include <vector>

#include "labelshift/numerics.hpp"

namespace labelshift {

// N x m raw classifier logits with integer labels.
class LabeledLogitSet {
public:
  LabeledLogitSet(Matrix logits, std::vector<int> labels);

  std::size_t size() const { return logits_.rows; }
  std::size_t num_classes() const { return logits_.cols; }
  const Matrix& logits() const { return logits_; }
  const std::vector<int>& labels() const { return labels_; }

private:
  Matrix logits_;
  std::vector<int> labels_;
};

// Row-stochastic N x m predicted-probability matrix.
class ProbMatrix {
public:
  explicit ProbMatrix(Matrix rows);

  std::size_t size() const { return rows_.rows; }
  std::size_t num_classes() const { return rows_.cols; }
  const Matrix& matrix() const { return rows_; }
  std::span<const double> row(std::size_t r) const { return rows_.row(r); }

private:
  Matrix rows_;
};

// Dataset I/O: CSV with header `label,logit_0,...,logit_{m-1}`, or JSON lines
// with the same fields. Format inferred from the extension unless forced.
enum class DatasetFormat { Auto, Csv, JsonLines };

LabeledLogitSet load_dataset(const std::string& path,
                             DatasetFormat format = DatasetFormat::Auto);
void save_dataset(const LabeledLogitSet& data, const std::string& path,
                  DatasetFormat format = DatasetFormat::Auto);

}  // namespace labelshift
