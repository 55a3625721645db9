#include "labelshift/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace labelshift {

double mse_weights(const std::vector<double>& estimated, const std::vector<double>& true_w) {
  if (estimated.size() != true_w.size() || estimated.empty())
    throw ArgumentError("mse_weights: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    const double d = estimated[i] - true_w[i];
    acc += d * d;
  }
  return acc / static_cast<double>(estimated.size());
}

namespace {

void check_labels(const ProbMatrix& probs, const std::vector<int>& labels) {
  if (labels.size() != probs.size())
    throw ArgumentError("labels/probs size mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= probs.num_classes())
      throw ArgumentError("label out of range");
  }
}

}  // namespace

double nll(const ProbMatrix& probs, const std::vector<int>& labels) {
  check_labels(probs, labels);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double p = probs.row(k)[labels[k]];
    if (p <= 0.0) return std::numeric_limits<double>::infinity();
    acc -= std::log(p);
  }
  return acc / static_cast<double>(probs.size());
}

double accuracy(const ProbMatrix& probs, const std::vector<int>& labels) {
  check_labels(probs, labels);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (argmax_row(probs.row(k)) == static_cast<std::size_t>(labels[k])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

double ece(const ProbMatrix& probs, const std::vector<int>& labels, std::size_t num_bins) {
  check_labels(probs, labels);
  if (num_bins < 1) throw ArgumentError("ece: need at least one bin");
  std::vector<std::size_t> count(num_bins, 0), correct(num_bins, 0);
  std::vector<double> conf_sum(num_bins, 0.0);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const auto row = probs.row(k);
    const std::size_t pred = argmax_row(row);
    const double conf = row[pred];
    // Left-open right-closed bins over (0, 1]; confidence 1.0 lands in the top bin.
    std::size_t bin = 0;
    if (conf > 0.0) {
      bin = static_cast<std::size_t>(std::ceil(conf * static_cast<double>(num_bins))) - 1;
      bin = std::min(bin, num_bins - 1);
    }
    ++count[bin];
    conf_sum[bin] += conf;
    if (pred == static_cast<std::size_t>(labels[k])) ++correct[bin];
  }
  double result = 0.0;
  const double n = static_cast<double>(probs.size());
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (count[b] == 0) continue;
    const double acc = static_cast<double>(correct[b]) / static_cast<double>(count[b]);
    const double conf = conf_sum[b] / static_cast<double>(count[b]);
    result += static_cast<double>(count[b]) / n * std::abs(acc - conf);
  }
  return result;
}

double js_divergence(const SimplexVector& p, const SimplexVector& q) {
  if (p.size() != q.size()) throw ArgumentError("js_divergence: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double mid = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / mid);
    if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / mid);
  }
  return std::max(acc, 0.0);
}

double delta_accuracy(const ProbMatrix& adapted, const ProbMatrix& original,
                      const std::vector<int>& labels) {
  if (adapted.size() != original.size() ||
      adapted.num_classes() != original.num_classes())
    throw ArgumentError("delta_accuracy: shape mismatch");
  return (accuracy(adapted, labels) - accuracy(original, labels)) * 100.0;
}

double wilcoxon_signed_rank(const std::vector<double>& diffs, TailAlternative alternative) {
  if (alternative == TailAlternative::Less) {
    std::vector<double> negated(diffs.size());
    for (std::size_t i = 0; i < diffs.size(); ++i) negated[i] = -diffs[i];
    return wilcoxon_signed_rank(negated, TailAlternative::Greater);
  }
  std::vector<double> nonzero;
  for (double d : diffs) {
    if (!std::isfinite(d)) throw ArgumentError("wilcoxon: non-finite difference");
    if (d != 0.0) nonzero.push_back(d);
  }
  if (nonzero.empty())
    throw ArgumentError("wilcoxon: degenerate sample (all differences zero)");
  const std::size_t n = nonzero.size();

  // Average ranks of |d|.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(nonzero[a]) < std::abs(nonzero[b]);
  });
  std::vector<double> ranks(n);
  double tie_correction = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && std::abs(nonzero[order[j]]) == std::abs(nonzero[order[i]])) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg_rank;
    const double t = static_cast<double>(j - i);
    tie_correction += t * t * t - t;
    i = j;
  }

  double w_plus = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (nonzero[k] > 0.0) w_plus += ranks[k];
  }

  if (n <= 20) {
    // Exact enumeration over all sign assignments.
    const std::size_t patterns = std::size_t{1} << n;
    std::size_t at_least = 0;
    for (std::size_t mask = 0; mask < patterns; ++mask) {
      double w = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (mask & (std::size_t{1} << k)) w += ranks[k];
      }
      if (w >= w_plus - 1e-9) ++at_least;
    }
    return static_cast<double>(at_least) / static_cast<double>(patterns);
  }

  const double nd = static_cast<double>(n);
  const double mean = nd * (nd + 1.0) / 4.0;
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_correction / 48.0;
  const double z = (w_plus - mean - 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

std::vector<double> rank_methods(const Matrix& per_trial_scores, bool lower_is_better) {
  const std::size_t trials = per_trial_scores.rows;
  const std::size_t methods = per_trial_scores.cols;
  if (trials < 1 || methods < 2)
    throw ArgumentError("rank_methods: need >= 1 trial and >= 2 methods");
  std::vector<std::vector<double>> per_method(methods);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto scores = per_trial_scores.row(t);
    std::vector<std::size_t> order(methods);
    for (std::size_t j = 0; j < methods; ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return lower_is_better ? scores[a] < scores[b] : scores[a] > scores[b];
    });
    std::size_t i = 0;
    while (i < methods) {
      std::size_t j = i;
      while (j < methods && scores[order[j]] == scores[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0;
      for (std::size_t k = i; k < j; ++k) per_method[order[k]].push_back(avg);
      i = j;
    }
  }
  std::vector<double> medians(methods);
  for (std::size_t j = 0; j < methods; ++j) medians[j] = median(per_method[j]);
  return medians;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ArgumentError("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace labelshift
