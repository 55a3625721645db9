#pragma once

#include <vector>

#include "labelshift/dataset.hpp"

namespace labelshift {

enum class TailAlternative { Greater, Less };

// Mean squared componentwise difference (normalized by the class count).
double mse_weights(const std::vector<double>& estimated, const std::vector<double>& true_w);

// Mean negative log probability of the labels (nats); +inf on a zero
// probability.
double nll(const ProbMatrix& probs, const std::vector<int>& labels);

// Argmax accuracy in [0, 1].
double accuracy(const ProbMatrix& probs, const std::vector<int>& labels);

// Binned expected calibration error on the top-class confidence. Bins are
// equal-width left-open right-closed intervals over (0, 1].
double ece(const ProbMatrix& probs, const std::vector<int>& labels,
           std::size_t num_bins = 15);

// Jensen-Shannon divergence, natural log.
double js_divergence(const SimplexVector& p, const SimplexVector& q);

// Accuracy(adapted) - accuracy(original), in percentage points.
double delta_accuracy(const ProbMatrix& adapted, const ProbMatrix& original,
                      const std::vector<int>& labels);

// One-sided signed-rank p-value. Zero differences are dropped, ties receive
// average ranks; exact enumeration up to 20 nonzero differences, normal
// approximation with tie and continuity corrections beyond.
double wilcoxon_signed_rank(const std::vector<double>& diffs, TailAlternative alternative);

// Per-method median of within-trial ranks (0 = best, ties averaged).
std::vector<double> rank_methods(const Matrix& per_trial_scores, bool lower_is_better);

double median(std::vector<double> values);

}  // namespace labelshift
