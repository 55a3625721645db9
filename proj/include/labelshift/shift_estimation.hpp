#pragma once

#include <optional>
#include <vector>

#include "labelshift/dataset.hpp"

namespace labelshift {

// Positivity floor for source priors.
inline constexpr double kPriorEpsilon = 1e-8;

enum class SourcePriorMode { MeanPrediction, LabelFrequency };
enum class ConfusionMode { Hard, Soft };

// Per-class ratios w_i = q(y=i)/p(y=i), nonnegative.
struct ShiftWeights {
  std::vector<double> values;
  bool converged = true;  // false when an iterative solver hit its budget
};

struct EmResult {
  SimplexVector target_priors;
  std::vector<double> weights;             // target_priors / source_priors
  std::size_t iterations = 0;
  double final_log_likelihood = 0.0;       // constant C omitted
  bool converged = false;
  std::vector<double> log_likelihood_trace;  // one entry per iterate
};

SimplexVector estimate_source_priors(const ProbMatrix& valid_probs, SourcePriorMode mode,
                                     const std::vector<int>* labels = nullptr);

// Label-shift log likelihood sum_k log sum_i (p_ik/p_i) q_i; -inf when a row's
// re-weighted mass vanishes.
double shift_log_likelihood(const SimplexVector& q, const ProbMatrix& target_probs,
                            const SimplexVector& source_priors);

// Saerens EM: q initialized to the source priors, E/M steps iterated until the
// L1 change drops below tol. Classes with source prior below kPriorEpsilon are
// excluded and receive weight zero.
EmResult em_estimate(const ProbMatrix& target_probs, const SimplexVector& source_priors,
                     double tol = 1e-10, std::size_t max_iter = 10000);

struct DirectMlOptions {
  double tol = 1e-10;  // L1 change in q
  std::size_t max_iter = 10000;
};

// Projected gradient ascent on the same concave objective; agrees with EM at
// the global maximum.
EmResult ml_estimate_direct(const ProbMatrix& target_probs,
                            const SimplexVector& source_priors,
                            const DirectMlOptions& opts = {});

// m x m confusion matrix, total mass one. Hard mode uses the argmax of each
// row with ties broken toward the lowest class index.
Matrix confusion_matrix(ConfusionMode mode, const ProbMatrix& valid_probs,
                        const std::vector<int>& valid_labels);

ShiftWeights bbsl_estimate(ConfusionMode mode, const ProbMatrix& valid_probs,
                           const std::vector<int>& valid_labels,
                           const ProbMatrix& target_probs);

ShiftWeights rlls_estimate(ConfusionMode mode, const ProbMatrix& valid_probs,
                           const std::vector<int>& valid_labels,
                           const ProbMatrix& target_probs, double lambda = 1e-3,
                           double delta = 1.0);

// Row-wise re-weighting q(y=i|x) = w_i p(y=i|x) / sum_j w_j p(y=j|x).
ProbMatrix adapt_predictions(const ProbMatrix& probs, const ShiftWeights& weights);

ShiftWeights weights_from_priors(const SimplexVector& q, const SimplexVector& p);

}  // namespace labelshift
