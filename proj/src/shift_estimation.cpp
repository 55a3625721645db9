#include "labelshift/shift_estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace labelshift {

namespace {

void check_source_priors(const SimplexVector& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < kPriorEpsilon)
      throw ArgumentError("source prior for class " + std::to_string(i) +
                          " is below epsilon (" + std::to_string(p[i]) + ")");
  }
}

// Classes kept in the EM optimization (source prior >= epsilon).
std::vector<std::size_t> included_classes(const SimplexVector& p) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] >= kPriorEpsilon) idx.push_back(i);
  }
  if (idx.empty()) throw ArgumentError("all source priors are below epsilon");
  return idx;
}

// Log likelihood over the included classes only.
double restricted_log_likelihood(const Matrix& ratios, const std::vector<double>& q) {
  double ll = 0.0;
  for (std::size_t k = 0; k < ratios.rows; ++k) {
    double denom = 0.0;
    for (std::size_t j = 0; j < ratios.cols; ++j) denom += ratios.at(k, j) * q[j];
    if (denom <= 0.0) return -std::numeric_limits<double>::infinity();
    ll += std::log(denom);
  }
  return ll;
}

// ratios[k][j] = p(class idx_j | x_k) / p(class idx_j)
Matrix build_ratios(const ProbMatrix& target_probs, const SimplexVector& p,
                    const std::vector<std::size_t>& idx) {
  Matrix r(target_probs.size(), idx.size());
  for (std::size_t k = 0; k < target_probs.size(); ++k) {
    const auto row = target_probs.row(k);
    for (std::size_t j = 0; j < idx.size(); ++j) r.at(k, j) = row[idx[j]] / p[idx[j]];
  }
  return r;
}

EmResult finalize_result(const SimplexVector& p, const std::vector<std::size_t>& idx,
                         const std::vector<double>& q_restricted, std::size_t iterations,
                         double ll, bool converged, std::vector<double> trace) {
  std::vector<double> q_full(p.size(), 0.0);
  std::vector<double> weights(p.size(), 0.0);
  for (std::size_t j = 0; j < idx.size(); ++j) {
    q_full[idx[j]] = q_restricted[j];
    weights[idx[j]] = q_restricted[j] / p[idx[j]];
  }
  EmResult result{SimplexVector(std::move(q_full)), std::move(weights), iterations,
                  ll, converged, std::move(trace)};
  return result;
}

std::vector<double> restricted_init(const SimplexVector& p,
                                    const std::vector<std::size_t>& idx) {
  std::vector<double> q(idx.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    q[j] = p[idx[j]];
    sum += q[j];
  }
  for (double& v : q) v /= sum;
  return q;
}

void check_estimator_inputs(const ProbMatrix& valid_probs,
                            const std::vector<int>& valid_labels,
                            const ProbMatrix& target_probs) {
  const std::size_t m = valid_probs.num_classes();
  if (target_probs.num_classes() != m)
    throw ArgumentError("validation and target class counts differ");
  if (valid_labels.size() != valid_probs.size())
    throw ArgumentError("validation labels/probs size mismatch");
  for (int y : valid_labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= m)
      throw ArgumentError("validation label out of range");
  }
}

// Target moments: argmax frequencies (hard) or column means (soft).
std::vector<double> target_moments(ConfusionMode mode, const ProbMatrix& target_probs) {
  const std::size_t m = target_probs.num_classes();
  std::vector<double> u(m, 0.0);
  const double inv_n = 1.0 / static_cast<double>(target_probs.size());
  for (std::size_t k = 0; k < target_probs.size(); ++k) {
    const auto row = target_probs.row(k);
    if (mode == ConfusionMode::Hard) {
      u[argmax_row(row)] += inv_n;
    } else {
      for (std::size_t i = 0; i < m; ++i) u[i] += row[i] * inv_n;
    }
  }
  return u;
}

Eigen::MatrixXd to_eigen(const Matrix& a) {
  Eigen::MatrixXd out(a.rows, a.cols);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) out(r, c) = a.at(r, c);
  return out;
}

double condition_number(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / sv(sv.size() - 1);
}

}  // namespace

SimplexVector estimate_source_priors(const ProbMatrix& valid_probs, SourcePriorMode mode,
                                     const std::vector<int>* labels) {
  const std::size_t m = valid_probs.num_classes();
  std::vector<double> priors(m, 0.0);
  if (mode == SourcePriorMode::MeanPrediction) {
    const double inv_n = 1.0 / static_cast<double>(valid_probs.size());
    for (std::size_t k = 0; k < valid_probs.size(); ++k) {
      const auto row = valid_probs.row(k);
      for (std::size_t i = 0; i < m; ++i) priors[i] += row[i] * inv_n;
    }
  } else {
    if (labels == nullptr || labels->empty())
      throw ArgumentError("LabelFrequency mode requires labels");
    const double inv_n = 1.0 / static_cast<double>(labels->size());
    for (int y : *labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= m)
        throw ArgumentError("label out of range");
      priors[y] += inv_n;
    }
  }
  return SimplexVector(std::move(priors));
}

double shift_log_likelihood(const SimplexVector& q, const ProbMatrix& target_probs,
                            const SimplexVector& source_priors) {
  if (q.size() != target_probs.num_classes() || q.size() != source_priors.size())
    throw ArgumentError("shift_log_likelihood: dimension mismatch");
  check_source_priors(source_priors);
  double ll = 0.0;
  for (std::size_t k = 0; k < target_probs.size(); ++k) {
    const auto row = target_probs.row(k);
    double denom = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) denom += row[i] / source_priors[i] * q[i];
    if (denom <= 0.0) return -std::numeric_limits<double>::infinity();
    ll += std::log(denom);
  }
  return ll;
}

EmResult em_estimate(const ProbMatrix& target_probs, const SimplexVector& source_priors,
                     double tol, std::size_t max_iter) {
  if (source_priors.size() != target_probs.num_classes())
    throw ArgumentError("em_estimate: dimension mismatch");
  const auto idx = included_classes(source_priors);
  const Matrix ratios = build_ratios(target_probs, source_priors, idx);
  const std::size_t mc = idx.size();
  const std::size_t n = target_probs.size();

  std::vector<double> q = restricted_init(source_priors, idx);
  std::vector<double> q_next(mc);
  std::vector<double> trace;
  bool converged = false;
  std::size_t iter = 0;
  double ll = restricted_log_likelihood(ratios, q);
  trace.push_back(ll);
  while (iter < max_iter) {
    std::fill(q_next.begin(), q_next.end(), 0.0);
    double mass = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      double denom = 0.0;
      for (std::size_t j = 0; j < mc; ++j) denom += ratios.at(k, j) * q[j];
      if (denom <= 0.0) continue;  // row fully supported on excluded classes
      for (std::size_t j = 0; j < mc; ++j) {
        const double post = ratios.at(k, j) * q[j] / denom;
        q_next[j] += post;
        mass += post;
      }
    }
    if (mass <= 0.0)
      throw NumericalError("em_estimate: every target row has zero re-weighted mass");
    for (double& v : q_next) v /= mass;
    ++iter;
    double change = 0.0;
    for (std::size_t j = 0; j < mc; ++j) change += std::abs(q_next[j] - q[j]);
    q.swap(q_next);
    ll = restricted_log_likelihood(ratios, q);
    trace.push_back(ll);
    if (change <= tol) {
      converged = true;
      break;
    }
  }
  return finalize_result(source_priors, idx, q, iter, ll, converged, std::move(trace));
}

EmResult ml_estimate_direct(const ProbMatrix& target_probs,
                            const SimplexVector& source_priors,
                            const DirectMlOptions& opts) {
  if (source_priors.size() != target_probs.num_classes())
    throw ArgumentError("ml_estimate_direct: dimension mismatch");
  const auto idx = included_classes(source_priors);
  const Matrix ratios = build_ratios(target_probs, source_priors, idx);
  const std::size_t mc = idx.size();
  const std::size_t n = target_probs.size();

  std::vector<double> q = restricted_init(source_priors, idx);
  double ll = restricted_log_likelihood(ratios, q);
  std::vector<double> trace{ll};
  std::vector<double> grad(mc);
  double alpha = 1.0 / static_cast<double>(n);
  bool converged = false;
  std::size_t iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      double denom = 0.0;
      for (std::size_t j = 0; j < mc; ++j) denom += ratios.at(k, j) * q[j];
      if (denom <= 0.0) continue;
      for (std::size_t j = 0; j < mc; ++j) grad[j] += ratios.at(k, j) / denom;
    }
    // Ascent step with backtracking; projection keeps iterates feasible.
    std::vector<double> proposal(mc);
    double ll_new = ll;
    double change = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 80; ++bt) {
      for (std::size_t j = 0; j < mc; ++j) proposal[j] = q[j] + alpha * grad[j];
      const SimplexVector projected = project_to_simplex(proposal);
      change = 0.0;
      for (std::size_t j = 0; j < mc; ++j) {
        proposal[j] = projected[j];
        change += std::abs(proposal[j] - q[j]);
      }
      if (change == 0.0) break;
      ll_new = restricted_log_likelihood(ratios, proposal);
      if (ll_new >= ll) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      converged = true;  // no ascent direction left at machine precision
      break;
    }
    q = proposal;
    ll = ll_new;
    trace.push_back(ll);
    if (change <= opts.tol) {
      converged = true;
      ++iter;
      break;
    }
    alpha *= 2.0;  // cheap step-size recovery after backtracking
  }
  return finalize_result(source_priors, idx, q, iter, ll, converged, std::move(trace));
}

Matrix confusion_matrix(ConfusionMode mode, const ProbMatrix& valid_probs,
                        const std::vector<int>& valid_labels) {
  const std::size_t m = valid_probs.num_classes();
  if (valid_labels.size() != valid_probs.size())
    throw ArgumentError("confusion_matrix: labels/probs size mismatch");
  Matrix c(m, m, 0.0);
  const double inv_n = 1.0 / static_cast<double>(valid_probs.size());
  for (std::size_t k = 0; k < valid_probs.size(); ++k) {
    const int y = valid_labels[k];
    if (y < 0 || static_cast<std::size_t>(y) >= m)
      throw ArgumentError("confusion_matrix: label out of range");
    const auto row = valid_probs.row(k);
    if (mode == ConfusionMode::Hard) {
      c.at(argmax_row(row), y) += inv_n;
    } else {
      for (std::size_t i = 0; i < m; ++i) c.at(i, y) += row[i] * inv_n;
    }
  }
  return c;
}

ShiftWeights bbsl_estimate(ConfusionMode mode, const ProbMatrix& valid_probs,
                           const std::vector<int>& valid_labels,
                           const ProbMatrix& target_probs) {
  check_estimator_inputs(valid_probs, valid_labels, target_probs);
  const Matrix c = confusion_matrix(mode, valid_probs, valid_labels);
  const std::vector<double> u = target_moments(mode, target_probs);
  const Eigen::MatrixXd ce = to_eigen(c);
  const double cond = condition_number(ce);
  if (!(cond <= 1e12))
    throw SingularMatrixError("bbsl_estimate: confusion matrix is singular "
                              "(condition estimate " + std::to_string(cond) + ")",
                              cond);
  Eigen::VectorXd ue(static_cast<Eigen::Index>(u.size()));
  for (std::size_t i = 0; i < u.size(); ++i) ue(static_cast<Eigen::Index>(i)) = u[i];
  const Eigen::VectorXd w = ce.partialPivLu().solve(ue);
  ShiftWeights result;
  result.values.resize(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    result.values[i] = std::max(w(static_cast<Eigen::Index>(i)), 0.0);
  return result;
}

ShiftWeights rlls_estimate(ConfusionMode mode, const ProbMatrix& valid_probs,
                           const std::vector<int>& valid_labels,
                           const ProbMatrix& target_probs, double lambda, double delta) {
  if (lambda < 0.0) throw ArgumentError("rlls_estimate: lambda must be >= 0");
  if (delta < 0.0 || delta > 1.0)
    throw ArgumentError("rlls_estimate: delta must lie in [0, 1]");
  check_estimator_inputs(valid_probs, valid_labels, target_probs);
  const Matrix c = confusion_matrix(mode, valid_probs, valid_labels);
  const std::vector<double> u = target_moments(mode, target_probs);
  const std::size_t m = u.size();
  const Eigen::MatrixXd ce = to_eigen(c);
  const double cond = condition_number(ce);
  if (!(cond <= 1e12))
    throw SingularMatrixError("rlls_estimate: confusion matrix is singular "
                              "(condition estimate " + std::to_string(cond) + ")",
                              cond);
  Eigen::VectorXd b(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    double rowsum = 0.0;
    for (std::size_t j = 0; j < m; ++j) rowsum += c.at(i, j);
    b(static_cast<Eigen::Index>(i)) = u[i] - rowsum;  // u - C*1
  }

  // argmin ||C theta - b||_2 + lambda ||theta||_2. The least-squares solution
  // handles lambda = 0 exactly and seeds descent otherwise; the norms are
  // smoothed with a tiny mu so the objective is differentiable at zero.
  Eigen::VectorXd theta = ce.colPivHouseholderQr().solve(b);
  bool converged = true;
  if (lambda > 0.0) {
    constexpr double mu = 1e-18;
    const auto objective = [&](const Eigen::VectorXd& t) {
      return std::sqrt((ce * t - b).squaredNorm() + mu) +
             lambda * std::sqrt(t.squaredNorm() + mu);
    };
    double f = objective(theta);
    double step = 1.0;
    converged = false;
    for (std::size_t iter = 0; iter < 20000; ++iter) {
      const Eigen::VectorXd resid = ce * theta - b;
      const double rn = std::sqrt(resid.squaredNorm() + mu);
      const double tn = std::sqrt(theta.squaredNorm() + mu);
      const Eigen::VectorXd grad = ce.transpose() * resid / rn + lambda * theta / tn;
      if (grad.lpNorm<Eigen::Infinity>() <= 1e-10) {
        converged = true;
        break;
      }
      bool accepted = false;
      for (int bt = 0; bt < 80; ++bt) {
        const Eigen::VectorXd trial = theta - step * grad;
        const double f_new = objective(trial);
        if (f_new <= f - 1e-4 * step * grad.squaredNorm()) {
          theta = trial;
          f = f_new;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        converged = true;  // stalled at machine precision
        break;
      }
      step *= 2.0;
    }
  }

  ShiftWeights result;
  result.converged = converged;
  result.values.resize(m);
  for (std::size_t i = 0; i < m; ++i)
    result.values[i] =
        std::max(1.0 + delta * theta(static_cast<Eigen::Index>(i)), 0.0);
  return result;
}

ProbMatrix adapt_predictions(const ProbMatrix& probs, const ShiftWeights& weights) {
  const std::size_t m = probs.num_classes();
  if (weights.values.size() != m)
    throw ArgumentError("adapt_predictions: weight length mismatch");
  bool any_positive = false;
  for (double w : weights.values) {
    if (!std::isfinite(w) || w < 0.0)
      throw ArgumentError("adapt_predictions: weights must be finite and nonnegative");
    if (w > 0.0) any_positive = true;
  }
  if (!any_positive) throw ArgumentError("adapt_predictions: all weights are zero");
  Matrix out(probs.size(), m);
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const auto row = probs.row(k);
    double denom = 0.0;
    for (std::size_t i = 0; i < m; ++i) denom += weights.values[i] * row[i];
    if (denom <= 0.0)
      throw DegenerateRowError("adapt_predictions: zero re-weighted mass in row " +
                               std::to_string(k), k);
    for (std::size_t i = 0; i < m; ++i) out.at(k, i) = weights.values[i] * row[i] / denom;
  }
  return ProbMatrix(std::move(out));
}

ShiftWeights weights_from_priors(const SimplexVector& q, const SimplexVector& p) {
  if (q.size() != p.size()) throw ArgumentError("weights_from_priors: length mismatch");
  check_source_priors(p);
  ShiftWeights w;
  w.values.resize(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) w.values[i] = q[i] / p[i];
  return w;
}

}  // namespace labelshift
