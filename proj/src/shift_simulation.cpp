#include "labelshift/shift_simulation.hpp"

#include <cmath>

namespace labelshift {

SimplexVector sample_dirichlet_priors(double alpha, std::size_t m, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw ArgumentError("sample_dirichlet_priors: alpha must be > 0");
  if (m < 2) throw ArgumentError("sample_dirichlet_priors: need at least 2 classes");
  Rng rng(seed);
  std::vector<double> draws(m);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    draws[i] = rng.gamma(alpha);
    sum += draws[i];
  }
  if (sum <= 0.0) {
    // All gamma draws underflowed (tiny alpha); fall back to a vertex.
    draws.assign(m, 0.0);
    draws[rng.uniform_index(m)] = 1.0;
    return SimplexVector(std::move(draws));
  }
  for (double& v : draws) v /= sum;
  return SimplexVector(std::move(draws));
}

SimplexVector tweak_one_priors(std::size_t m, std::size_t class_index, double rho) {
  if (m < 2) throw ArgumentError("tweak_one_priors: need at least 2 classes");
  if (class_index >= m) throw ArgumentError("tweak_one_priors: class index out of range");
  if (rho < 0.0 || rho > 1.0) throw ArgumentError("tweak_one_priors: rho must lie in [0,1]");
  std::vector<double> priors(m, (1.0 - rho) / static_cast<double>(m - 1));
  priors[class_index] = rho;
  return SimplexVector(std::move(priors));
}

LabeledLogitSet resample_by_priors(const LabeledLogitSet& data, const SimplexVector& priors,
                                   std::size_t n, std::uint64_t seed) {
  if (priors.size() != data.num_classes())
    throw ArgumentError("resample_by_priors: prior length mismatch");
  if (n < 1) throw ArgumentError("resample_by_priors: n must be >= 1");
  const std::size_t m = priors.size();
  std::vector<std::vector<std::size_t>> strata(m);
  for (std::size_t k = 0; k < data.size(); ++k)
    strata[static_cast<std::size_t>(data.labels()[k])].push_back(k);
  for (std::size_t i = 0; i < m; ++i) {
    if (priors[i] > 0.0 && strata[i].empty())
      throw UnsatisfiableShiftError("resample_by_priors: class " + std::to_string(i) +
                                    " has positive prior but no examples", i);
  }
  Rng rng(seed);
  // Multinomial counts via n categorical draws.
  std::vector<std::size_t> counts(m, 0);
  for (std::size_t k = 0; k < n; ++k) ++counts[rng.categorical(priors.values())];

  Matrix logits(n, data.num_classes());
  std::vector<int> labels(n);
  std::size_t out = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < counts[i]; ++c) {
      const std::size_t src = strata[i][rng.uniform_index(strata[i].size())];
      const auto src_row = data.logits().row(src);
      std::copy(src_row.begin(), src_row.end(), logits.row(out).begin());
      labels[out] = data.labels()[src];
      ++out;
    }
  }
  return LabeledLogitSet(std::move(logits), std::move(labels));
}

namespace {

LabeledLogitSet sample_task_set(const SyntheticTaskSpec& spec,
                                const SimplexVector& priors,
                                const std::vector<double>& biases, std::size_t n,
                                Rng& rng) {
  const std::size_t m = spec.num_classes;
  Matrix logits(n, m);
  std::vector<int> labels(n);
  std::vector<double> post(m);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t y = rng.categorical(priors.values());
    labels[k] = static_cast<int>(y);
    // Posterior only depends on x through the per-class mean projections:
    // log p(y=i|x) = log pi_i + sep * x_i + const with x_i ~ N(sep*1{i=y}, 1).
    for (std::size_t i = 0; i < m; ++i) {
      const double x_i = rng.normal() + (i == y ? spec.separation : 0.0);
      post[i] = std::log(std::max(priors[i], 1e-300)) + spec.separation * x_i;
    }
    const double lse = log_sum_exp(post);
    for (std::size_t i = 0; i < m; ++i) {
      const double log_post = post[i] - lse;
      // BCTS with (T*, b*) inverts this exactly: z/T* + b* = log posterior.
      logits.at(k, i) = spec.true_temperature * (log_post - biases[i]);
    }
  }
  return LabeledLogitSet(std::move(logits), std::move(labels));
}

}  // namespace

SyntheticTask generate_synthetic_task(const SyntheticTaskSpec& spec, std::size_t n_valid,
                                      std::size_t n_pool) {
  if (spec.num_classes < 2)
    throw ArgumentError("generate_synthetic_task: need at least 2 classes");
  if (!(spec.true_temperature > 0.0))
    throw ArgumentError("generate_synthetic_task: T* must be positive");
  if (n_valid < 1 || n_pool < 1)
    throw ArgumentError("generate_synthetic_task: counts must be >= 1");
  const std::size_t m = spec.num_classes;
  std::vector<double> prior_values = spec.true_priors;
  if (prior_values.empty())
    prior_values.assign(m, 1.0 / static_cast<double>(m));
  SimplexVector priors{std::move(prior_values)};
  if (priors.size() != m)
    throw ArgumentError("generate_synthetic_task: prior length mismatch");
  std::vector<double> biases = spec.true_biases;
  if (biases.empty()) biases.assign(m, 0.0);
  if (biases.size() != m)
    throw ArgumentError("generate_synthetic_task: bias length mismatch");

  Rng master(spec.seed);
  Rng valid_rng = master.split(1);
  Rng pool_rng = master.split(2);
  LabeledLogitSet valid = sample_task_set(spec, priors, biases, n_valid, valid_rng);
  LabeledLogitSet pool = sample_task_set(spec, priors, biases, n_pool, pool_rng);
  return SyntheticTask{std::move(valid), std::move(pool), spec.true_temperature, biases};
}

ProbMatrix SyntheticTask::true_posterior(const Matrix& logits) const {
  if (logits.cols != true_biases.size())
    throw ArgumentError("true_posterior: logit width mismatch");
  Matrix out(logits.rows, logits.cols);
  std::vector<double> g(logits.cols);
  for (std::size_t k = 0; k < logits.rows; ++k) {
    const auto z = logits.row(k);
    for (std::size_t i = 0; i < logits.cols; ++i)
      g[i] = z[i] / true_temperature + true_biases[i];
    softmax_inplace(g, out.row(k));
  }
  return ProbMatrix(std::move(out));
}

SimplexVector draw_shift_priors(const ShiftSpec& spec, std::size_t m) {
  if (std::holds_alternative<DirichletShift>(spec.kind)) {
    return sample_dirichlet_priors(std::get<DirichletShift>(spec.kind).alpha, m, spec.seed);
  }
  if (std::holds_alternative<TweakOneShift>(spec.kind)) {
    const auto& t = std::get<TweakOneShift>(spec.kind);
    return tweak_one_priors(m, t.class_index, t.rho);
  }
  const auto& e = std::get<ExplicitShift>(spec.kind);
  if (e.priors.size() != m)
    throw ArgumentError("draw_shift_priors: explicit prior length mismatch");
  return SimplexVector(e.priors);
}

}  // namespace labelshift
