#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "labelshift/dataset.hpp"
#include "labelshift/rng.hpp"

namespace labelshift {

// Target-prior generators for the shift grid.
struct DirichletShift {
  double alpha = 1.0;
};
struct TweakOneShift {
  std::size_t class_index = 0;
  double rho = 0.5;
};
struct ExplicitShift {
  std::vector<double> priors;
};

struct ShiftSpec {
  std::variant<DirichletShift, TweakOneShift, ExplicitShift> kind;
  std::size_t sample_size = 1;
  std::uint64_t seed = 0;
};

// Gaussian-mixture synthetic classifier with a known posterior. Emitted
// logits are z_i = T* log p(y=i|x) - b*_i, so BCTS with (T*, b*) inverts the
// distortion exactly.
struct SyntheticTaskSpec {
  std::size_t num_classes = 2;
  std::vector<double> true_priors;  // simplex; empty means uniform
  double separation = 2.0;          // class mean spacing
  double true_temperature = 1.0;
  std::vector<double> true_biases;  // empty means all zero
  std::uint64_t seed = 0;
};

struct SyntheticTask {
  LabeledLogitSet valid;
  LabeledLogitSet pool;
  double true_temperature;
  std::vector<double> true_biases;

  // Closed-form posterior recovered from the emitted logits.
  ProbMatrix true_posterior(const Matrix& logits) const;
};

// One draw from Dirichlet(alpha * 1_m) via normalized Marsaglia-Tsang gamma
// draws.
SimplexVector sample_dirichlet_priors(double alpha, std::size_t m, std::uint64_t seed);

SimplexVector tweak_one_priors(std::size_t m, std::size_t class_index, double rho);

// Multinomial per-class counts, then uniform with-replacement sampling within
// each class stratum. Output has exactly n rows.
LabeledLogitSet resample_by_priors(const LabeledLogitSet& data, const SimplexVector& priors,
                                   std::size_t n, std::uint64_t seed);

SyntheticTask generate_synthetic_task(const SyntheticTaskSpec& spec, std::size_t n_valid,
                                      std::size_t n_pool);

// Realized target priors for a shift spec over m classes.
SimplexVector draw_shift_priors(const ShiftSpec& spec, std::size_t m);

}  // namespace labelshift
