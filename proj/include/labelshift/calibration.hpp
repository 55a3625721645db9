#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "labelshift/dataset.hpp"

namespace labelshift {

enum class CalibrationFamily { None, TS, NBVS, BCTS, VS };

std::string to_string(CalibrationFamily family);
CalibrationFamily calibration_family_from_string(const std::string& name);

// Fitted post-hoc calibration transform. Only the fields used by the family
// are meaningful; the rest stay at their identity values.
struct CalibrationParams {
  CalibrationFamily family = CalibrationFamily::None;
  double temperature = 1.0;          // TS, BCTS
  std::vector<double> scales;        // NBVS, VS (per-class, positive)
  std::vector<double> biases;        // BCTS, VS (per-class)

  nlohmann::json to_json() const;
  static CalibrationParams from_json(const nlohmann::json& j);
};

struct OptimizerSettings {
  double grad_tol = 1e-6;
  std::size_t max_iter = 10000;
};

struct CalibrationFitResult {
  CalibrationParams params;
  double nll = 0.0;                  // achieved NLL on the fitting set
  std::size_t iterations = 0;
  bool converged = false;            // gradient tolerance reached
  bool cap_active = false;           // a parameter bound was hit
  std::string warning;
};

// Row-wise softmax of the family's logit transform:
//   None: z_i   TS: z_i/T   NBVS: z_i*W_i   BCTS: z_i/T + b_i   VS: z_i*W_i + b_i
ProbMatrix apply_calibration(const CalibrationParams& params, const Matrix& logits);

// Minimizes validation NLL by full-batch gradient descent with backtracking
// line search; T and W are optimized in log-space.
CalibrationFitResult fit_calibration(CalibrationFamily family,
                                     const LabeledLogitSet& valid,
                                     const OptimizerSettings& opts = {});

// NLL of the calibrated probabilities on the given labels (nats).
double calibration_nll(const CalibrationParams& params, const LabeledLogitSet& data);

// Analytic NLL gradient in the optimizer's parameterization (log T / log W,
// raw biases). Exposed for finite-difference verification.
std::vector<double> calibration_nll_gradient(const CalibrationParams& params,
                                             const LabeledLogitSet& data);

}  // namespace labelshift
