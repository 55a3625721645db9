#include "labelshift/calibration.hpp"

#include <algorithm>
#include <cmath>

namespace labelshift {

std::string to_string(CalibrationFamily family) {
  switch (family) {
    case CalibrationFamily::None: return "None";
    case CalibrationFamily::TS: return "TS";
    case CalibrationFamily::NBVS: return "NBVS";
    case CalibrationFamily::BCTS: return "BCTS";
    case CalibrationFamily::VS: return "VS";
  }
  return "None";
}

CalibrationFamily calibration_family_from_string(const std::string& name) {
  if (name == "None" || name == "none") return CalibrationFamily::None;
  if (name == "TS" || name == "ts") return CalibrationFamily::TS;
  if (name == "NBVS" || name == "nbvs") return CalibrationFamily::NBVS;
  if (name == "BCTS" || name == "bcts") return CalibrationFamily::BCTS;
  if (name == "VS" || name == "vs") return CalibrationFamily::VS;
  throw ArgumentError("unknown calibration family '" + name + "'");
}

nlohmann::json CalibrationParams::to_json() const {
  nlohmann::json j;
  j["family"] = to_string(family);
  if (family == CalibrationFamily::TS || family == CalibrationFamily::BCTS)
    j["T"] = temperature;
  if (family == CalibrationFamily::NBVS || family == CalibrationFamily::VS)
    j["W"] = scales;
  if (family == CalibrationFamily::BCTS || family == CalibrationFamily::VS)
    j["b"] = biases;
  return j;
}

CalibrationParams CalibrationParams::from_json(const nlohmann::json& j) {
  CalibrationParams p;
  p.family = calibration_family_from_string(j.at("family").get<std::string>());
  if (j.contains("T")) p.temperature = j.at("T").get<double>();
  if (j.contains("W")) p.scales = j.at("W").get<std::vector<double>>();
  if (j.contains("b")) p.biases = j.at("b").get<std::vector<double>>();
  if (p.temperature <= 0.0) throw ArgumentError("calibration params: T must be positive");
  for (double w : p.scales)
    if (w <= 0.0) throw ArgumentError("calibration params: W entries must be positive");
  return p;
}

namespace {

bool uses_temperature(CalibrationFamily f) {
  return f == CalibrationFamily::TS || f == CalibrationFamily::BCTS;
}
bool uses_scales(CalibrationFamily f) {
  return f == CalibrationFamily::NBVS || f == CalibrationFamily::VS;
}
bool uses_biases(CalibrationFamily f) {
  return f == CalibrationFamily::BCTS || f == CalibrationFamily::VS;
}

constexpr double kLogScaleCap = 10.0;  // |log T|, |log W_i|
constexpr double kBiasCap = 20.0;      // |b_i|

void check_dims(const CalibrationParams& p, std::size_t m) {
  if (uses_scales(p.family) && p.scales.size() != m)
    throw ArgumentError("calibration params: W has length " +
                        std::to_string(p.scales.size()) + ", logits have " +
                        std::to_string(m) + " classes");
  if (uses_biases(p.family) && p.biases.size() != m)
    throw ArgumentError("calibration params: b has length " +
                        std::to_string(p.biases.size()) + ", logits have " +
                        std::to_string(m) + " classes");
  if (uses_temperature(p.family) && p.temperature <= 0.0)
    throw ArgumentError("calibration params: T must be positive");
}

// g(z)_i for one row, in place.
void transform_row(const CalibrationParams& p, std::span<const double> z,
                   std::span<double> g) {
  const std::size_t m = z.size();
  switch (p.family) {
    case CalibrationFamily::None:
      std::copy(z.begin(), z.end(), g.begin());
      break;
    case CalibrationFamily::TS:
      for (std::size_t i = 0; i < m; ++i) g[i] = z[i] / p.temperature;
      break;
    case CalibrationFamily::NBVS:
      for (std::size_t i = 0; i < m; ++i) g[i] = z[i] * p.scales[i];
      break;
    case CalibrationFamily::BCTS:
      for (std::size_t i = 0; i < m; ++i) g[i] = z[i] / p.temperature + p.biases[i];
      break;
    case CalibrationFamily::VS:
      for (std::size_t i = 0; i < m; ++i) g[i] = z[i] * p.scales[i] + p.biases[i];
      break;
  }
}

std::size_t param_count(CalibrationFamily f, std::size_t m) {
  switch (f) {
    case CalibrationFamily::None: return 0;
    case CalibrationFamily::TS: return 1;
    case CalibrationFamily::NBVS: return m;
    case CalibrationFamily::BCTS: return 1 + m;
    case CalibrationFamily::VS: return 2 * m;
  }
  return 0;
}

// theta layout: [log T] | [log W_0..m-1] | [b_0..m-1] depending on family.
CalibrationParams unpack(CalibrationFamily f, std::size_t m,
                         const std::vector<double>& theta) {
  CalibrationParams p;
  p.family = f;
  std::size_t off = 0;
  if (uses_temperature(f)) p.temperature = std::exp(theta[off++]);
  if (uses_scales(f)) {
    p.scales.resize(m);
    for (std::size_t i = 0; i < m; ++i) p.scales[i] = std::exp(theta[off++]);
  }
  if (uses_biases(f)) {
    p.biases.assign(theta.begin() + off, theta.begin() + off + m);
  }
  return p;
}

std::vector<double> pack(const CalibrationParams& p, std::size_t m) {
  std::vector<double> theta;
  if (uses_temperature(p.family)) theta.push_back(std::log(p.temperature));
  if (uses_scales(p.family))
    for (std::size_t i = 0; i < m; ++i) theta.push_back(std::log(p.scales[i]));
  if (uses_biases(p.family))
    theta.insert(theta.end(), p.biases.begin(), p.biases.end());
  return theta;
}

void cap_bounds(CalibrationFamily f, std::size_t m, std::vector<double>& lo,
                std::vector<double>& hi) {
  lo.clear();
  hi.clear();
  std::size_t n_log = (uses_temperature(f) ? 1 : 0) + (uses_scales(f) ? m : 0);
  for (std::size_t i = 0; i < n_log; ++i) {
    lo.push_back(-kLogScaleCap);
    hi.push_back(kLogScaleCap);
  }
  if (uses_biases(f)) {
    for (std::size_t i = 0; i < m; ++i) {
      lo.push_back(-kBiasCap);
      hi.push_back(kBiasCap);
    }
  }
}

// NLL and its gradient w.r.t. theta.
double nll_and_gradient(CalibrationFamily f, const LabeledLogitSet& data,
                        const std::vector<double>& theta, std::vector<double>* grad) {
  const std::size_t n = data.size();
  const std::size_t m = data.num_classes();
  const CalibrationParams p = unpack(f, m, theta);
  if (grad) grad->assign(theta.size(), 0.0);

  std::vector<double> g(m), probs(m);
  double nll = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto z = data.logits().row(k);
    transform_row(p, z, g);
    const double lse = log_sum_exp(g);
    const int y = data.labels()[k];
    nll += (lse - g[y]) * inv_n;
    if (!grad) continue;
    for (std::size_t i = 0; i < m; ++i) probs[i] = std::exp(g[i] - lse);
    // residual r_i = (p_i - 1{i=y}) / n; chain through the parameterization
    std::size_t off = 0;
    if (uses_temperature(f)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double r = (probs[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) * inv_n;
        acc += r * (-z[i] / p.temperature);  // dg_i/d(log T)
      }
      (*grad)[off++] += acc;
    }
    if (uses_scales(f)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double r = (probs[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) * inv_n;
        (*grad)[off + i] += r * z[i] * p.scales[i];  // dg_i/d(log W_i)
      }
      off += m;
    }
    if (uses_biases(f)) {
      for (std::size_t i = 0; i < m; ++i) {
        const double r = (probs[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) * inv_n;
        (*grad)[off + i] += r;
      }
    }
  }
  if (!std::isfinite(nll))
    throw NumericalError("calibration: non-finite NLL during evaluation");
  return nll;
}

}  // namespace

ProbMatrix apply_calibration(const CalibrationParams& params, const Matrix& logits) {
  check_dims(params, logits.cols);
  Matrix out(logits.rows, logits.cols);
  std::vector<double> g(logits.cols);
  for (std::size_t k = 0; k < logits.rows; ++k) {
    transform_row(params, logits.row(k), g);
    softmax_inplace(g, out.row(k));
  }
  return ProbMatrix(std::move(out));
}

double calibration_nll(const CalibrationParams& params, const LabeledLogitSet& data) {
  check_dims(params, data.num_classes());
  const std::size_t m = data.num_classes();
  std::vector<double> g(m);
  double nll = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    transform_row(params, data.logits().row(k), g);
    nll += log_sum_exp(g) - g[data.labels()[k]];
  }
  return nll / static_cast<double>(data.size());
}

std::vector<double> calibration_nll_gradient(const CalibrationParams& params,
                                             const LabeledLogitSet& data) {
  check_dims(params, data.num_classes());
  if (params.family == CalibrationFamily::None)
    throw ArgumentError("calibration gradient: family None has no parameters");
  std::vector<double> theta = pack(params, data.num_classes());
  std::vector<double> grad;
  nll_and_gradient(params.family, data, theta, &grad);
  return grad;
}

CalibrationFitResult fit_calibration(CalibrationFamily family,
                                     const LabeledLogitSet& valid,
                                     const OptimizerSettings& opts) {
  if (family == CalibrationFamily::None)
    throw ArgumentError("fit_calibration: family None has nothing to fit");
  const std::size_t m = valid.num_classes();
  const std::size_t dim = param_count(family, m);

  std::vector<double> lo, hi;
  cap_bounds(family, m, lo, hi);

  std::vector<double> theta(dim, 0.0);  // identity transform
  std::vector<double> grad, prev_theta, prev_grad;
  double f;
  try {
    f = nll_and_gradient(family, valid, theta, &grad);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(e.what()) + " (at initialization)");
  }

  CalibrationFitResult result;
  double alpha = 1.0;
  std::size_t iter = 0;
  bool cap_hit = false;
  for (; iter < opts.max_iter; ++iter) {
    // Projected gradient: components pinned at an active cap do not count
    // toward the stationarity check.
    double proj_norm = 0.0;
    bool at_cap = false;
    for (std::size_t j = 0; j < dim; ++j) {
      const bool pinned_lo = theta[j] <= lo[j] && grad[j] > 0.0;
      const bool pinned_hi = theta[j] >= hi[j] && grad[j] < 0.0;
      if (pinned_lo || pinned_hi) {
        at_cap = true;
        continue;
      }
      proj_norm = std::max(proj_norm, std::abs(grad[j]));
    }
    cap_hit = cap_hit || at_cap;
    if (proj_norm <= opts.grad_tol) {
      result.converged = true;
      break;
    }

    // Barzilai-Borwein initial step, then Armijo backtracking.
    if (iter > 0) {
      double ss = 0.0, sy = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double s = theta[j] - prev_theta[j];
        const double y = grad[j] - prev_grad[j];
        ss += s * s;
        sy += s * y;
      }
      if (sy > 0.0 && std::isfinite(ss / sy)) alpha = std::clamp(ss / sy, 1e-10, 1e6);
    }

    prev_theta = theta;
    prev_grad = grad;
    std::vector<double> trial(dim), trial_grad;
    double f_new = f;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      double step_sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        trial[j] = std::clamp(theta[j] - alpha * grad[j], lo[j], hi[j]);
        const double d = trial[j] - theta[j];
        step_sq += d * d;
      }
      if (step_sq == 0.0) break;
      try {
        f_new = nll_and_gradient(family, valid, trial, &trial_grad);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (iteration " +
                             std::to_string(iter) + ", step " + std::to_string(alpha) + ")");
      }
      if (f_new <= f - 1e-4 / alpha * step_sq) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // No further descent possible at machine precision.
      result.converged = proj_norm <= opts.grad_tol || at_cap;
      break;
    }
    theta = std::move(trial);
    grad = std::move(trial_grad);
    f = f_new;
  }

  result.params = unpack(family, m, theta);
  result.nll = f;
  result.iterations = iter;
  result.cap_active = cap_hit;
  if (iter >= opts.max_iter) result.converged = false;
  if (cap_hit)
    result.warning =
        "parameter cap active (degenerate class or extreme logits); "
        "stationarity not guaranteed";
  // A class absent from the labels leaves its bias unidentified (the gradient
  // only ever pushes it down); flag it even when the cap was not reached.
  if (uses_biases(family)) {
    std::vector<bool> seen(m, false);
    for (int l : valid.labels()) seen[static_cast<std::size_t>(l)] = true;
    for (std::size_t i = 0; i < m; ++i) {
      if (!seen[i]) {
        if (!result.warning.empty()) result.warning += "; ";
        result.warning +=
            "class " + std::to_string(i) + " absent from labels; its bias is "
            "driven toward the cap";
        break;
      }
    }
  }
  return result;
}

}  // namespace labelshift
