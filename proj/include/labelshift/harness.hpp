#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "labelshift/calibration.hpp"
#include "labelshift/shift_estimation.hpp"
#include "labelshift/shift_simulation.hpp"

namespace labelshift {

enum class Estimator { Em, EmDirect, BbslHard, BbslSoft, RllsHard, RllsSoft };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& name);

using ShiftKind = std::variant<DirichletShift, TweakOneShift, ExplicitShift>;

// Dataset source: a pair of files (validation + resampling pool) or a
// synthetic Gaussian-mixture task generated from a spec.
struct DatasetSource {
  bool synthetic = false;
  std::string validation_path;
  std::string pool_path;
  SyntheticTaskSpec synthetic_spec;
  std::size_t synthetic_n_valid = 20000;
  std::size_t synthetic_n_pool = 40000;
};

struct RllsConfig {
  double lambda = 1e-3;
  double delta = 1.0;
};

struct EmConfig {
  double tol = 1e-10;
  std::size_t max_iter = 10000;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<CalibrationFamily> calibration_families;
  std::vector<Estimator> estimators;
  SourcePriorMode source_prior_mode = SourcePriorMode::MeanPrediction;
  std::vector<ShiftKind> shift_grid;
  std::vector<std::size_t> n_grid;
  std::size_t trials = 1;
  std::uint64_t master_seed = 0;
  RllsConfig rlls;
  EmConfig em;
  bool stratified_validation = false;  // stratify the validation subsample by class
  bool adapt_moment_weights = false;   // also adapt predictions with BBSL/RLLS weights
  std::size_t threads = 0;             // 0 = hardware concurrency

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

// One (estimator, calibration, shift, n, seed) run with all metrics. NaN
// metric fields mean "not computed" (estimator failure or not applicable).
struct TrialRecord {
  std::size_t trial_id = 0;
  std::string shift_kind;     // "dirichlet" | "tweak_one" | "explicit"
  double shift_param = 0.0;   // alpha or rho; 0 for explicit
  std::size_t n = 0;
  std::string estimator;
  std::string family;
  std::vector<double> true_weights;
  std::vector<double> estimated_weights;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double mse_nominal = std::numeric_limits<double>::quiet_NaN();
  double delta_acc = std::numeric_limits<double>::quiet_NaN();
  double nll_unshifted = std::numeric_limits<double>::quiet_NaN();
  double ece_unshifted = std::numeric_limits<double>::quiet_NaN();
  double js_bias = std::numeric_limits<double>::quiet_NaN();
  std::size_t em_iterations = 0;
  std::string flags;
};

// Field-wise equality with NaN treated as equal to NaN.
bool records_equal(const TrialRecord& a, const TrialRecord& b);

struct ExperimentResult {
  std::vector<TrialRecord> records;
  std::string summary_markdown;
};

// Shared immutable inputs for a trial sweep.
struct ExperimentData {
  LabeledLogitSet validation;
  LabeledLogitSet pool;
};

ExperimentData prepare_data(const ExperimentConfig& config);

// Runs the full grid for one trial. Deterministic given (config, trial_index).
std::vector<TrialRecord> run_trial(const ExperimentConfig& config,
                                   const ExperimentData& data, std::size_t trial_index);

ExperimentResult run_experiment(const ExperimentConfig& config);

// Median metric, median rank and Wilcoxon-vs-best comparison per
// (shift, n, calibration) group; bold marks methods not significantly worse
// than the group best at one-sided p < 0.01.
std::string summarize_markdown(const std::vector<TrialRecord>& records);

enum class ReportFormat { Csv, Markdown, Json };

void write_report(const std::vector<TrialRecord>& records, const std::string& path,
                  ReportFormat format);
std::string render_report(const std::vector<TrialRecord>& records, ReportFormat format);
std::vector<TrialRecord> read_records_csv(const std::string& path);

}  // namespace labelshift
