#include "labelshift/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <sstream>
#include <thread>

#include "labelshift/metrics.hpp"

namespace labelshift {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::Em: return "EM";
    case Estimator::EmDirect: return "EM-direct";
    case Estimator::BbslHard: return "BBSL-hard";
    case Estimator::BbslSoft: return "BBSL-soft";
    case Estimator::RllsHard: return "RLLS-hard";
    case Estimator::RllsSoft: return "RLLS-soft";
  }
  return "EM";
}

Estimator estimator_from_string(const std::string& name) {
  if (name == "EM") return Estimator::Em;
  if (name == "EM-direct") return Estimator::EmDirect;
  if (name == "BBSL-hard") return Estimator::BbslHard;
  if (name == "BBSL-soft") return Estimator::BbslSoft;
  if (name == "RLLS-hard") return Estimator::RllsHard;
  if (name == "RLLS-soft") return Estimator::RllsSoft;
  throw ArgumentError("unknown estimator '" + name + "'");
}

namespace {

nlohmann::json shift_to_json(const ShiftKind& kind) {
  nlohmann::json j;
  if (std::holds_alternative<DirichletShift>(kind)) {
    j["kind"] = "dirichlet";
    j["alpha"] = std::get<DirichletShift>(kind).alpha;
  } else if (std::holds_alternative<TweakOneShift>(kind)) {
    const auto& t = std::get<TweakOneShift>(kind);
    j["kind"] = "tweak_one";
    j["class_index"] = t.class_index;
    j["rho"] = t.rho;
  } else {
    j["kind"] = "explicit";
    j["priors"] = std::get<ExplicitShift>(kind).priors;
  }
  return j;
}

ShiftKind shift_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "dirichlet") return DirichletShift{j.at("alpha").get<double>()};
  if (kind == "tweak_one")
    return TweakOneShift{j.at("class_index").get<std::size_t>(),
                         j.at("rho").get<double>()};
  if (kind == "explicit")
    return ExplicitShift{j.at("priors").get<std::vector<double>>()};
  throw ArgumentError("unknown shift kind '" + kind + "'");
}

std::string shift_kind_name(const ShiftKind& kind) {
  if (std::holds_alternative<DirichletShift>(kind)) return "dirichlet";
  if (std::holds_alternative<TweakOneShift>(kind)) return "tweak_one";
  return "explicit";
}

double shift_kind_param(const ShiftKind& kind) {
  if (std::holds_alternative<DirichletShift>(kind))
    return std::get<DirichletShift>(kind).alpha;
  if (std::holds_alternative<TweakOneShift>(kind))
    return std::get<TweakOneShift>(kind).rho;
  return 0.0;
}

// Seed-derivation tags; each purpose owns an independent stream.
enum SeedPurpose : std::uint64_t {
  kSeedValidSubsample = 1,
  kSeedShiftDraw = 2,
  kSeedTargetResample = 3,
  kSeedUnshiftedEval = 4,
};

std::uint64_t derive_seed(const ExperimentConfig& config, std::size_t trial,
                          SeedPurpose purpose, std::size_t n_index,
                          std::size_t shift_index = 0) {
  return Rng(config.master_seed)
      .split(trial + 1)
      .split(purpose)
      .split(n_index + 1)
      .split(shift_index + 1)
      .next_u64();
}

std::vector<std::size_t> sample_indices_without_replacement(std::size_t total,
                                                            std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.uniform_index(total - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

LabeledLogitSet take_rows(const LabeledLogitSet& data,
                          const std::vector<std::size_t>& idx) {
  Matrix logits(idx.size(), data.num_classes());
  std::vector<int> labels(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto row = data.logits().row(idx[k]);
    std::copy(row.begin(), row.end(), logits.row(k).begin());
    labels[k] = data.labels()[idx[k]];
  }
  return LabeledLogitSet(std::move(logits), std::move(labels));
}

LabeledLogitSet subsample(const LabeledLogitSet& data, std::size_t n,
                          std::uint64_t seed, bool stratified) {
  if (n > data.size())
    throw ArgumentError("subsample: requested " + std::to_string(n) + " of " +
                        std::to_string(data.size()) + " rows");
  Rng rng(seed);
  if (!stratified) {
    return take_rows(data, sample_indices_without_replacement(data.size(), n, rng));
  }
  const std::size_t m = data.num_classes();
  std::vector<std::vector<std::size_t>> strata(m);
  for (std::size_t k = 0; k < data.size(); ++k)
    strata[static_cast<std::size_t>(data.labels()[k])].push_back(k);
  // Proportional allocation; remainders go to the largest fractional parts.
  std::vector<std::size_t> counts(m, 0);
  std::vector<std::pair<double, std::size_t>> fractions;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double exact = static_cast<double>(n) * static_cast<double>(strata[i].size()) /
                         static_cast<double>(data.size());
    counts[i] = std::min(static_cast<std::size_t>(exact), strata[i].size());
    assigned += counts[i];
    fractions.emplace_back(exact - std::floor(exact), i);
  }
  std::sort(fractions.begin(), fractions.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  for (const auto& [frac, i] : fractions) {
    if (assigned >= n) break;
    if (counts[i] < strata[i].size()) {
      ++counts[i];
      ++assigned;
    }
  }
  for (std::size_t i = 0; assigned < n && i < m; ++i) {
    while (assigned < n && counts[i] < strata[i].size()) {
      ++counts[i];
      ++assigned;
    }
  }
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  for (std::size_t i = 0; i < m; ++i) {
    auto within = sample_indices_without_replacement(strata[i].size(), counts[i], rng);
    for (std::size_t w : within) chosen.push_back(strata[i][w]);
  }
  return take_rows(data, chosen);
}

SimplexVector label_frequencies(const std::vector<int>& labels, std::size_t m) {
  std::vector<double> freq(m, 0.0);
  const double inv_n = 1.0 / static_cast<double>(labels.size());
  for (int y : labels) freq[static_cast<std::size_t>(y)] += inv_n;
  return SimplexVector(std::move(freq));
}

void append_flag(std::string& flags, const std::string& flag) {
  if (!flags.empty()) flags += '|';
  flags += flag;
}

bool is_em_estimator(Estimator e) {
  return e == Estimator::Em || e == Estimator::EmDirect;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  const auto& d = j.at("dataset");
  const std::string kind = d.at("kind").get<std::string>();
  if (kind == "synthetic") {
    c.dataset.synthetic = true;
    auto& s = c.dataset.synthetic_spec;
    s.num_classes = d.at("num_classes").get<std::size_t>();
    if (d.contains("true_priors"))
      s.true_priors = d.at("true_priors").get<std::vector<double>>();
    if (d.contains("separation")) s.separation = d.at("separation").get<double>();
    if (d.contains("true_temperature"))
      s.true_temperature = d.at("true_temperature").get<double>();
    if (d.contains("true_biases"))
      s.true_biases = d.at("true_biases").get<std::vector<double>>();
    if (d.contains("seed")) s.seed = d.at("seed").get<std::uint64_t>();
    if (d.contains("n_valid"))
      c.dataset.synthetic_n_valid = d.at("n_valid").get<std::size_t>();
    if (d.contains("n_pool"))
      c.dataset.synthetic_n_pool = d.at("n_pool").get<std::size_t>();
  } else if (kind == "file") {
    c.dataset.synthetic = false;
    c.dataset.validation_path = d.at("validation").get<std::string>();
    c.dataset.pool_path = d.at("pool").get<std::string>();
  } else {
    throw ArgumentError("dataset kind must be 'file' or 'synthetic'");
  }
  for (const auto& name : j.at("calibration_families"))
    c.calibration_families.push_back(
        calibration_family_from_string(name.get<std::string>()));
  for (const auto& name : j.at("estimators"))
    c.estimators.push_back(estimator_from_string(name.get<std::string>()));
  if (j.contains("source_prior_mode")) {
    const std::string mode = j.at("source_prior_mode").get<std::string>();
    if (mode == "MeanPrediction")
      c.source_prior_mode = SourcePriorMode::MeanPrediction;
    else if (mode == "LabelFrequency")
      c.source_prior_mode = SourcePriorMode::LabelFrequency;
    else
      throw ArgumentError("unknown source_prior_mode '" + mode + "'");
  }
  for (const auto& s : j.at("shift_grid")) c.shift_grid.push_back(shift_from_json(s));
  c.n_grid = j.at("n_grid").get<std::vector<std::size_t>>();
  c.trials = j.at("trials").get<std::size_t>();
  if (j.contains("master_seed")) c.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("rlls")) {
    if (j["rlls"].contains("lambda")) c.rlls.lambda = j["rlls"]["lambda"].get<double>();
    if (j["rlls"].contains("delta")) c.rlls.delta = j["rlls"]["delta"].get<double>();
  }
  if (j.contains("em")) {
    if (j["em"].contains("tol")) c.em.tol = j["em"]["tol"].get<double>();
    if (j["em"].contains("max_iter"))
      c.em.max_iter = j["em"]["max_iter"].get<std::size_t>();
  }
  if (j.contains("stratified_validation"))
    c.stratified_validation = j.at("stratified_validation").get<bool>();
  if (j.contains("adapt_moment_weights"))
    c.adapt_moment_weights = j.at("adapt_moment_weights").get<bool>();
  if (j.contains("threads")) c.threads = j.at("threads").get<std::size_t>();
  c.validate();
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  if (dataset.synthetic) {
    j["dataset"] = {{"kind", "synthetic"},
                    {"num_classes", dataset.synthetic_spec.num_classes},
                    {"separation", dataset.synthetic_spec.separation},
                    {"true_temperature", dataset.synthetic_spec.true_temperature},
                    {"seed", dataset.synthetic_spec.seed},
                    {"n_valid", dataset.synthetic_n_valid},
                    {"n_pool", dataset.synthetic_n_pool}};
    if (!dataset.synthetic_spec.true_priors.empty())
      j["dataset"]["true_priors"] = dataset.synthetic_spec.true_priors;
    if (!dataset.synthetic_spec.true_biases.empty())
      j["dataset"]["true_biases"] = dataset.synthetic_spec.true_biases;
  } else {
    j["dataset"] = {{"kind", "file"},
                    {"validation", dataset.validation_path},
                    {"pool", dataset.pool_path}};
  }
  for (auto f : calibration_families)
    j["calibration_families"].push_back(to_string(f));
  for (auto e : estimators) j["estimators"].push_back(to_string(e));
  j["source_prior_mode"] = source_prior_mode == SourcePriorMode::MeanPrediction
                               ? "MeanPrediction"
                               : "LabelFrequency";
  for (const auto& s : shift_grid) j["shift_grid"].push_back(shift_to_json(s));
  j["n_grid"] = n_grid;
  j["trials"] = trials;
  j["master_seed"] = master_seed;
  j["rlls"] = {{"lambda", rlls.lambda}, {"delta", rlls.delta}};
  j["em"] = {{"tol", em.tol}, {"max_iter", em.max_iter}};
  j["stratified_validation"] = stratified_validation;
  j["adapt_moment_weights"] = adapt_moment_weights;
  j["threads"] = threads;
  return j;
}

void ExperimentConfig::validate() const {
  if (trials < 1) throw ArgumentError("config: trials must be >= 1");
  if (calibration_families.empty())
    throw ArgumentError("config: calibration_families must be non-empty");
  if (estimators.empty()) throw ArgumentError("config: estimators must be non-empty");
  if (shift_grid.empty()) throw ArgumentError("config: shift_grid must be non-empty");
  if (n_grid.empty()) throw ArgumentError("config: n_grid must be non-empty");
  for (std::size_t n : n_grid)
    if (n < 1) throw ArgumentError("config: sample sizes must be >= 1");
  if (rlls.lambda < 0.0) throw ArgumentError("config: rlls.lambda must be >= 0");
  if (rlls.delta < 0.0 || rlls.delta > 1.0)
    throw ArgumentError("config: rlls.delta must lie in [0, 1]");
  if (!(em.tol > 0.0)) throw ArgumentError("config: em.tol must be positive");
  if (!dataset.synthetic) {
    if (dataset.validation_path.empty() || dataset.pool_path.empty())
      throw ArgumentError("config: file dataset needs validation and pool paths");
  }
}

ExperimentData prepare_data(const ExperimentConfig& config) {
  if (config.dataset.synthetic) {
    SyntheticTask task =
        generate_synthetic_task(config.dataset.synthetic_spec,
                                config.dataset.synthetic_n_valid,
                                config.dataset.synthetic_n_pool);
    return ExperimentData{std::move(task.valid), std::move(task.pool)};
  }
  LabeledLogitSet valid = load_dataset(config.dataset.validation_path);
  LabeledLogitSet pool = load_dataset(config.dataset.pool_path);
  if (valid.num_classes() != pool.num_classes())
    throw ArgumentError("validation and pool class counts differ");
  return ExperimentData{std::move(valid), std::move(pool)};
}

std::vector<TrialRecord> run_trial(const ExperimentConfig& config,
                                   const ExperimentData& data, std::size_t trial_index) {
  const std::size_t m = data.validation.num_classes();
  std::vector<TrialRecord> records;

  for (std::size_t n_index = 0; n_index < config.n_grid.size(); ++n_index) {
    const std::size_t n = config.n_grid[n_index];
    const LabeledLogitSet vsub =
        subsample(data.validation, n,
                  derive_seed(config, trial_index, kSeedValidSubsample, n_index),
                  config.stratified_validation);
    const SimplexVector valid_freq = label_frequencies(vsub.labels(), m);

    // Unshifted evaluation set for the calibration-quality metrics.
    const LabeledLogitSet unshifted =
        subsample(data.pool, std::min(n, data.pool.size()),
                  derive_seed(config, trial_index, kSeedUnshiftedEval, n_index), false);

    struct FamilyState {
      CalibrationParams params;
      ProbMatrix valid_probs;
      SimplexVector source_priors;
      double nll_unshifted;
      double ece_unshifted;
      double js_bias;
      std::string fit_flags;
    };
    std::vector<FamilyState> families;
    for (CalibrationFamily family : config.calibration_families) {
      CalibrationParams params;
      std::string fit_flags;
      if (family != CalibrationFamily::None) {
        const CalibrationFitResult fit = fit_calibration(family, vsub);
        params = fit.params;
        if (!fit.converged) append_flag(fit_flags, "calibration_not_converged");
        if (fit.cap_active) append_flag(fit_flags, "calibration_cap_active");
      }
      ProbMatrix valid_probs = apply_calibration(params, vsub.logits());
      SimplexVector source_priors =
          config.source_prior_mode == SourcePriorMode::MeanPrediction
              ? estimate_source_priors(valid_probs, SourcePriorMode::MeanPrediction)
              : estimate_source_priors(valid_probs, SourcePriorMode::LabelFrequency,
                                       &vsub.labels());
      const ProbMatrix unshifted_probs = apply_calibration(params, unshifted.logits());
      const double nll_val = nll(unshifted_probs, unshifted.labels());
      const double ece_val = ece(unshifted_probs, unshifted.labels());
      const SimplexVector mean_pred =
          estimate_source_priors(unshifted_probs, SourcePriorMode::MeanPrediction);
      const SimplexVector unshifted_freq = label_frequencies(unshifted.labels(), m);
      const double js_val = js_divergence(unshifted_freq, mean_pred);
      families.push_back(FamilyState{std::move(params), std::move(valid_probs),
                                     std::move(source_priors), nll_val, ece_val, js_val,
                                     std::move(fit_flags)});
    }

    for (std::size_t shift_index = 0; shift_index < config.shift_grid.size();
         ++shift_index) {
      const ShiftKind& kind = config.shift_grid[shift_index];
      ShiftSpec spec{kind, n,
                     derive_seed(config, trial_index, kSeedShiftDraw, n_index, shift_index)};
      const SimplexVector nominal_priors = draw_shift_priors(spec, m);
      const LabeledLogitSet target = resample_by_priors(
          data.pool, nominal_priors, n,
          derive_seed(config, trial_index, kSeedTargetResample, n_index, shift_index));
      const SimplexVector realized_priors = label_frequencies(target.labels(), m);

      // True weights against realized frequencies; nominal draw kept as an
      // auxiliary reference.
      std::vector<double> true_w(m, 0.0), nominal_w(m, 0.0);
      bool true_w_defined = true;
      for (std::size_t i = 0; i < m; ++i) {
        if (valid_freq[i] > 0.0) {
          true_w[i] = realized_priors[i] / valid_freq[i];
          nominal_w[i] = nominal_priors[i] / valid_freq[i];
        } else if (realized_priors[i] > 0.0 || nominal_priors[i] > 0.0) {
          true_w_defined = false;
        }
      }

      for (std::size_t f = 0; f < families.size(); ++f) {
        const FamilyState& fam = families[f];
        const ProbMatrix target_probs =
            apply_calibration(fam.params, target.logits());

        for (Estimator estimator : config.estimators) {
          TrialRecord rec;
          rec.trial_id = trial_index;
          rec.shift_kind = shift_kind_name(kind);
          rec.shift_param = shift_kind_param(kind);
          rec.n = n;
          rec.estimator = to_string(estimator);
          rec.family = to_string(config.calibration_families[f]);
          rec.flags = fam.fit_flags;
          rec.nll_unshifted = fam.nll_unshifted;
          rec.ece_unshifted = fam.ece_unshifted;
          rec.js_bias = fam.js_bias;
          if (true_w_defined) rec.true_weights = true_w;

          try {
            ShiftWeights weights;
            switch (estimator) {
              case Estimator::Em: {
                EmResult em = em_estimate(target_probs, fam.source_priors,
                                          config.em.tol, config.em.max_iter);
                weights.values = em.weights;
                rec.em_iterations = em.iterations;
                if (!em.converged) append_flag(rec.flags, "em_not_converged");
                break;
              }
              case Estimator::EmDirect: {
                DirectMlOptions opts;
                opts.tol = config.em.tol;
                opts.max_iter = config.em.max_iter;
                EmResult em = ml_estimate_direct(target_probs, fam.source_priors, opts);
                weights.values = em.weights;
                rec.em_iterations = em.iterations;
                if (!em.converged) append_flag(rec.flags, "em_not_converged");
                break;
              }
              case Estimator::BbslHard:
              case Estimator::BbslSoft:
                weights = bbsl_estimate(estimator == Estimator::BbslHard
                                            ? ConfusionMode::Hard
                                            : ConfusionMode::Soft,
                                        fam.valid_probs, vsub.labels(), target_probs);
                break;
              case Estimator::RllsHard:
              case Estimator::RllsSoft:
                weights = rlls_estimate(estimator == Estimator::RllsHard
                                            ? ConfusionMode::Hard
                                            : ConfusionMode::Soft,
                                        fam.valid_probs, vsub.labels(), target_probs,
                                        config.rlls.lambda, config.rlls.delta);
                if (!weights.converged) append_flag(rec.flags, "rlls_not_converged");
                break;
            }
            rec.estimated_weights = weights.values;
            if (true_w_defined) {
              rec.mse = mse_weights(weights.values, true_w);
              rec.mse_nominal = mse_weights(weights.values, nominal_w);
            } else {
              append_flag(rec.flags, "true_weights_undefined");
            }
            if (is_em_estimator(estimator) || config.adapt_moment_weights) {
              try {
                const ProbMatrix adapted = adapt_predictions(target_probs, weights);
                rec.delta_acc = delta_accuracy(adapted, target_probs, target.labels());
              } catch (const std::exception&) {
                append_flag(rec.flags, "adaptation_degenerate");
              }
            }
          } catch (const SingularMatrixError&) {
            append_flag(rec.flags, "singular_confusion_matrix");
          } catch (const NumericalError&) {
            append_flag(rec.flags, "numerical_error");
          }
          records.push_back(std::move(rec));
        }
      }
    }
  }
  return records;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const ExperimentData data = prepare_data(config);
  for (std::size_t n : config.n_grid) {
    if (n > data.validation.size())
      throw ArgumentError("config: n=" + std::to_string(n) +
                          " exceeds validation set size " +
                          std::to_string(data.validation.size()));
  }

  std::size_t threads = config.threads;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<std::size_t>(threads, config.trials);

  std::vector<std::vector<TrialRecord>> per_trial(config.trials);
  if (threads <= 1) {
    for (std::size_t t = 0; t < config.trials; ++t)
      per_trial[t] = run_trial(config, data, t);
  } else {
    std::vector<std::future<void>> workers;
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < threads; ++w) {
      workers.push_back(std::async(std::launch::async, [&] {
        for (;;) {
          const std::size_t t = next.fetch_add(1);
          if (t >= config.trials) return;
          per_trial[t] = run_trial(config, data, t);
        }
      }));
    }
    for (auto& worker : workers) worker.get();
  }

  ExperimentResult result;
  for (auto& chunk : per_trial)
    for (auto& rec : chunk) result.records.push_back(std::move(rec));
  result.summary_markdown = summarize_markdown(result.records);
  return result;
}

namespace {

std::string format_sig5(double v) {
  if (std::isnan(v)) return "-";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.5g", v);
  return buf;
}

std::string format_full(double v) {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_weights(const std::vector<double>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) out += ';';
    out += format_full(w[i]);
  }
  return out;
}

std::vector<double> split_weights(const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string field;
  while (std::getline(ss, field, ';')) out.push_back(std::stod(field));
  return out;
}

constexpr const char* kCsvHeader =
    "trial_id,shift_kind,shift_param,n,estimator,family,mse,mse_nominal,"
    "delta_acc,nll_unshifted,ece_unshifted,js_bias,em_iterations,flags,"
    "true_weights,estimated_weights";

}  // namespace

std::string summarize_markdown(const std::vector<TrialRecord>& records) {
  // Group by (shift, n); within each group compare estimators that share a
  // calibration family, mirroring the reporting convention of label-shift
  // benchmarks: bold methods not significantly worse than the family best.
  struct CellKey {
    std::string shift_kind;
    double shift_param;
    std::size_t n;
    auto operator<=>(const CellKey&) const = default;
  };
  std::map<CellKey, std::map<std::string, std::map<std::string, std::map<std::size_t, const TrialRecord*>>>>
      cells;  // cell -> family -> estimator -> trial -> record
  for (const auto& rec : records) {
    cells[{rec.shift_kind, rec.shift_param, rec.n}][rec.family][rec.estimator]
         [rec.trial_id] = &rec;
  }

  std::ostringstream out;
  out << "# Experiment summary\n\n"
      << "Median weight MSE; median within-family rank (0 = best). Bold "
         "estimators are not significantly worse than the family best "
         "(one-sided Wilcoxon signed-rank, p < 0.01).\n";
  for (const auto& [key, by_family] : cells) {
    out << "\n## shift=" << key.shift_kind;
    if (key.shift_kind != "explicit") out << "(" << format_sig5(key.shift_param) << ")";
    out << ", n=" << key.n << "\n\n";
    out << "| Estimator | Calibration | Median MSE | Median rank | Median dAcc | "
           "Median NLL | Median ECE |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const auto& [family, by_estimator] : by_family) {
      // Trials where every estimator in the family group has a finite MSE.
      std::vector<std::string> names;
      for (const auto& [name, _] : by_estimator) names.push_back(name);
      std::vector<std::size_t> paired_trials;
      {
        std::map<std::size_t, std::size_t> counts;
        for (const auto& [name, by_trial] : by_estimator)
          for (const auto& [t, rec] : by_trial)
            if (!std::isnan(rec->mse)) ++counts[t];
        for (const auto& [t, c] : counts)
          if (c == names.size()) paired_trials.push_back(t);
      }
      // Per-estimator medians over its own finite trials.
      std::map<std::string, double> med_mse, med_dacc, med_nll, med_ece;
      for (const auto& [name, by_trial] : by_estimator) {
        std::vector<double> mses, daccs, nlls, eces;
        for (const auto& [t, rec] : by_trial) {
          if (!std::isnan(rec->mse)) mses.push_back(rec->mse);
          if (!std::isnan(rec->delta_acc)) daccs.push_back(rec->delta_acc);
          if (!std::isnan(rec->nll_unshifted)) nlls.push_back(rec->nll_unshifted);
          if (!std::isnan(rec->ece_unshifted)) eces.push_back(rec->ece_unshifted);
        }
        med_mse[name] = mses.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : median(mses);
        med_dacc[name] = daccs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : median(daccs);
        med_nll[name] = nlls.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : median(nlls);
        med_ece[name] = eces.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : median(eces);
      }
      // Best by median MSE; median ranks over paired trials.
      std::string best;
      for (const auto& [name, med] : med_mse) {
        if (std::isnan(med)) continue;
        if (best.empty() || med < med_mse[best]) best = name;
      }
      std::map<std::string, double> ranks;
      if (names.size() >= 2 && !paired_trials.empty()) {
        Matrix scores(paired_trials.size(), names.size());
        for (std::size_t t = 0; t < paired_trials.size(); ++t)
          for (std::size_t j = 0; j < names.size(); ++j)
            scores.at(t, j) =
                by_estimator.at(names[j]).at(paired_trials[t])->mse;
        const std::vector<double> med_ranks = rank_methods(scores, true);
        for (std::size_t j = 0; j < names.size(); ++j) ranks[names[j]] = med_ranks[j];
      }
      for (const auto& name : names) {
        bool bold = false;
        if (name == best) {
          bold = true;
        } else if (!best.empty()) {
          std::vector<double> diffs;
          for (std::size_t t : paired_trials)
            diffs.push_back(by_estimator.at(name).at(t)->mse -
                            by_estimator.at(best).at(t)->mse);
          bool all_zero = true;
          for (double d : diffs) all_zero = all_zero && d == 0.0;
          if (diffs.empty() || all_zero) {
            bold = true;  // indistinguishable from the best
          } else {
            const double p = wilcoxon_signed_rank(diffs, TailAlternative::Greater);
            bold = p >= 0.01;
          }
        }
        const std::string shown = bold ? "**" + name + "**" : name;
        out << "| " << shown << " | " << family << " | " << format_sig5(med_mse[name])
            << " | "
            << (ranks.count(name) ? format_sig5(ranks[name]) : std::string("-"))
            << " | " << format_sig5(med_dacc[name]) << " | "
            << format_sig5(med_nll[name]) << " | " << format_sig5(med_ece[name])
            << " |\n";
      }
    }
  }
  return out.str();
}

std::string render_report(const std::vector<TrialRecord>& records, ReportFormat format) {
  if (records.empty()) throw ArgumentError("render_report: no records");
  if (format == ReportFormat::Markdown) return summarize_markdown(records);
  if (format == ReportFormat::Json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& rec : records) {
      nlohmann::json j;
      j["trial_id"] = rec.trial_id;
      j["shift_kind"] = rec.shift_kind;
      j["shift_param"] = rec.shift_param;
      j["n"] = rec.n;
      j["estimator"] = rec.estimator;
      j["family"] = rec.family;
      j["true_weights"] = rec.true_weights;
      j["estimated_weights"] = rec.estimated_weights;
      const auto set_num = [&j](const char* key, double v) {
        if (std::isnan(v))
          j[key] = nullptr;
        else
          j[key] = v;
      };
      set_num("mse", rec.mse);
      set_num("mse_nominal", rec.mse_nominal);
      set_num("delta_acc", rec.delta_acc);
      set_num("nll_unshifted", rec.nll_unshifted);
      set_num("ece_unshifted", rec.ece_unshifted);
      set_num("js_bias", rec.js_bias);
      j["em_iterations"] = rec.em_iterations;
      j["flags"] = rec.flags;
      arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
  }
  std::ostringstream out;
  out << kCsvHeader << '\n';
  for (const auto& rec : records) {
    out << rec.trial_id << ',' << rec.shift_kind << ',' << format_full(rec.shift_param)
        << ',' << rec.n << ',' << rec.estimator << ',' << rec.family << ','
        << format_full(rec.mse) << ',' << format_full(rec.mse_nominal) << ','
        << format_full(rec.delta_acc) << ',' << format_full(rec.nll_unshifted) << ','
        << format_full(rec.ece_unshifted) << ',' << format_full(rec.js_bias) << ','
        << rec.em_iterations << ',' << rec.flags << ',' << join_weights(rec.true_weights)
        << ',' << join_weights(rec.estimated_weights) << '\n';
  }
  return out.str();
}

void write_report(const std::vector<TrialRecord>& records, const std::string& path,
                  ReportFormat format) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << render_report(records, format);
  if (!out) throw IoError("write failed for " + path);
}

std::vector<TrialRecord> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  if (line != kCsvHeader) throw ParseError(path + ":1: unexpected header");
  std::vector<TrialRecord> records;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != 16)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 16 fields");
    try {
      TrialRecord rec;
      rec.trial_id = std::stoul(fields[0]);
      rec.shift_kind = fields[1];
      rec.shift_param = std::stod(fields[2]);
      rec.n = std::stoul(fields[3]);
      rec.estimator = fields[4];
      rec.family = fields[5];
      rec.mse = std::stod(fields[6]);
      rec.mse_nominal = std::stod(fields[7]);
      rec.delta_acc = std::stod(fields[8]);
      rec.nll_unshifted = std::stod(fields[9]);
      rec.ece_unshifted = std::stod(fields[10]);
      rec.js_bias = std::stod(fields[11]);
      rec.em_iterations = std::stoul(fields[12]);
      rec.flags = fields[13];
      rec.true_weights = split_weights(fields[14]);
      rec.estimated_weights = split_weights(fields[15]);
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

namespace {

bool near_or_both_nan(double a, double b) {
  if (std::isnan(a) && std::isnan(b)) return true;
  return a == b;
}

}  // namespace

bool records_equal(const TrialRecord& a, const TrialRecord& b) {
  if (a.trial_id != b.trial_id || a.shift_kind != b.shift_kind || a.n != b.n ||
      a.estimator != b.estimator || a.family != b.family ||
      a.em_iterations != b.em_iterations || a.flags != b.flags)
    return false;
  if (!near_or_both_nan(a.shift_param, b.shift_param)) return false;
  if (!near_or_both_nan(a.mse, b.mse) || !near_or_both_nan(a.mse_nominal, b.mse_nominal))
    return false;
  if (!near_or_both_nan(a.delta_acc, b.delta_acc)) return false;
  if (!near_or_both_nan(a.nll_unshifted, b.nll_unshifted)) return false;
  if (!near_or_both_nan(a.ece_unshifted, b.ece_unshifted)) return false;
  if (!near_or_both_nan(a.js_bias, b.js_bias)) return false;
  if (a.true_weights != b.true_weights || a.estimated_weights != b.estimated_weights)
    return false;
  return true;
}

}  // namespace labelshift
