#include "labelshift.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "labelshift/harness.hpp"
#include "labelshift/metrics.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename Fn>
lsh_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return LSH_OK;
  } catch (const labelshift::ParseError& e) {
    set_error(e.what());
    return LSH_ERR_PARSE;
  } catch (const labelshift::SingularMatrixError& e) {
    set_error(e.what());
    return LSH_ERR_SINGULAR;
  } catch (const labelshift::NumericalError& e) {
    set_error(e.what());
    return LSH_ERR_NUMERIC;
  } catch (const labelshift::IoError& e) {
    set_error(e.what());
    return LSH_ERR_IO;
  } catch (const labelshift::ArgumentError& e) {
    set_error(e.what());
    return LSH_ERR_ARGUMENT;
  } catch (const nlohmann::json::exception& e) {
    set_error(e.what());
    return LSH_ERR_PARSE;
  } catch (const std::exception& e) {
    set_error(e.what());
    return LSH_ERR_UNKNOWN;
  }
}

}  // namespace

struct lsh_dataset {
  labelshift::LabeledLogitSet data;
};

struct lsh_calibration {
  labelshift::CalibrationFitResult fit;
};

extern "C" {

const char* lsh_last_error(void) { return g_last_error.c_str(); }

lsh_status lsh_dataset_load(const char* path, lsh_dataset** out) {
  return guarded([&] {
    if (path == nullptr || out == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    *out = new lsh_dataset{labelshift::load_dataset(path)};
  });
}

lsh_status lsh_dataset_save(const lsh_dataset* data, const char* path) {
  return guarded([&] {
    if (data == nullptr || path == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    labelshift::save_dataset(data->data, path);
  });
}

void lsh_dataset_free(lsh_dataset* data) { delete data; }

size_t lsh_dataset_size(const lsh_dataset* data) {
  return data == nullptr ? 0 : data->data.size();
}

size_t lsh_dataset_num_classes(const lsh_dataset* data) {
  return data == nullptr ? 0 : data->data.num_classes();
}

lsh_status lsh_calibration_fit(const lsh_dataset* valid, const char* family,
                               lsh_calibration** out) {
  return guarded([&] {
    if (valid == nullptr || family == nullptr || out == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    const auto fam = labelshift::calibration_family_from_string(family);
    *out = new lsh_calibration{labelshift::fit_calibration(fam, valid->data)};
  });
}

lsh_status lsh_calibration_load(const char* path, lsh_calibration** out) {
  return guarded([&] {
    if (path == nullptr || out == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    std::ifstream in(path);
    if (!in) throw labelshift::IoError(std::string("cannot open ") + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw labelshift::ParseError(std::string(path) + ": " + e.what());
    }
    labelshift::CalibrationFitResult fit;
    fit.params = labelshift::CalibrationParams::from_json(j);
    fit.converged = true;
    *out = new lsh_calibration{std::move(fit)};
  });
}

lsh_status lsh_calibration_save(const lsh_calibration* calib, const char* path) {
  return guarded([&] {
    if (calib == nullptr || path == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    std::ofstream out(path);
    if (!out) throw labelshift::IoError(std::string("cannot write ") + path);
    out << calib->fit.params.to_json().dump(2) << '\n';
    if (!out) throw labelshift::IoError(std::string("write failed for ") + path);
  });
}

lsh_status lsh_calibration_describe(const lsh_calibration* calib, char* buf,
                                    size_t buf_len) {
  return guarded([&] {
    if (calib == nullptr || buf == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    nlohmann::json j = calib->fit.params.to_json();
    j["nll"] = calib->fit.nll;
    j["iterations"] = calib->fit.iterations;
    j["converged"] = calib->fit.converged;
    if (!calib->fit.warning.empty()) j["warning"] = calib->fit.warning;
    const std::string text = j.dump(2);
    if (text.size() + 1 > buf_len)
      throw labelshift::ArgumentError("buffer too small (need " +
                                      std::to_string(text.size() + 1) + " bytes)");
    std::memcpy(buf, text.c_str(), text.size() + 1);
  });
}

void lsh_calibration_free(lsh_calibration* calib) { delete calib; }

lsh_status lsh_apply_calibration(const lsh_calibration* calib, const lsh_dataset* data,
                                 double* probs_out, size_t probs_len) {
  return guarded([&] {
    if (data == nullptr || probs_out == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    const labelshift::CalibrationParams params =
        calib ? calib->fit.params : labelshift::CalibrationParams{};
    const auto probs = labelshift::apply_calibration(params, data->data.logits());
    const size_t need = probs.size() * probs.num_classes();
    if (probs_len < need)
      throw labelshift::ArgumentError("probability buffer too small (need " +
                                      std::to_string(need) + " doubles)");
    std::memcpy(probs_out, probs.matrix().data.data(), need * sizeof(double));
  });
}

lsh_status lsh_estimate_shift(const lsh_dataset* valid, const lsh_dataset* target,
                              const lsh_calibration* calib, const char* estimator,
                              const char* options_json, double* weights_out,
                              double* priors_out, size_t len) {
  return guarded([&] {
    if (valid == nullptr || target == nullptr || estimator == nullptr ||
        weights_out == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    const size_t m = valid->data.num_classes();
    if (len < m)
      throw labelshift::ArgumentError("output buffer too small (need " +
                                      std::to_string(m) + " doubles)");
    auto mode = labelshift::SourcePriorMode::MeanPrediction;
    labelshift::EmConfig em_cfg;
    labelshift::RllsConfig rlls_cfg;
    if (options_json != nullptr && options_json[0] != '\0') {
      nlohmann::json opts;
      try {
        opts = nlohmann::json::parse(options_json);
      } catch (const nlohmann::json::exception& e) {
        throw labelshift::ParseError(std::string("options_json: ") + e.what());
      }
      if (opts.contains("source_prior_mode")) {
        const std::string name = opts["source_prior_mode"].get<std::string>();
        if (name == "MeanPrediction")
          mode = labelshift::SourcePriorMode::MeanPrediction;
        else if (name == "LabelFrequency")
          mode = labelshift::SourcePriorMode::LabelFrequency;
        else
          throw labelshift::ArgumentError("unknown source_prior_mode '" + name + "'");
      }
      if (opts.contains("em")) {
        if (opts["em"].contains("tol")) em_cfg.tol = opts["em"]["tol"].get<double>();
        if (opts["em"].contains("max_iter"))
          em_cfg.max_iter = opts["em"]["max_iter"].get<size_t>();
      }
      if (opts.contains("rlls")) {
        if (opts["rlls"].contains("lambda"))
          rlls_cfg.lambda = opts["rlls"]["lambda"].get<double>();
        if (opts["rlls"].contains("delta"))
          rlls_cfg.delta = opts["rlls"]["delta"].get<double>();
      }
    }

    const labelshift::CalibrationParams params =
        calib ? calib->fit.params : labelshift::CalibrationParams{};
    const auto valid_probs =
        labelshift::apply_calibration(params, valid->data.logits());
    const auto target_probs =
        labelshift::apply_calibration(params, target->data.logits());
    const auto est = labelshift::estimator_from_string(estimator);
    const auto source_priors =
        mode == labelshift::SourcePriorMode::MeanPrediction
            ? labelshift::estimate_source_priors(
                  valid_probs, labelshift::SourcePriorMode::MeanPrediction)
            : labelshift::estimate_source_priors(
                  valid_probs, labelshift::SourcePriorMode::LabelFrequency,
                  &valid->data.labels());

    std::vector<double> weights(m, 0.0);
    std::vector<double> priors(m, 0.0);
    switch (est) {
      case labelshift::Estimator::Em:
      case labelshift::Estimator::EmDirect: {
        const labelshift::EmResult result = [&] {
          if (est == labelshift::Estimator::Em)
            return labelshift::em_estimate(target_probs, source_priors, em_cfg.tol,
                                           em_cfg.max_iter);
          labelshift::DirectMlOptions opts;
          opts.tol = em_cfg.tol;
          opts.max_iter = em_cfg.max_iter;
          return labelshift::ml_estimate_direct(target_probs, source_priors, opts);
        }();
        weights = result.weights;
        priors = result.target_priors.values();
        break;
      }
      default: {
        const bool hard = est == labelshift::Estimator::BbslHard ||
                          est == labelshift::Estimator::RllsHard;
        const auto cmode =
            hard ? labelshift::ConfusionMode::Hard : labelshift::ConfusionMode::Soft;
        labelshift::ShiftWeights w;
        if (est == labelshift::Estimator::BbslHard ||
            est == labelshift::Estimator::BbslSoft) {
          w = labelshift::bbsl_estimate(cmode, valid_probs, valid->data.labels(),
                                        target_probs);
        } else {
          w = labelshift::rlls_estimate(cmode, valid_probs, valid->data.labels(),
                                        target_probs, rlls_cfg.lambda, rlls_cfg.delta);
        }
        weights = w.values;
        // Implied target priors: w_i * p_i, renormalized.
        double total = 0.0;
        for (size_t i = 0; i < m; ++i) {
          priors[i] = weights[i] * source_priors[i];
          total += priors[i];
        }
        if (total > 0.0)
          for (double& p : priors) p /= total;
        break;
      }
    }
    std::memcpy(weights_out, weights.data(), m * sizeof(double));
    if (priors_out != nullptr) std::memcpy(priors_out, priors.data(), m * sizeof(double));
  });
}

lsh_status lsh_adapt_predictions(const lsh_calibration* calib, const lsh_dataset* data,
                                 const double* weights, size_t weights_len,
                                 double* probs_out, size_t probs_len) {
  return guarded([&] {
    if (data == nullptr || weights == nullptr || probs_out == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    const labelshift::CalibrationParams params =
        calib ? calib->fit.params : labelshift::CalibrationParams{};
    const auto probs = labelshift::apply_calibration(params, data->data.logits());
    labelshift::ShiftWeights w;
    w.values.assign(weights, weights + weights_len);
    const auto adapted = labelshift::adapt_predictions(probs, w);
    const size_t need = adapted.size() * adapted.num_classes();
    if (probs_len < need)
      throw labelshift::ArgumentError("probability buffer too small (need " +
                                      std::to_string(need) + " doubles)");
    std::memcpy(probs_out, adapted.matrix().data.data(), need * sizeof(double));
  });
}

lsh_status lsh_simulate(const char* spec_json, const char* valid_path,
                        const char* pool_path) {
  return guarded([&] {
    if (spec_json == nullptr || valid_path == nullptr || pool_path == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(spec_json);
    } catch (const nlohmann::json::exception& e) {
      throw labelshift::ParseError(std::string("spec_json: ") + e.what());
    }
    labelshift::SyntheticTaskSpec spec;
    spec.num_classes = j.at("num_classes").get<size_t>();
    if (j.contains("true_priors"))
      spec.true_priors = j.at("true_priors").get<std::vector<double>>();
    if (j.contains("separation")) spec.separation = j.at("separation").get<double>();
    if (j.contains("true_temperature"))
      spec.true_temperature = j.at("true_temperature").get<double>();
    if (j.contains("true_biases"))
      spec.true_biases = j.at("true_biases").get<std::vector<double>>();
    if (j.contains("seed")) spec.seed = j.at("seed").get<uint64_t>();
    const size_t n_valid = j.at("n_valid").get<size_t>();
    const size_t n_pool = j.at("n_pool").get<size_t>();
    const auto task = labelshift::generate_synthetic_task(spec, n_valid, n_pool);
    labelshift::save_dataset(task.valid, valid_path);
    labelshift::save_dataset(task.pool, pool_path);
  });
}

lsh_status lsh_run_experiment(const char* config_json, const char* out_dir,
                              const char* formats) {
  return guarded([&] {
    if (config_json == nullptr || out_dir == nullptr)
      throw labelshift::ArgumentError("null pointer argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
      throw labelshift::ParseError(std::string("config: ") + e.what());
    }
    const auto config = labelshift::ExperimentConfig::from_json(j);
    const auto result = labelshift::run_experiment(config);

    std::string want = formats ? formats : "csv,markdown";
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    std::stringstream ss(want);
    std::string fmt;
    while (std::getline(ss, fmt, ',')) {
      if (fmt == "csv") {
        labelshift::write_report(result.records, (dir / "records.csv").string(),
                                 labelshift::ReportFormat::Csv);
      } else if (fmt == "markdown") {
        labelshift::write_report(result.records, (dir / "summary.md").string(),
                                 labelshift::ReportFormat::Markdown);
      } else if (fmt == "json") {
        labelshift::write_report(result.records, (dir / "records.json").string(),
                                 labelshift::ReportFormat::Json);
      } else {
        throw labelshift::ArgumentError("unknown report format '" + fmt + "'");
      }
    }
  });
}

}  // extern "C"
