// Command-line front end; all heavy lifting goes through the C API.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "labelshift.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

int exit_code_for(lsh_status status) {
  switch (status) {
    case LSH_OK:
      return kExitOk;
    case LSH_ERR_NUMERIC:
    case LSH_ERR_SINGULAR:
      return kExitNumeric;
    default:
      return kExitConfig;
  }
}

int fail(lsh_status status) {
  std::cerr << "error: " << lsh_last_error() << "\n";
  return exit_code_for(status);
}

struct DatasetDeleter {
  void operator()(lsh_dataset* d) const { lsh_dataset_free(d); }
};
struct CalibrationDeleter {
  void operator()(lsh_calibration* c) const { lsh_calibration_free(c); }
};
using DatasetPtr = std::unique_ptr<lsh_dataset, DatasetDeleter>;
using CalibrationPtr = std::unique_ptr<lsh_calibration, CalibrationDeleter>;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_probs_csv(const std::string& path, const std::vector<double>& probs,
                     std::size_t n, std::size_t m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t i = 0; i < m; ++i) out << (i ? "," : "") << "prob_" << i;
  out << '\n';
  out.precision(17);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < m; ++i) out << (i ? "," : "") << probs[k * m + i];
    out << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label shift adaptation: calibration, prior estimation, simulation "
               "and benchmark experiments"};
  app.require_subcommand(1);
  app.fallthrough();  // accept the global flags after the subcommand too

  std::uint64_t seed = 0;
  std::string config_path, out_path, format = "csv";
  app.add_option("--seed", seed, "Seed override for stochastic subcommands");
  app.add_option("--config", config_path, "JSON config file (experiment)");
  app.add_option("--out", out_path, "Output file or directory");
  app.add_option("--format", format, "Report format: csv, markdown or json");

  // calibrate: fit a family on a validation set, save params as JSON.
  auto* calibrate = app.add_subcommand("calibrate", "Fit calibration parameters");
  std::string cal_data, cal_family = "BCTS";
  calibrate->add_option("data", cal_data, "Validation dataset (CSV/JSONL)")->required();
  calibrate->add_option("--family", cal_family, "None, TS, NBVS, BCTS or VS");

  // estimate: target priors/weights from validation + target files.
  auto* estimate = app.add_subcommand("estimate", "Estimate target priors and weights");
  std::string est_valid, est_target, est_estimator = "EM", est_params;
  std::string est_prior_mode = "MeanPrediction";
  double est_lambda = 1e-3, est_delta = 1.0, est_tol = 1e-10;
  std::size_t est_max_iter = 10000;
  estimate->add_option("valid", est_valid, "Validation dataset")->required();
  estimate->add_option("target", est_target, "Target dataset")->required();
  estimate->add_option("--estimator", est_estimator,
                       "EM, EM-direct, BBSL-hard, BBSL-soft, RLLS-hard, RLLS-soft");
  estimate->add_option("--calibration", est_params, "Fitted params JSON file");
  estimate->add_option("--source-prior-mode", est_prior_mode,
                       "MeanPrediction or LabelFrequency");
  estimate->add_option("--rlls-lambda", est_lambda, "RLLS regularization weight");
  estimate->add_option("--rlls-delta", est_delta, "RLLS shrinkage toward uniform");
  estimate->add_option("--em-tol", est_tol, "EM convergence tolerance (L1)");
  estimate->add_option("--em-max-iter", est_max_iter, "EM iteration cap");

  // adapt: rewrite probabilities under estimated weights.
  auto* adapt = app.add_subcommand("adapt", "Re-weight predicted probabilities");
  std::string adapt_data, adapt_weights, adapt_params;
  adapt->add_option("data", adapt_data, "Dataset with logits")->required();
  adapt->add_option("weights", adapt_weights,
                    "JSON file with a \"weights\" array (estimate output)")
      ->required();
  adapt->add_option("--calibration", adapt_params, "Fitted params JSON file");

  // simulate: synthetic task generation.
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic task");
  std::size_t sim_classes = 10, sim_n_valid = 10000, sim_n_pool = 20000;
  double sim_separation = 2.0, sim_temperature = 1.0;
  std::vector<double> sim_biases, sim_priors;
  simulate->add_option("--classes", sim_classes, "Number of classes");
  simulate->add_option("--separation", sim_separation, "Class mean spacing");
  simulate->add_option("--temperature", sim_temperature, "True distortion temperature");
  simulate->add_option("--bias", sim_biases, "True per-class distortion biases");
  simulate->add_option("--priors", sim_priors, "True class priors (default uniform)");
  simulate->add_option("--n-valid", sim_n_valid, "Validation set size");
  simulate->add_option("--n-pool", sim_n_pool, "Pool set size");

  // experiment: full benchmark grid from a config file.
  auto* experiment = app.add_subcommand("experiment", "Run a benchmark experiment grid");
  bool exp_override_seed = false;
  experiment->add_flag("--override-seed", exp_override_seed,
                       "Replace the config's master_seed with --seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*calibrate) {
      DatasetPtr data;
      lsh_dataset* raw = nullptr;
      lsh_status st = lsh_dataset_load(cal_data.c_str(), &raw);
      if (st != LSH_OK) return fail(st);
      data.reset(raw);
      lsh_calibration* craw = nullptr;
      st = lsh_calibration_fit(data.get(), cal_family.c_str(), &craw);
      if (st != LSH_OK) return fail(st);
      CalibrationPtr calib(craw);
      std::vector<char> buf(1 << 16);
      st = lsh_calibration_describe(calib.get(), buf.data(), buf.size());
      if (st != LSH_OK) return fail(st);
      std::cout << buf.data() << "\n";
      if (!out_path.empty()) {
        st = lsh_calibration_save(calib.get(), out_path.c_str());
        if (st != LSH_OK) return fail(st);
      }
      return kExitOk;
    }

    if (*estimate) {
      lsh_dataset* vraw = nullptr;
      lsh_status st = lsh_dataset_load(est_valid.c_str(), &vraw);
      if (st != LSH_OK) return fail(st);
      DatasetPtr valid(vraw);
      lsh_dataset* traw = nullptr;
      st = lsh_dataset_load(est_target.c_str(), &traw);
      if (st != LSH_OK) return fail(st);
      DatasetPtr target(traw);
      CalibrationPtr calib;
      if (!est_params.empty()) {
        lsh_calibration* craw = nullptr;
        st = lsh_calibration_load(est_params.c_str(), &craw);
        if (st != LSH_OK) return fail(st);
        calib.reset(craw);
      }
      const std::size_t m = lsh_dataset_num_classes(valid.get());
      nlohmann::json opts = {
          {"source_prior_mode", est_prior_mode},
          {"em", {{"tol", est_tol}, {"max_iter", est_max_iter}}},
          {"rlls", {{"lambda", est_lambda}, {"delta", est_delta}}}};
      std::vector<double> weights(m), priors(m);
      st = lsh_estimate_shift(valid.get(), target.get(), calib.get(),
                              est_estimator.c_str(), opts.dump().c_str(),
                              weights.data(), priors.data(), m);
      if (st != LSH_OK) return fail(st);
      nlohmann::json result = {{"estimator", est_estimator},
                               {"weights", weights},
                               {"target_priors", priors}};
      const std::string text = result.dump(2);
      std::cout << text << "\n";
      if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << text << "\n";
        if (!out) throw std::runtime_error("cannot write " + out_path);
      }
      return kExitOk;
    }

    if (*adapt) {
      lsh_dataset* raw = nullptr;
      lsh_status st = lsh_dataset_load(adapt_data.c_str(), &raw);
      if (st != LSH_OK) return fail(st);
      DatasetPtr data(raw);
      CalibrationPtr calib;
      if (!adapt_params.empty()) {
        lsh_calibration* craw = nullptr;
        st = lsh_calibration_load(adapt_params.c_str(), &craw);
        if (st != LSH_OK) return fail(st);
        calib.reset(craw);
      }
      const auto wj = nlohmann::json::parse(read_file(adapt_weights));
      const std::vector<double> weights =
          wj.contains("weights") ? wj.at("weights").get<std::vector<double>>()
                                 : wj.get<std::vector<double>>();
      const std::size_t n = lsh_dataset_size(data.get());
      const std::size_t m = lsh_dataset_num_classes(data.get());
      std::vector<double> probs(n * m);
      st = lsh_adapt_predictions(calib.get(), data.get(), weights.data(),
                                 weights.size(), probs.data(), probs.size());
      if (st != LSH_OK) return fail(st);
      if (out_path.empty()) out_path = "adapted_probs.csv";
      write_probs_csv(out_path, probs, n, m);
      std::cout << "wrote " << out_path << "\n";
      return kExitOk;
    }

    if (*simulate) {
      nlohmann::json spec = {{"num_classes", sim_classes},
                             {"separation", sim_separation},
                             {"true_temperature", sim_temperature},
                             {"seed", seed},
                             {"n_valid", sim_n_valid},
                             {"n_pool", sim_n_pool}};
      if (!sim_biases.empty()) spec["true_biases"] = sim_biases;
      if (!sim_priors.empty()) spec["true_priors"] = sim_priors;
      if (out_path.empty()) out_path = ".";
      std::filesystem::create_directories(out_path);
      const auto dir = std::filesystem::path(out_path);
      const std::string valid_path = (dir / "valid.csv").string();
      const std::string pool_path = (dir / "pool.csv").string();
      const lsh_status st =
          lsh_simulate(spec.dump().c_str(), valid_path.c_str(), pool_path.c_str());
      if (st != LSH_OK) return fail(st);
      std::cout << "wrote " << valid_path << " and " << pool_path << "\n";
      return kExitOk;
    }

    if (*experiment) {
      if (config_path.empty()) {
        std::cerr << "error: experiment requires --config <file>\n";
        return kExitConfig;
      }
      nlohmann::json config = nlohmann::json::parse(read_file(config_path));
      if (exp_override_seed) config["master_seed"] = seed;
      if (out_path.empty()) out_path = "experiment_out";
      std::string formats = format;
      if (formats == "csv") formats = "csv,markdown";  // always keep the summary
      const lsh_status st = lsh_run_experiment(config.dump().c_str(),
                                               out_path.c_str(), formats.c_str());
      if (st != LSH_OK) return fail(st);
      std::cout << "wrote reports to " << out_path << "\n";
      return kExitOk;
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
