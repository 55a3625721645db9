#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "labelshift.h"

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("c api dataset lifecycle and errors") {
  const std::string path = temp_path("capi_ds.csv");
  write_text(path, "label,logit_0,logit_1\n0,2.0,0.0\n1,-1.0,1.0\n");
  lsh_dataset* ds = nullptr;
  REQUIRE(lsh_dataset_load(path.c_str(), &ds) == LSH_OK);
  CHECK(lsh_dataset_size(ds) == 2);
  CHECK(lsh_dataset_num_classes(ds) == 2);

  const std::string copy = temp_path("capi_ds_copy.csv");
  CHECK(lsh_dataset_save(ds, copy.c_str()) == LSH_OK);
  lsh_dataset* ds2 = nullptr;
  CHECK(lsh_dataset_load(copy.c_str(), &ds2) == LSH_OK);
  CHECK(lsh_dataset_size(ds2) == 2);
  lsh_dataset_free(ds2);
  lsh_dataset_free(ds);
  std::remove(path.c_str());
  std::remove(copy.c_str());

  lsh_dataset* missing = nullptr;
  CHECK(lsh_dataset_load("/nonexistent/nowhere.csv", &missing) != LSH_OK);
  CHECK(std::strlen(lsh_last_error()) > 0);

  const std::string bad = temp_path("capi_bad.csv");
  write_text(bad, "label,logit_0,logit_1\n9,1.0,2.0\n");
  lsh_dataset* bad_ds = nullptr;
  CHECK(lsh_dataset_load(bad.c_str(), &bad_ds) == LSH_ERR_PARSE);
  std::remove(bad.c_str());
}

TEST_CASE("c api calibration fit, persistence and application") {
  // Labels drawn deterministically biased toward class 0 at T = 1.
  const std::string path = temp_path("capi_fit.csv");
  std::string csv = "label,logit_0,logit_1\n";
  for (int k = 0; k < 200; ++k) {
    const double z = (k % 7) * 0.3 - 1.0;
    csv += std::to_string(k % 3 == 0 ? 1 : 0) + "," + std::to_string(z) + ",0.0\n";
  }
  write_text(path, csv);
  lsh_dataset* ds = nullptr;
  REQUIRE(lsh_dataset_load(path.c_str(), &ds) == LSH_OK);

  lsh_calibration* calib = nullptr;
  REQUIRE(lsh_calibration_fit(ds, "BCTS", &calib) == LSH_OK);

  char buf[4096];
  REQUIRE(lsh_calibration_describe(calib, buf, sizeof buf) == LSH_OK);
  const nlohmann::json desc = nlohmann::json::parse(buf);
  CHECK(desc.at("family") == "BCTS");
  CHECK(desc.contains("T"));
  CHECK(desc.contains("nll"));

  // Too-small buffer is an argument error, not a crash.
  char tiny[4];
  CHECK(lsh_calibration_describe(calib, tiny, sizeof tiny) == LSH_ERR_ARGUMENT);

  const std::string params_path = temp_path("capi_params.json");
  REQUIRE(lsh_calibration_save(calib, params_path.c_str()) == LSH_OK);
  lsh_calibration* loaded = nullptr;
  REQUIRE(lsh_calibration_load(params_path.c_str(), &loaded) == LSH_OK);

  std::vector<double> p1(2 * lsh_dataset_size(ds));
  std::vector<double> p2(p1.size());
  REQUIRE(lsh_apply_calibration(calib, ds, p1.data(), p1.size()) == LSH_OK);
  REQUIRE(lsh_apply_calibration(loaded, ds, p2.data(), p2.size()) == LSH_OK);
  for (std::size_t i = 0; i < p1.size(); ++i)
    CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));

  // NULL calibration means the identity transform.
  std::vector<double> raw(p1.size());
  REQUIRE(lsh_apply_calibration(nullptr, ds, raw.data(), raw.size()) == LSH_OK);
  for (std::size_t k = 0; k < lsh_dataset_size(ds); ++k)
    CHECK(raw[2 * k] + raw[2 * k + 1] == doctest::Approx(1.0).epsilon(1e-9));

  CHECK(lsh_apply_calibration(calib, ds, raw.data(), 3) == LSH_ERR_ARGUMENT);

  CHECK(lsh_calibration_fit(ds, "NOPE", &calib) == LSH_ERR_ARGUMENT);

  lsh_calibration_free(loaded);
  lsh_calibration_free(calib);
  lsh_dataset_free(ds);
  std::remove(path.c_str());
  std::remove(params_path.c_str());
}

TEST_CASE("c api shift estimation and adaptation") {
  const std::string dir = temp_path("capi_sim");
  std::filesystem::create_directories(dir);
  const std::string valid_path = dir + "/valid.csv";
  const std::string pool_path = dir + "/pool.csv";
  const nlohmann::json spec = {{"num_classes", 3}, {"seed", 11},
                               {"n_valid", 3000},  {"n_pool", 3000},
                               {"separation", 2.5}};
  REQUIRE(lsh_simulate(spec.dump().c_str(), valid_path.c_str(), pool_path.c_str()) ==
          LSH_OK);

  lsh_dataset* valid = nullptr;
  lsh_dataset* target = nullptr;
  REQUIRE(lsh_dataset_load(valid_path.c_str(), &valid) == LSH_OK);
  REQUIRE(lsh_dataset_load(pool_path.c_str(), &target) == LSH_OK);

  // Unshifted target: every estimator should sit near w = 1.
  for (const char* est : {"EM", "EM-direct", "BBSL-soft", "RLLS-soft"}) {
    double w[3], q[3];
    REQUIRE(lsh_estimate_shift(valid, target, nullptr, est, nullptr, w, q, 3) ==
            LSH_OK);
    double qs = 0.0;
    for (int i = 0; i < 3; ++i) {
      CHECK(w[i] > 0.6);
      CHECK(w[i] < 1.4);
      qs += q[i];
    }
    CHECK(qs == doctest::Approx(1.0).epsilon(1e-6));
  }

  double w[3] = {2.0, 0.5, 1.0};
  std::vector<double> adapted(3 * lsh_dataset_size(target));
  REQUIRE(lsh_adapt_predictions(nullptr, target, w, 3, adapted.data(),
                                adapted.size()) == LSH_OK);
  for (std::size_t k = 0; k < lsh_dataset_size(target); ++k) {
    const double s = adapted[3 * k] + adapted[3 * k + 1] + adapted[3 * k + 2];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }

  CHECK(lsh_estimate_shift(valid, target, nullptr, "bogus", nullptr, w, nullptr, 3) ==
        LSH_ERR_ARGUMENT);
  CHECK(lsh_estimate_shift(valid, target, nullptr, "EM", "{not json", w, nullptr, 3) ==
        LSH_ERR_PARSE);

  lsh_dataset_free(valid);
  lsh_dataset_free(target);
  std::filesystem::remove_all(dir);
}

TEST_CASE("c api experiment runner writes requested reports") {
  const std::string out_dir = temp_path("capi_exp");
  std::filesystem::remove_all(out_dir);
  const nlohmann::json config = {
      {"dataset",
       {{"kind", "synthetic"}, {"num_classes", 3}, {"seed", 3},
        {"n_valid", 1500}, {"n_pool", 3000}, {"true_temperature", 1.5},
        {"true_biases", {0.5, -0.2, 0.0}}}},
      {"calibration_families", {"BCTS"}},
      {"estimators", {"EM"}},
      {"shift_grid", {{{"kind", "dirichlet"}, {"alpha", 1.0}}}},
      {"n_grid", {400}},
      {"trials", 2},
      {"master_seed", 99}};
  REQUIRE(lsh_run_experiment(config.dump().c_str(), out_dir.c_str(),
                             "csv,markdown,json") == LSH_OK);
  CHECK(std::filesystem::exists(out_dir + "/records.csv"));
  CHECK(std::filesystem::exists(out_dir + "/summary.md"));
  CHECK(std::filesystem::exists(out_dir + "/records.json"));

  CHECK(lsh_run_experiment("{\"trials\": 0}", out_dir.c_str(), "csv") != LSH_OK);
  std::filesystem::remove_all(out_dir);
}
