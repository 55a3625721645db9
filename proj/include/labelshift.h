/* C interface to the label-shift adaptation library.
 *
 * All functions return lsh_status; on failure, lsh_last_error() carries a
 * human-readable message for the calling thread. Handles are opaque and must
 * be released with the matching _free function.
 */
#ifndef LABELSHIFT_H
#define LABELSHIFT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LSH_EXPORT __declspec(dllexport)
#else
#define LSH_EXPORT __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lsh_status {
  LSH_OK = 0,
  LSH_ERR_ARGUMENT = 1, /* invalid input or precondition violation */
  LSH_ERR_PARSE = 2,    /* malformed file or JSON */
  LSH_ERR_IO = 3,       /* file system failure */
  LSH_ERR_NUMERIC = 4,  /* non-finite values during computation */
  LSH_ERR_SINGULAR = 5, /* confusion matrix too ill-conditioned */
  LSH_ERR_UNKNOWN = 6
} lsh_status;

typedef struct lsh_dataset lsh_dataset;
typedef struct lsh_calibration lsh_calibration;

/* Message for the most recent failure on this thread; empty string if none. */
LSH_EXPORT const char* lsh_last_error(void);

/* --- datasets: CSV `label,logit_0,...` or JSON lines --- */
LSH_EXPORT lsh_status lsh_dataset_load(const char* path, lsh_dataset** out);
LSH_EXPORT lsh_status lsh_dataset_save(const lsh_dataset* data, const char* path);
LSH_EXPORT void lsh_dataset_free(lsh_dataset* data);
LSH_EXPORT size_t lsh_dataset_size(const lsh_dataset* data);
LSH_EXPORT size_t lsh_dataset_num_classes(const lsh_dataset* data);

/* --- calibration: family is one of None, TS, NBVS, BCTS, VS --- */
LSH_EXPORT lsh_status lsh_calibration_fit(const lsh_dataset* valid, const char* family,
                                          lsh_calibration** out);
LSH_EXPORT lsh_status lsh_calibration_load(const char* path, lsh_calibration** out);
LSH_EXPORT lsh_status lsh_calibration_save(const lsh_calibration* calib,
                                           const char* path);
/* Serialized parameters plus fit diagnostics as a JSON string. Returns
 * LSH_ERR_ARGUMENT if the buffer is too small. */
LSH_EXPORT lsh_status lsh_calibration_describe(const lsh_calibration* calib, char* buf,
                                               size_t buf_len);
LSH_EXPORT void lsh_calibration_free(lsh_calibration* calib);

/* Calibrated probabilities for every row of `data`; probs_out must hold
 * size * num_classes doubles (row-major). calib may be NULL (identity). */
LSH_EXPORT lsh_status lsh_apply_calibration(const lsh_calibration* calib,
                                            const lsh_dataset* data, double* probs_out,
                                            size_t probs_len);

/* --- shift estimation ---
 * estimator: EM, EM-direct, BBSL-hard, BBSL-soft, RLLS-hard, RLLS-soft.
 * options_json (may be NULL): {"source_prior_mode": "MeanPrediction"|"LabelFrequency",
 *   "em": {"tol", "max_iter"}, "rlls": {"lambda", "delta"}}.
 * weights_out and priors_out must each hold num_classes doubles; priors_out
 * may be NULL. priors are the estimated target priors implied by the weights.
 */
LSH_EXPORT lsh_status lsh_estimate_shift(const lsh_dataset* valid,
                                         const lsh_dataset* target,
                                         const lsh_calibration* calib,
                                         const char* estimator,
                                         const char* options_json, double* weights_out,
                                         double* priors_out, size_t len);

/* Re-weight calibrated predictions by per-class weights (length num_classes);
 * probs_out as in lsh_apply_calibration. */
LSH_EXPORT lsh_status lsh_adapt_predictions(const lsh_calibration* calib,
                                            const lsh_dataset* data,
                                            const double* weights, size_t weights_len,
                                            double* probs_out, size_t probs_len);

/* --- simulation ---
 * spec_json: {"num_classes", "true_priors"?, "separation"?, "true_temperature"?,
 *   "true_biases"?, "seed"?, "n_valid", "n_pool"}.
 * Writes the validation and pool sets to the given paths. */
LSH_EXPORT lsh_status lsh_simulate(const char* spec_json, const char* valid_path,
                                   const char* pool_path);

/* --- experiments ---
 * config_json mirrors the experiment configuration schema (see README).
 * formats: comma-separated subset of csv,markdown,json. Writes records.csv,
 * summary.md and/or records.json into out_dir. */
LSH_EXPORT lsh_status lsh_run_experiment(const char* config_json, const char* out_dir,
                                         const char* formats);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* LABELSHIFT_H */
