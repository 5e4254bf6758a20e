#ifndef DESPECKNET_DESPECKNET_H
#define DESPECKNET_DESPECKNET_H

/* C interface to the despecknet library.
 *
 * Every fallible call returns a dsn_status; on failure a description is
 * available from dsn_last_error() on the calling thread. Handles are opaque
 * and owned by the caller once returned. Strings returned through char**
 * out-parameters are NUL-terminated JSON and must be released with
 * dsn_string_free(). */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DSN_BUILDING_LIBRARY)
#    define DSN_API __declspec(dllexport)
#  else
#    define DSN_API __declspec(dllimport)
#  endif
#else
#  define DSN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dsn_status {
  DSN_OK = 0,
  DSN_ERR_INVALID_ARGUMENT = 1,
  DSN_ERR_IO = 2,
  DSN_ERR_FORMAT = 3,
  DSN_ERR_NUMERIC = 4,
  DSN_ERR_STATE = 5,
  DSN_ERR_INTERNAL = 6
} dsn_status;

typedef struct dsn_image dsn_image;
typedef struct dsn_model dsn_model;

DSN_API const char* dsn_version(void);
DSN_API const char* dsn_status_string(dsn_status status);
/* Message of the last failed call on this thread; "" when none. */
DSN_API const char* dsn_last_error(void);
DSN_API void dsn_string_free(char* str);

/* ---- images ---- */

/* data may be NULL (zero image). NaN, infinite and negative values are masked. */
DSN_API dsn_status dsn_image_create(size_t width, size_t height, const float* data, dsn_image** out);
DSN_API dsn_status dsn_image_load(const char* path, dsn_image** out);
DSN_API dsn_status dsn_image_save(const dsn_image* image, const char* path);
DSN_API void dsn_image_free(dsn_image* image);
DSN_API dsn_status dsn_image_size(const dsn_image* image, size_t* width, size_t* height);
/* Copies width*height values into dst (capacity count); masked pixels are NaN. */
DSN_API dsn_status dsn_image_copy_data(const dsn_image* image, float* dst, size_t count);
/* dB grayscale with 2%/98% percentile clipping. */
DSN_API dsn_status dsn_image_export_png(const dsn_image* image, const char* path);

/* ---- speckle and labels ---- */

DSN_API dsn_status dsn_fit_gamma_looks(const dsn_image* noise, double* looks, double* mean);
/* Label from a directory of co-registered rasters. out_std may be NULL. */
DSN_API dsn_status dsn_synthesize_label(const char* stack_dir, double threshold, dsn_image** out_label,
                                        dsn_image** out_std);
/* Patch-set summary of a training-pair directory under a train config. */
DSN_API dsn_status dsn_extract_patches(const char* pairs_dir, const char* train_config_json, char** summary_json);

/* ---- models ---- */

/* config_json: {"depth", "channels"} or NULL for the desk configuration. */
DSN_API dsn_status dsn_model_create(const char* config_json, uint64_t seed, dsn_model** out);
DSN_API dsn_status dsn_model_load(const char* path, dsn_model** out);
DSN_API dsn_status dsn_model_save(const dsn_model* model, const char* path);
DSN_API void dsn_model_free(dsn_model* model);
/* Configuration and phase history. */
DSN_API dsn_status dsn_model_info(const dsn_model* model, char** info_json);

/* Phase-1 training on a directory of <stem>_noisy.rawf32 files with
 * <stem>_label.rawf32 or a shared label.rawf32. config_json may be NULL. */
DSN_API dsn_status dsn_train(dsn_model* model, const char* pairs_dir, const char* train_config_json,
                             char** history_json);
/* Phase-2 fine-tuning. preset is "grd", "slc" or NULL (slc); config_json
 * overrides preset fields and may be NULL. */
DSN_API dsn_status dsn_finetune(dsn_model* model, const dsn_image* target, const char* preset,
                                const char* config_json, char** history_json);
/* tile = 0 selects the default tiling. info_json may be NULL. */
DSN_API dsn_status dsn_despeckle(dsn_model* model, const dsn_image* noisy, size_t tile, size_t overlap,
                                 dsn_image** out_clean, dsn_image** out_noise, char** info_json);

/* ---- metrics ---- */

/* reference may be NULL. options_json may be NULL or hold "roi"
 * ({x, y, width, height}), "site" ({row, col}) and "convention"
 * ("as-printed" or "conventional"). */
DSN_API dsn_status dsn_evaluate(const dsn_image* estimate, const dsn_image* reference, const dsn_image* noisy,
                                const char* options_json, char** report_json);

/* ---- synthetic experiments ---- */

DSN_API dsn_status dsn_simulate(const char* spec_json, const char* out_dir, char** manifest_json);
DSN_API dsn_status dsn_run_experiment(const char* spec_json, const char* out_dir, char** report_json);
/* mode: "phase1-only", "phase2-only", "phases" or "weight-sweep". */
DSN_API dsn_status dsn_ablate(const char* spec_json, const char* mode, const char* out_dir, char** table_json);

#ifdef __cplusplus
}
#endif

#endif /* DESPECKNET_DESPECKNET_H */
