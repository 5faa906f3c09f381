/* Deep hybrid demand-model laboratory: public C API.
 *
 * The core is a C++ library exposed here through opaque handles and status
 * codes so that any language with a C FFI (and the bundled CLI) can drive it.
 * All functions return DHM_OK on success; on failure they return a status
 * code and leave a human-readable message in dhm_last_error().
 */
#ifndef DHM_H
#define DHM_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DHM_API __declspec(dllexport)
#else
#define DHM_API __attribute__((visibility("default")))
#endif

typedef enum dhm_status {
    DHM_OK = 0,
    DHM_ERR_ARGUMENT = 1,
    DHM_ERR_CONFIG = 2,   /* maps to CLI exit code 2 */
    DHM_ERR_NUMERIC = 3,  /* maps to CLI exit code 3 */
    DHM_ERR_IO = 4,
    DHM_ERR_STATE = 5
} dhm_status;

typedef struct dhm_world dhm_world;
typedef struct dhm_mixing dhm_mixing;

DHM_API const char* dhm_version(void);
DHM_API const char* dhm_status_name(dhm_status status);

/* Message for the most recent failure on this thread; empty string if none. */
DHM_API const char* dhm_last_error(void);

/* Frees strings returned through char** out-parameters. */
DHM_API void dhm_string_free(char* s);

/* --- synthetic world ----------------------------------------------------- */

DHM_API dhm_status dhm_world_generate(uint64_t seed, int n_regions, int tiles_per_region,
                                      int n_trips, dhm_world** out);
/* config_json follows the "world" object of the experiment config. */
DHM_API dhm_status dhm_world_generate_ex(const char* config_json, dhm_world** out);
DHM_API dhm_status dhm_world_save(const dhm_world* world, const char* dir);
DHM_API dhm_status dhm_world_load(const char* dir, dhm_world** out);
/* JSON: {"regions":..,"trips":..,"tiles":..,"tile_size":..,"sd_dim":..} */
DHM_API dhm_status dhm_world_info(const dhm_world* world, char** json_out);
DHM_API void dhm_world_free(dhm_world* world);

/* --- mixing models ------------------------------------------------------- */

/* config_json follows the "model" object of the experiment config (variant,
 * latent_dim, lambda, steps, batch, lr, seed...). Trains stage one on the
 * given world. */
DHM_API dhm_status dhm_mixing_train(const dhm_world* world, const char* config_json,
                                    dhm_mixing** out);
DHM_API dhm_status dhm_mixing_save(const dhm_mixing* model, const char* path_prefix);
DHM_API dhm_status dhm_mixing_load(const char* path_prefix, dhm_mixing** out);
DHM_API dhm_status dhm_mixing_latent_dim(const dhm_mixing* model, int* out);
/* pixels: h*w*c floats in [0,1], HWC order; latent_out must hold latent_dim. */
DHM_API dhm_status dhm_mixing_encode(const dhm_mixing* model, const float* pixels, int h,
                                     int w, int c, double* latent_out, int latent_cap);
/* pixels_out must hold tile_size*tile_size*3 floats. */
DHM_API dhm_status dhm_mixing_decode(const dhm_mixing* model, const double* latent, int dim,
                                     float* pixels_out, int pixels_cap);
DHM_API void dhm_mixing_free(dhm_mixing* model);

/* --- experiment commands -------------------------------------------------- */

/* config_json is the full experiment config; see the README for the schema.
 * Artifacts land under the config's "out" directory with a manifest.json. */
DHM_API dhm_status dhm_cmd_synth(const char* config_json);
DHM_API dhm_status dhm_cmd_train(const char* config_json);
DHM_API dhm_status dhm_cmd_sweep(const char* config_json);
DHM_API dhm_status dhm_cmd_benchmark(const char* config_json);
DHM_API dhm_status dhm_cmd_generate(const char* config_json);
DHM_API dhm_status dhm_cmd_analyze(const char* config_json);

/* Default experiment config as JSON (caller frees with dhm_string_free). */
DHM_API dhm_status dhm_default_config(char** json_out);

#ifdef __cplusplus
}
#endif

#endif /* DHM_H */
