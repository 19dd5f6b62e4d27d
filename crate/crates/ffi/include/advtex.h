/* C interface to the advtex adversarial-texture pipeline.
 *
 * Handles returned by the *_load functions are owned by the caller and must
 * be released with the matching *_free. Every other function only borrows
 * its arguments. Fallible calls return an AdvtexStatus; on failure a
 * thread-local message is available through advtex_last_error. Handles are
 * not synchronized — share them across threads only behind your own lock.
 */

#ifndef ADVTEX_H
#define ADVTEX_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Result of every fallible call. */
typedef enum AdvtexStatus {
    ADVTEX_STATUS_OK = 0,
    /* A required pointer was null. */
    ADVTEX_STATUS_NULL_ARGUMENT = 1,
    /* A string argument was not valid UTF-8. */
    ADVTEX_STATUS_INVALID_STRING = 2,
    /* Bad configuration or unreadable/invalid input file. */
    ADVTEX_STATUS_CONFIG_ERROR = 3,
    /* Failure while computing or writing. */
    ADVTEX_STATUS_RUNTIME_ERROR = 4,
    /* An internal panic was caught at the boundary. */
    ADVTEX_STATUS_PANICKED = 5,
} AdvtexStatus;

typedef enum AdvtexRenderer {
    ADVTEX_RENDERER_SURROGATE = 0,
    ADVTEX_RENDERER_TARGET = 1,
} AdvtexRenderer;

/* Attack parameters; fill every field. */
typedef struct AdvtexAttackParams {
    /* l-inf budget in texture space, in (0, 1]. */
    double epsilon;
    /* Step size, at most epsilon. */
    double alpha;
    uint64_t n_steps;
    /* Views per gradient estimate; 0 = the full rig each step. */
    uint64_t view_batch;
    /* Saliency threshold in (0, 1); any value <= 0 disables the mask. */
    double saliency_tau;
    uint64_t seed;
    /* Nonzero = start from a random point inside the ball. */
    uint8_t random_start;
} AdvtexAttackParams;

/* Scalar attack results; accuracy_drop is NaN when the clean accuracy
 * was 0. */
typedef struct AdvtexAttackOutcome {
    double accuracy_before;
    double accuracy_after;
    double accuracy_drop;
    double n_pct;
    double changed_texel_fraction;
} AdvtexAttackOutcome;

/* Opaque scene handle (mesh, base texture, view rig). */
typedef struct AdvtexScene AdvtexScene;

/* Opaque classifier handle. */
typedef struct AdvtexModel AdvtexModel;

/* Copies the current thread's last error message into buf (NUL terminated,
 * truncated to cap bytes) and returns the full length of the message
 * including the NUL. Call with buf == NULL or cap == 0 to query the
 * required size. */
size_t advtex_last_error(char *buf, size_t cap);

/* Static version string of the underlying library, e.g. "0.1.0". */
const char *advtex_version(void);

/* Loads a scene config (TOML) plus the mesh and texture it references.
 * Returns NULL on failure; see advtex_last_error. */
AdvtexScene *advtex_scene_load(const char *config_path);

/* Releases a scene handle. NULL is a no-op. */
void advtex_scene_free(AdvtexScene *scene);

/* Loads a classifier weight file. Returns NULL on failure. */
AdvtexModel *advtex_model_load(const char *weights_path);

/* Releases a model handle. NULL is a no-op. */
void advtex_model_free(AdvtexModel *model);

/* Runs the multi-view attack and writes the adversarial texture as PNG to
 * texture_out_path. When report_out_path is non-NULL the full report is
 * written there as JSON; when outcome is non-NULL the headline metrics are
 * stored into it. */
AdvtexStatus advtex_attack_run(const AdvtexScene *scene,
                               const AdvtexModel *model,
                               const AdvtexAttackParams *params,
                               const char *texture_out_path,
                               const char *report_out_path,
                               AdvtexAttackOutcome *outcome);

/* Measures rig accuracy of a texture under the chosen renderer and stores
 * it into out_accuracy. A NULL texture_png_path evaluates the scene's base
 * texture. */
AdvtexStatus advtex_rig_accuracy(const AdvtexScene *scene,
                                 const AdvtexModel *model,
                                 const char *texture_png_path,
                                 AdvtexRenderer renderer,
                                 double *out_accuracy);

/* Builds the saliency mask at threshold tau and optionally writes the
 * heatmap and mask PNGs (skip either by passing NULL). When
 * out_kept_fraction is non-NULL it receives the fraction of texels the
 * mask keeps modifiable. */
AdvtexStatus advtex_saliency_export(const AdvtexScene *scene,
                                    const AdvtexModel *model,
                                    double tau,
                                    const char *heatmap_out_path,
                                    const char *mask_out_path,
                                    double *out_kept_fraction);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ADVTEX_H */
