/* C interface to the SEAL embedding-adaptation toolkit.
 *
 * Every function returns a seal_status. On failure the calling thread's
 * seal_last_error() holds a message until the next call on that thread.
 * Handles are opaque and owned by the caller; free them with the matching
 * *_free function. Strings returned through seal_string are released with
 * seal_string_free.
 */
#ifndef SEAL_H
#define SEAL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SEAL_API __declspec(dllexport)
#else
#define SEAL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum seal_status {
    SEAL_OK = 0,
    SEAL_ERR_USAGE = 1,
    SEAL_ERR_VALIDATION = 2,
    SEAL_ERR_NUMERICAL = 3,
    SEAL_ERR_IO = 4,
    SEAL_ERR_INTERNAL = 5
} seal_status;

typedef struct seal_backbone seal_backbone;
typedef struct seal_embedding seal_embedding;

typedef struct seal_config {
    int steps;
    double learning_rate;
    int batch_size;
    int K;
    double lambda_bind;
    double lambda_supp;
    double lambda_spatial;
    double delta;
    uint64_t base_seed;
    double beta1;
    double beta2;
    double eps;
    double weight_decay;
    double jitter;
} seal_config;

typedef void (*seal_warning_fn)(const char* message, void* user);
typedef void (*seal_progress_fn)(int step, double loss, void* user);
typedef void (*seal_problem_fn)(int line_number, const char* message, void* user);

SEAL_API const char* seal_version(void);
SEAL_API const char* seal_last_error(void);
SEAL_API const char* seal_status_name(seal_status status);
/* NULL restores the default stderr sink. */
SEAL_API void seal_set_warning_callback(seal_warning_fn fn, void* user);
SEAL_API void seal_string_free(char* s);

/* ---- configuration ---- */
SEAL_API void seal_config_default(seal_config* cfg);
SEAL_API seal_status seal_config_validate(const seal_config* cfg);
SEAL_API seal_status seal_config_load(const char* json_path, seal_config* cfg);
/* Canonical JSON of the config (caller frees). */
SEAL_API seal_status seal_config_to_json(const seal_config* cfg, char** json);
SEAL_API uint64_t seal_config_hash(const seal_config* cfg);

/* ---- corpus ---- */
SEAL_API seal_status seal_corpus_export(uint64_t seed, int n, const char* dir);

/* ---- backbone ---- */
SEAL_API seal_status seal_backbone_build(uint64_t arch_seed, seal_backbone** out);
SEAL_API seal_status seal_backbone_load(const char* path, seal_backbone** out);
SEAL_API seal_status seal_backbone_save(const seal_backbone* bb, const char* path);
/* Trains in place on an exported corpus directory. */
SEAL_API seal_status seal_backbone_pretrain(seal_backbone* bb, const char* corpus_dir, int steps, uint64_t seed,
                                            seal_progress_fn progress, void* user);
SEAL_API seal_status seal_backbone_hash(const seal_backbone* bb, uint64_t* hash);
SEAL_API seal_status seal_backbone_layer_count(const seal_backbone* bb, int* count);
SEAL_API void seal_backbone_free(seal_backbone* bb);

/* ---- adaptation ----
 * reference_png: RGB image; mask_png: grayscale, >= 128 is object.
 * tag_line: six comma-separated fields. Writes the embedding file and one
 * JSON-lines log per trajectory to <log_dir>/trajectory_<i>.jsonl.
 * threads = 0 uses SEAL_THREADS or the core count.
 */
SEAL_API seal_status seal_adapt(const seal_backbone* bb, const char* reference_png, const char* mask_png,
                                const char* tag_line, const seal_config* cfg, int threads,
                                const char* embedding_path, const char* log_dir);

SEAL_API seal_status seal_embedding_load(const char* path, seal_embedding** out);
SEAL_API seal_status seal_embedding_dim(const seal_embedding* e, int* dim);
SEAL_API seal_status seal_embedding_k(const seal_embedding* e, int* k);
/* member = -1 selects the merged vector; `values` must hold dim doubles. */
SEAL_API seal_status seal_embedding_values(const seal_embedding* e, int member, double* values);
SEAL_API seal_status seal_embedding_seed(const seal_embedding* e, int member, uint64_t* seed);
SEAL_API void seal_embedding_free(seal_embedding* e);

/* ---- generation ----
 * With an embedding the appearance slot of tag_line becomes the concept token.
 */
SEAL_API seal_status seal_generate(const seal_backbone* bb, const seal_embedding* embedding, const char* tag_line,
                                   int steps, double guidance, uint64_t seed, const char* out_png);

/* ---- attention inspection ----
 * Probes n_timesteps evenly spaced timesteps with noise from `seed`, or, when
 * replay_step >= 0, the exact draw that adaptation step uses for `member`.
 * Writes layer<l>_t<t>.png heatmaps (128x128) and metrics.json to out_dir.
 */
SEAL_API seal_status seal_inspect_attention(const seal_backbone* bb, const seal_embedding* embedding, int member,
                                            const char* reference_png, const char* mask_png, const char* tag_line,
                                            int n_timesteps, uint64_t seed, int replay_step, const char* out_dir);

/* ---- tags ---- */
/* Reports every malformed line; *problems receives the count. */
SEAL_API seal_status seal_tags_validate(const char* path, int expect_domain, seal_problem_fn fn, void* user,
                                        int* problems);
SEAL_API seal_status seal_tags_edit(const char* tag_line, const char* attribute, const char* value, char** out_line);
SEAL_API seal_status seal_tags_similarity(const char* tag_line, double* similarity);

#ifdef __cplusplus
}
#endif

#endif /* SEAL_H */
