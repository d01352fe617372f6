#ifndef DITSINGER_H
#define DITSINGER_H

/*
 * C interface to the DiTSinger toolkit. Every function returns a status
 * code; on failure ds_last_error() describes the problem. Strings returned
 * through char** out-parameters are owned by the caller and released with
 * ds_string_free. Handles are released with their matching *_free.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DS_API __declspec(dllexport)
#else
#define DS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ds_status {
  DS_OK = 0,
  DS_ERR_INVALID_ARGUMENT = 1,
  DS_ERR_IO = 2,
  DS_ERR_VERSION = 3,
  DS_ERR_CHECKSUM = 4,
  DS_ERR_GEOMETRY = 5,
  DS_ERR_DIVERGED = 6,
  DS_ERR_INTERNAL = 7
} ds_status;

typedef struct ds_model ds_model;
typedef struct ds_score ds_score;
typedef struct ds_mel ds_mel;
typedef struct ds_corpus ds_corpus;

/* Message for the most recent failure on the calling thread. */
DS_API const char* ds_last_error(void);
DS_API const char* ds_version(void);
DS_API const char* ds_status_name(ds_status status);
DS_API void ds_string_free(char* s);
/* 64-bit FNV-1a of a byte range as 16 hex digits. */
DS_API ds_status ds_fingerprint(const void* bytes, size_t size, char** hex);

/* ---- configuration ------------------------------------------------------ */

/* Resolves a run config (JSON, comments allowed; NULL for defaults) with
 * overrides (JSON object, same schema; NULL for none) applied on top.
 * Returns the full resolved config and its hash. */
DS_API ds_status ds_config_resolve(const char* config_text, const char* overrides_json, char** resolved_json,
                                   char** config_hash);
DS_API ds_status ds_preset_config(const char* preset, char** model_json);
/* Analytic forward FLOPs for a clip of the given length. */
DS_API ds_status ds_count_flops(const char* model_json, double seconds, char** flops_json);

/* ---- data ---------------------------------------------------------------- */

/* params_json keys: groups, melodies, variants, holdout, unseen_melodies,
 * vocab, max_chars, bins, hop, sample_rate, seed (required). Writes
 * out_dir/{train,test,test_unseen}. */
DS_API ds_status ds_generate_corpus(const char* params_json, const char* out_dir, char** summary_json);
DS_API ds_status ds_corpus_open(const char* corpus_dir, ds_corpus** out);
DS_API size_t ds_corpus_size(const ds_corpus* corpus);
/* {"split", "params": {...}, "samples"} */
DS_API ds_status ds_corpus_info(const ds_corpus* corpus, char** info_json);
DS_API ds_status ds_corpus_score(const ds_corpus* corpus, size_t index, ds_score** out);
DS_API ds_status ds_corpus_mel(const ds_corpus* corpus, size_t index, ds_mel** out);
DS_API void ds_corpus_free(ds_corpus* corpus);

/* A score may carry an optional "geometry": {"bins", "hop", "sample_rate"}
 * object; sampling checks it against the model. */
DS_API ds_status ds_score_parse(const char* json_text, ds_score** out);
DS_API ds_status ds_score_to_json(const ds_score* score, char** json_text);
DS_API void ds_score_free(ds_score* score);

DS_API ds_status ds_mel_load(const char* path, ds_mel** out);
DS_API ds_status ds_mel_save(const ds_mel* mel, const char* path);
DS_API ds_status ds_mel_shape(const ds_mel* mel, int* frames, int* bins, int* hop, int* sample_rate);
/* Copies frames*bins row-major values into dst (capacity in elements). */
DS_API ds_status ds_mel_values(const ds_mel* mel, double* dst, size_t capacity);
DS_API void ds_mel_free(ds_mel* mel);

/* Oracle rendering of a score at the given geometry. */
DS_API ds_status ds_oracle_render(const ds_score* score, int bins, int hop, int sample_rate, int vocab, ds_mel** out);

/* ---- alignment ------------------------------------------------------------- */

/* CSV grid of {0, -inf} over latent frames x (phonemes + silence). frames <= 0
 * derives the count from the score duration. */
DS_API ds_status ds_dump_mask(const ds_score* score, double delta, double frame_seconds, int frames, char** csv);

/* ---- training ---------------------------------------------------------------- */

typedef void (*ds_progress_fn)(int step, double loss, void* user);

/* Trains with a resolved run config. resume_path may be NULL. Writes the
 * checkpoint directory, loss.csv and train_report.json under out_dir and
 * returns the report. */
DS_API ds_status ds_train(const char* run_config_json, const char* resume_path, ds_progress_fn progress, void* user,
                          char** report_json);

/* ---- inference --------------------------------------------------------------- */

/* Loads a model file (model.bin) or a training checkpoint. */
DS_API ds_status ds_model_load(const char* path, ds_model** out);
DS_API ds_status ds_model_config(const ds_model* model, char** model_json);
DS_API void ds_model_free(ds_model* model);

/* sampler_json keys: kind ("ode" | "ancestral"), steps, w, seed. Fails with
 * DS_ERR_GEOMETRY when the score does not fit the model. */
DS_API ds_status ds_sample(const ds_model* model, const ds_score* score, const char* sampler_json, ds_mel** out);

/* ---- evaluation ---------------------------------------------------------------- */

/* Scores hyp against ref. F0 arrays may be NULL, in which case tracks are
 * decoded from the pitch bands of each mel. Returns
 * {"mcd", "ffe", "f0rmse" (null when absent), "frames_compared"}. */
DS_API ds_status ds_evaluate_pair(const ds_mel* ref, const double* ref_f0, size_t ref_f0_len, const ds_mel* hyp,
                                  const double* hyp_f0, size_t hyp_f0_len, char** row_json);
/* Phoneme-band accuracy of mel against the score's oracle truth. */
DS_API ds_status ds_band_accuracy(const ds_mel* mel, const ds_score* score, double* accuracy);

/* ---- experiments ----------------------------------------------------------------- */

/* budget_json: {"groups": [...], "total_melodies", "variants", "holdout",
 * "preset", "train": {...}, "sampler": {...}, "eval_samples"}. */
DS_API ds_status ds_experiment_groups(const char* budget_json, uint64_t seed, char** table_json);
/* budget_json: {"presets": [...], "melodies": [...], "variants", "train",
 * "sampler", "eval_samples", "clip_seconds"}. */
DS_API ds_status ds_experiment_scaling(const char* budget_json, uint64_t seed, char** table_json);

#ifdef __cplusplus
}
#endif

#endif
