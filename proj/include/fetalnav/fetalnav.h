#ifndef FETALNAV_H
#define FETALNAV_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FN_API __declspec(dllexport)
#else
#define FN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

#define FN_API_VERSION 1

typedef enum fn_status {
    FN_OK = 0,
    FN_ERR_INVALID_ARGUMENT = 1,
    FN_ERR_NOT_FOUND = 2,
    FN_ERR_IO = 3,
    FN_ERR_NUMERIC = 4,
    FN_ERR_DEGENERATE = 5,
    FN_ERR_INTERNAL = 6
} fn_status;

typedef struct fn_workspace fn_workspace;
typedef struct fn_server fn_server;

/* Progress lines from long-running calls. `user` is passed back unchanged. */
typedef void (*fn_log_fn)(void* user, const char* line);

FN_API int fn_api_version(void);
FN_API const char* fn_status_name(fn_status s);

/* Message of the last failed call on this thread; never NULL. */
FN_API const char* fn_last_error_message(void);

/* Strings returned through `char** out` are owned by the caller. */
FN_API void fn_string_free(char* s);

FN_API void fn_set_log_callback(fn_log_fn fn, void* user);

/* profile: "paper" or "desk". */
FN_API fn_status fn_workspace_open(const char* root, const char* profile, fn_workspace** out);
FN_API void fn_workspace_close(fn_workspace* ws);
/* Resolved profile as JSON. */
FN_API fn_status fn_workspace_profile(const fn_workspace* ws, char** out_json);

FN_API fn_status fn_phantom_generate(const fn_workspace* ws, int n, uint64_t seed, const char* out_dir,
                                     char** out_json);
FN_API fn_status fn_dataset_slice(const fn_workspace* ws, const char* volumes_dir, int per_volume, uint64_t seed,
                                  const char* out_dir);
FN_API fn_status fn_dataset_labeled(const fn_workspace* ws, const char* out_dir);
FN_API fn_status fn_dataset_folds(const char* volumes_dir, const char* out_path, char** out_json);
FN_API fn_status fn_loocv_audit(const fn_workspace* ws, char** out_json);

/* stage: "s", "ss" or "ssclass". */
FN_API fn_status fn_seg_train(const fn_workspace* ws, int fold, const char* stage, int resume, char** out_json);
FN_API fn_status fn_seg_eval(const fn_workspace* ws, int fold, const char* stage, char** out_json);

/* masks: "pred" or "none". */
FN_API fn_status fn_pose_train(const fn_workspace* ws, int fold, const char* masks, int resume, char** out_json);
FN_API fn_status fn_pose_eval(const fn_workspace* ws, int fold, const char* masks, char** out_json);
FN_API fn_status fn_pose_pool(const fn_workspace* ws, const char* masks, char** out_json);

FN_API fn_status fn_stream_synth(const fn_workspace* ws, const char* volume_id, int frames, double fps,
                                 const char* out_dir, char** out_json);

/* events, labels and truth may be NULL or empty. */
FN_API fn_status fn_pipeline_run(const fn_workspace* ws, const char* stream, int fold, const char* annotation,
                                 const char* events, const char* labels, const char* truth, const char* masks,
                                 double hz, const char* out_dir, char** out_json);

/* t_mm and r_rad are 3-vectors. */
FN_API fn_status fn_annotate(const char* volume_path, const double* t_mm, const double* r_rad, const char* label,
                             const char* out_path);

/* Proximity of two poses given as (t_mm[3], r_rad[3]); out: trans_mm, rot_deg. */
FN_API fn_status fn_proximity(const double* pred_t, const double* pred_r, const double* sp_t, const double* sp_r,
                              double* out_trans_mm, double* out_rot_deg);

/* static_dir may be NULL. port 0 picks a free port, reported by fn_server_port. */
FN_API fn_status fn_server_start(const char* host, int port, const char* volumes_dir, const char* models_dir,
                                 const char* static_dir, fn_server** out);
FN_API int fn_server_port(const fn_server* s);
/* Blocks until fn_server_stop is called from another thread. */
FN_API fn_status fn_server_wait(fn_server* s);
FN_API void fn_server_stop(fn_server* s);
FN_API void fn_server_free(fn_server* s);

#ifdef __cplusplus
}
#endif

#endif
