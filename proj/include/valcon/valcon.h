#ifndef VALCON_VALCON_H
#define VALCON_VALCON_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(VALCON_BUILDING)
#    define VC_API __declspec(dllexport)
#  else
#    define VC_API __declspec(dllimport)
#  endif
#else
#  define VC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as the CLI exit codes. */
typedef enum vc_status {
    VC_OK = 0,
    VC_ERR_OTHER = 1,
    VC_ERR_CONFIG = 2,     /* bad config, usage or arguments */
    VC_ERR_NETWORK = 3,    /* endpoint unreachable or failed probes */
    VC_ERR_VALIDATION = 4  /* malformed or inconsistent input data */
} vc_status;

VC_API const char* vc_version(void);

/* Message of the last failed call on this thread; never NULL. */
VC_API const char* vc_last_error(void);

/* trace, debug, info, warn, error, critical or off. Logs go to stderr. */
VC_API vc_status vc_set_log_level(const char* level);

/* Frees strings returned through out-parameters. */
VC_API void vc_string_free(char* s);

/* Command-line switches layered over a config file. Unset fields leave the
   file's value alone: tri-state ints use -1, pointers use NULL. List fields
   are comma-separated. */
typedef struct vc_overrides {
    int abstain;
    int in_context_example;
    const char* use_cases;
    const char* languages;
    const char* value_conditions; /* "" inside the list is the unsteered baseline */
    const char* output_dir;
} vc_overrides;

VC_API void vc_overrides_init(vc_overrides* o);

/* Runs one subcommand: generate, survey, judge, analyze, simulate, report or
   stats. config_json is the config document; base_dir (may be NULL) anchors
   its relative paths. On return *summary_json (if non-NULL) holds a JSON
   object {"status","message","summary","files"} to free with vc_string_free,
   also for failed runs. */
VC_API vc_status vc_run_command(const char* command, const char* config_json, const char* base_dir,
                                const vc_overrides* overrides, char** summary_json);

/* Human-readable summary of the last command run on this thread. */
VC_API const char* vc_last_message(void);

/* As vc_run_command with the config read from a file. */
VC_API vc_status vc_run_command_file(const char* command, const char* config_path, const vc_overrides* overrides,
                                     char** summary_json);

VC_API vc_status vc_cmd_generate(const char* config_json, const char* base_dir, char** summary_json);
VC_API vc_status vc_cmd_survey(const char* config_json, const char* base_dir, char** summary_json);
VC_API vc_status vc_cmd_judge(const char* config_json, const char* base_dir, char** summary_json);
VC_API vc_status vc_cmd_analyze(const char* config_json, const char* base_dir, char** summary_json);
VC_API vc_status vc_cmd_simulate(const char* config_json, const char* base_dir, char** summary_json);
VC_API vc_status vc_cmd_report(const char* config_json, const char* base_dir, char** summary_json);
VC_API vc_status vc_cmd_stats(const char* config_json, const char* base_dir, char** summary_json);

/* Divergence over n_dists distributions of n_labels entries each, row-major. */
VC_API vc_status vc_dd_divergence(const double* probs, size_t n_dists, size_t n_labels, double* out);
VC_API vc_status vc_js_centroid(const double* probs, size_t n_dists, size_t n_labels, double* centroid_out);
VC_API double vc_dd_upper_bound(size_t n_labels);

/* Corpus handle. */
typedef struct vc_corpus vc_corpus;
VC_API vc_status vc_corpus_load(const char* path, vc_corpus** out);
VC_API size_t vc_corpus_item_count(const vc_corpus* c);
VC_API size_t vc_corpus_topic_count(const vc_corpus* c);
VC_API vc_status vc_corpus_stats_csv(const vc_corpus* c, char** csv_out);
VC_API void vc_corpus_free(vc_corpus* c);

/* Mock model server over a synthetic respondent. corpus_path and pvq_paths
   (comma-separated) may be NULL. port 0 picks a free port. */
typedef struct vc_mock_server vc_mock_server;
VC_API vc_status vc_mock_server_start(const char* respondent_path, const char* corpus_path, const char* pvq_paths,
                                      const char* host, int port, vc_mock_server** out);
VC_API int vc_mock_server_port(const vc_mock_server* s);
/* Base URL for endpoint configs, e.g. http://127.0.0.1:PORT/v1; valid until stop. */
VC_API const char* vc_mock_server_base_url(const vc_mock_server* s);
VC_API size_t vc_mock_server_requests(const vc_mock_server* s);
VC_API void vc_mock_server_stop(vc_mock_server* s);

#ifdef __cplusplus
}
#endif

#endif
