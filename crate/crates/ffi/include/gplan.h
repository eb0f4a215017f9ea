#ifndef GPLAN_H
#define GPLAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  GPLAN_DOMAIN_SIMPLE = 0,
  GPLAN_DOMAIN_SCAN = 1,
} GplanDomain;

typedef enum {
  GPLAN_ENGINE_GNN = 0,
  GPLAN_ENGINE_BASELINE = 1,
  GPLAN_ENGINE_POLICY = 2,
} GplanEngine;

typedef enum {
  GPLAN_STATUS_OK = 0,
  GPLAN_STATUS_NULL_POINTER = 1,
  GPLAN_STATUS_INVALID_UTF8 = 2,
  GPLAN_STATUS_PARSE = 3,
  GPLAN_STATUS_IO = 4,
  GPLAN_STATUS_MODEL = 5,
  GPLAN_STATUS_INVALID_ARGUMENT = 6,
  GPLAN_STATUS_NO_PLAN = 7,
  GPLAN_STATUS_PANIC = 8,
} GplanStatus;

/**
 * A trained policy/value model.
 */
typedef struct GplanModel GplanModel;

/**
 * Search outcome; owns the plan text.
 */
typedef struct GplanResult GplanResult;

/**
 * A grounded planning task.
 */
typedef struct GplanTask GplanTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gplan_version(void);

/**
 * Message for the last failed call on this thread ("" after a success).
 * Valid until the next call on this thread.
 */
const char *gplan_last_error(void);

/**
 * Parses and grounds a domain/problem pair given as PDDL text.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be writable.
 */
GplanStatus gplan_task_from_pddl(const char *domain_pddl,
                                 const char *problem_pddl,
                                 GplanTask **out);

/**
 * Generates a droneworld instance. `targets` is ignored for the simple
 * domain.
 *
 * # Safety
 * `out` must be writable.
 */
GplanStatus gplan_task_generate(GplanDomain domain,
                                size_t width,
                                double density,
                                size_t targets,
                                uint64_t seed,
                                GplanTask **out);

/**
 * Number of ground actions (0 for a null task).
 *
 * # Safety
 * `task` must be null or a live handle.
 */
size_t gplan_task_num_actions(const GplanTask *task);

/**
 * # Safety
 * `task` must be null or a handle not yet freed.
 */
void gplan_task_free(GplanTask *task);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
GplanStatus gplan_model_load(const char *path, GplanModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void gplan_model_free(GplanModel *model);

/**
 * Searches for a plan. `model` may be null for the baseline engine.
 * `max_seconds <= 0` means no time limit. A result is produced whether or
 * not a plan was found; check [`gplan_result_success`].
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
GplanStatus gplan_solve(const GplanTask *task,
                        const GplanModel *model,
                        GplanEngine engine,
                        size_t max_expansions,
                        double max_seconds,
                        GplanResult **out);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
bool gplan_result_success(const GplanResult *r);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
size_t gplan_result_plan_len(const GplanResult *r);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
size_t gplan_result_expanded(const GplanResult *r);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
size_t gplan_result_generated(const GplanResult *r);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
double gplan_result_elapsed_ms(const GplanResult *r);

/**
 * Plan text, one `(action args...)` per line; "" when no plan was found.
 * Owned by the result.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
const char *gplan_result_plan_text(const GplanResult *r);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void gplan_result_free(GplanResult *r);

/**
 * Checks a plan given as text. `*valid` is set to whether the plan applies
 * from the initial state and reaches the goal; `*failed_step` to the first
 * failing step (or the plan length when only the goal is missed), and to
 * -1 for a valid plan.
 *
 * # Safety
 * `task` must be live; `plan_text` NUL-terminated; outputs writable.
 */
GplanStatus gplan_validate_plan(const GplanTask *task,
                                const char *plan_text,
                                bool *valid,
                                int64_t *failed_step);

/**
 * Breadth-first optimal plan length; `*length` is -1 when the goal is
 * unreachable. Exploring more than `max_states` states is an error.
 *
 * # Safety
 * `task` must be live; `length` writable.
 */
GplanStatus gplan_optimal_plan_length(const GplanTask *task, size_t max_states, int64_t *length);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GPLAN_H */
