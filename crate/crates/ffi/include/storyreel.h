#ifndef STORYREEL_H
#define STORYREEL_H

#include <stdbool.h>
#include <stdint.h>

#define SR_ABI_VERSION 1

// Result code of every call.
typedef enum SrStatus {
  SR_STATUS_OK = 0,
  SR_STATUS_NULL_POINTER = 1,
  SR_STATUS_INVALID_UTF8 = 2,
  SR_STATUS_PARSE = 3,
  SR_STATUS_INVALID_PLAN = 4,
  SR_STATUS_INVALID_ARGUMENT = 5,
  SR_STATUS_BACKEND = 6,
  SR_STATUS_RENDER = 7,
  SR_STATUS_PANIC = 8,
} SrStatus;

typedef enum SrMovement {
  SR_MOVEMENT_ENTRY = 0,
  SR_MOVEMENT_EXIT = 1,
  SR_MOVEMENT_NO_CHANGE = 2,
  SR_MOVEMENT_COMBINATION = 3,
} SrMovement;

typedef enum SrEncoder {
  SR_ENCODER_MEAN_COLOR_GRID = 0,
  SR_ENCODER_CHANNEL_HISTOGRAM = 1,
} SrEncoder;

// A parsed story plan.
typedef struct SrPlan SrPlan;

// ABI version of this library.
uint32_t sr_abi_version(void);

// Message of the last failed call on this thread, or NULL. Owned by the
// library and valid until the next call on the same thread.
const char *sr_last_error(void);

// Free a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void sr_string_free(char *s);

// Parse a plan document into a new handle stored in `*out`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SrStatus sr_plan_parse(const char *json, struct SrPlan **out);

// Release a plan handle. NULL is ignored.
//
// # Safety
// `plan` must come from [`sr_plan_parse`] and not have been freed.
void sr_plan_free(struct SrPlan *plan);

// Validate a plan. The JSON report is stored in `*report` (free with
// [`sr_string_free`]); returns `SR_STATUS_INVALID_PLAN` when it has errors.
//
// # Safety
// `plan` must be a live handle; `report` must be writable.
enum SrStatus sr_plan_validate(const struct SrPlan *plan, bool strict, char **report);

// Canonical JSON of a plan.
//
// # Safety
// `plan` must be a live handle; `out` must be writable.
enum SrStatus sr_plan_to_json(const struct SrPlan *plan, char **out);

// Movement type of a transition whose exiting and entering characters are
// given as bit masks over character ids.
//
// # Safety
// `out` must be writable.
enum SrStatus sr_classify_movement_mask(uint64_t exiting, uint64_t entering, enum SrMovement *out);

// Transition metadata between narrative shots `prev_shot` and
// `prev_shot + 2` of a scene, as JSON.
//
// # Safety
// `plan` must be a live handle; `out` must be writable.
enum SrStatus sr_derive_transition(const struct SrPlan *plan,
                                   uint32_t scene,
                                   uint32_t prev_shot,
                                   char **out);

// Render a plan with the in-process mock seats into `out_dir`. `config_toml`
// may be NULL for defaults; its `out` key is replaced by `out_dir`. The run
// manifest JSON is stored in `*manifest`.
//
// # Safety
// `plan` must be a live handle; strings must be NUL-terminated; `manifest` must be writable.
enum SrStatus sr_render_mock(const struct SrPlan *plan,
                             const char *config_toml,
                             const char *out_dir,
                             char **manifest);

// Summed squared embedding distance between `frame_count` RGB8 frames
// (packed, `width * height * 3` bytes each) and an RGB8 background.
//
// # Safety
// `frames` must hold `frame_count * width * height * 3` bytes (may be NULL
// when `frame_count` is 0); `background` must hold `width * height * 3` bytes.
enum SrStatus sr_background_drift(const uint8_t *frames,
                                  uint32_t frame_count,
                                  const uint8_t *background,
                                  uint32_t width,
                                  uint32_t height,
                                  enum SrEncoder encoder,
                                  double *out);

#endif  /* STORYREEL_H */
