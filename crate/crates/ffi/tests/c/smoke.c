#include <stdio.h>
#include <string.h>
#include "storyreel.h"

static const char *PLAN =
    "{\"plan_version\":1,\"spec\":{\"description\":\"x\",\"characters\":[{\"name\":\"Ada\",\"description\":\"a tall woman\"}]},"
    "\"chapters\":[{\"index\":1,\"summary\":\"s\",\"characters\":[\"Ada\"],\"timeline\":\"Day 1\",\"justification\":\"j\"}],"
    "\"locations\":[{\"name\":\"Forest\",\"background_description\":\"tall pines\"}],"
    "\"scenes\":[{\"chapter_index\":1,\"index\":1,\"location_name\":\"Forest\",\"characters\":[\"Ada\"],\"tone\":\"calm\",\"shot_count\":1}],"
    "\"shots\":[{\"scene_index\":1,\"index\":1,\"kind\":\"Narrative\",\"emotion\":{\"Ada\":\"Happy\"},\"pose\":{\"Ada\":\"Standing\"},"
    "\"interaction\":\"None\",\"keyframe_prompt\":\"k\",\"video_prompt\":\"v\",\"camera\":\"wide\"}]}";

int main(void) {
    if (sr_abi_version() != SR_ABI_VERSION) return 10;
    SrPlan *plan = NULL;
    if (sr_plan_parse(PLAN, &plan) != SR_STATUS_OK) { fprintf(stderr, "%s\n", sr_last_error()); return 11; }
    char *report = NULL;
    if (sr_plan_validate(plan, false, &report) != SR_STATUS_OK) return 12;
    sr_string_free(report);
    SrMovement m;
    if (sr_classify_movement_mask(0, 3, &m) != SR_STATUS_OK || m != SR_MOVEMENT_ENTRY) return 13;
    if (sr_classify_movement_mask(1, 1, &m) != SR_STATUS_INVALID_ARGUMENT || sr_last_error() == NULL) return 14;
    unsigned char px[8 * 8 * 3];
    memset(px, 40, sizeof px);
    double drift = -1.0;
    if (sr_background_drift(px, 1, px, 8, 8, SR_ENCODER_MEAN_COLOR_GRID, &drift) != SR_STATUS_OK || drift != 0.0) return 15;
    if (sr_plan_parse("{", &plan) != SR_STATUS_PARSE) return 16;
    sr_plan_free(plan);
    puts("ok");
    return 0;
}
