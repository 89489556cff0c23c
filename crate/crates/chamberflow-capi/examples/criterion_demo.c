/* Minimal consumer of the C API: parse a config, run the existence
 * criterion, print the verdicts. Build (from the repository root):
 *
 *   cargo build -p chamberflow-capi
 *   cc crates/chamberflow-capi/examples/criterion_demo.c \
 *      -Icrates/chamberflow-capi/include \
 *      target/debug/libchamberflow_capi.a -lm -lpthread -ldl -o criterion_demo
 */
#include <stdio.h>
#include <string.h>
#include "chamberflow.h"

int main(void) {
    printf("chamberflow %s\n", cf_version());

    CfConfig *cfg = NULL;
    const char *toml = "[polytope]\npreset = \"cp2-blowup\"\n";
    if (cf_config_parse(toml, &cfg) != CF_STATUS_OK) {
        fprintf(stderr, "config: %s\n", cf_last_error());
        return 1;
    }

    char *json = NULL;
    if (cf_criterion_run(cfg, &json) != CF_STATUS_OK) {
        fprintf(stderr, "criterion: %s\n", cf_last_error());
        cf_config_free(cfg);
        return 1;
    }

    /* Keys print in sorted order: "ke" comes before "soliton", so the first
     * "exists" belongs to the test at the origin. */
    const char *ke = strstr(json, "\"exists\"");
    const char *soliton = ke ? strstr(ke + 1, "\"exists\"") : NULL;
    printf("test at origin:  %s\n",
           ke && !strncmp(ke + 10, "true", 4) ? "existence holds" : "existence fails");
    printf("test at soliton: %s\n",
           soliton && !strncmp(soliton + 10, "true", 4) ? "existence holds" : "existence fails");

    cf_string_free(json);
    cf_config_free(cfg);
    return 0;
}
