/* Minimal C consumer of the modelmarket C ABI.
 *
 * Build (from the workspace root):
 *   cargo build -p modelmarket-ffi --release
 *   cc crates/modelmarket-ffi/examples/demo.c \
 *      -Icrates/modelmarket-ffi/include \
 *      target/release/libmodelmarket_ffi.a -lm -o demo
 *   ./demo
 */
#include <stdio.h>

#include "modelmarket.h"

int main(void) {
    printf("modelmarket %s\n", mm_version());

    MmRun *run = NULL;
    MmStatus status = mm_simulate(NULL, 42, &run);
    if (status != MM_STATUS_OK) {
        fprintf(stderr, "simulate failed: %s\n", mm_last_error());
        return 1;
    }

    char *digest = mm_run_transcript_digest_hex(run);
    char *outcome = mm_run_outcome_json(run);
    printf("transcript digest: %s\n", digest);
    printf("outcome: %.120s...\n", outcome);
    mm_string_free(digest);
    mm_string_free(outcome);
    mm_run_free(run);

    char *attack = NULL;
    status = mm_attack("withhold_key", 7, &attack);
    if (status != MM_STATUS_OK) {
        fprintf(stderr, "attack failed: %s\n", mm_last_error());
        return 1;
    }
    printf("withhold_key verdict: %.120s...\n", attack);
    mm_string_free(attack);
    return 0;
}
