#include <stdio.h>
#include <string.h>

#include "speechsem.h"

int main(void) {
    uint32_t ref[3] = {5, 6, 7};
    uint32_t hyp[4] = {5, 9, 7, 8};
    double w = 0.0;
    if (ss_wer(ref, 3, hyp, 4, &w) != SS_STATUS_OK || w < 0.666 || w > 0.667) return 1;
    if (ss_wer(NULL, 0, hyp, 4, &w) != SS_STATUS_INVALID_ARGUMENT) return 2;
    char msg[64];
    if (ss_last_error(msg, sizeof msg) == 0 || strlen(msg) == 0) return 3;

    SsModel *m = NULL;
    if (ss_model_new(7, &m) != SS_STATUS_OK || m == NULL) return 4;
    size_t n = 0;
    if (ss_model_param_count(m, &n) != SS_STATUS_OK) return 5;
    ss_model_free(m);

    uint32_t toks[4] = {7, 1, 2, 9};
    uint32_t out[4];
    size_t len = 0;
    if (ss_prune(toks, 4, out, 4, &len) != SS_STATUS_OK || len != 1 || out[0] != 7) return 6;
    printf("%zu\n", n);
    return 0;
}
