#include <stdio.h>
#include "blocksparse.h"

int main(void) {
    const float w[4] = {1.0f, -1.0f, 2.0f, -2.0f};
    const float x[2] = {1.0f, 1.0f};
    float y[2] = {0};
    BsMatrix *m = NULL;
    if (bs_matrix_from_dense(w, 2, 2, 1, NULL, &m) != BS_STATUS_OK) {
        fprintf(stderr, "%s\n", bs_last_error_message());
        return 1;
    }
    if (bs_spmm(x, 1, 2, m, BS_NONLINEARITY_RELU, y, 2) != BS_STATUS_OK) {
        fprintf(stderr, "%s\n", bs_last_error_message());
        return 1;
    }
    bs_matrix_free(m);
    printf("ok %g %g\n", y[0], y[1]);
    return 0;
}
