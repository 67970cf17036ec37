#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "ringconv.h"

#define CHECK(call)                                                               \
    do {                                                                          \
        RcStatus s_ = (call);                                                     \
        if (s_ != RC_STATUS_OK) {                                                 \
            fprintf(stderr, "%s: %s (%s)\n", #call, rc_status_name(s_),           \
                    rc_last_error_message());                                     \
            return 1;                                                             \
        }                                                                         \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: smoke MODEL\n");
        return 2;
    }
    RcModel *model = NULL;
    RcNetwork *net = NULL;
    CHECK(rc_model_load_file(argv[1], &model));

    size_t length = 0, channels = 0, params = 0, streaming = 0;
    CHECK(rc_model_input_shape(model, &length, &channels));
    CHECK(rc_model_param_count(model, &params));
    CHECK(rc_model_memory_bytes(model, RC_MODE_STREAMING, 0, &streaming));

    float *input = malloc(length * channels * sizeof(float));
    for (size_t i = 0; i < length * channels; i++) {
        input[i] = (float)sin(0.05 * (double)i);
    }

    CHECK(rc_network_new(model, &net));
    unsigned long long macs = 0;
    for (size_t t = 0; t < length; t++) {
        RcStepReport report;
        CHECK(rc_network_step(net, &input[t * channels], channels, &report));
        macs += report.total_macs;
    }
    float stream_probs[8], batch_probs[8];
    size_t n = 0, m = 0;
    CHECK(rc_network_finalize(net, stream_probs, 8, &n));
    CHECK(rc_batch_infer(model, input, length, channels, batch_probs, 8, &m));

    float extra = 0.0f;
    if (rc_network_step(net, &extra, 1, NULL) != RC_STATUS_SHAPE) {
        fprintf(stderr, "expected a shape error\n");
        return 1;
    }

    double max_dev = 0.0;
    for (size_t k = 0; k < n; k++) {
        double d = fabs((double)stream_probs[k] - (double)batch_probs[k]);
        if (d > max_dev) max_dev = d;
    }
    printf("params=%zu streaming_bytes=%zu classes=%zu macs=%llu max_dev=%g\n",
           params, streaming, n, macs, max_dev);

    rc_network_free(net);
    rc_model_free(model);
    free(input);
    return (n == m && max_dev <= 1e-5) ? 0 : 1;
}
