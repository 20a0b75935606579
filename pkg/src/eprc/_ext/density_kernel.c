#include <math.h>
#include <string.h>

#include "density_kernel.h"

#define BLOCK 256

#define T float
#define FN eprc_nll_f32
#define TANH tanhf
#define EXP expf
#define LOG2 log2f
#include "density_kernel_impl.h"
#undef T
#undef FN
#undef TANH
#undef EXP
#undef LOG2

#define T double
#define FN eprc_nll_f64
#define TANH tanh
#define EXP exp
#define LOG2 log2
#include "density_kernel_impl.h"
#undef T
#undef FN
#undef TANH
#undef EXP
#undef LOG2

void eprc_logits_f64(const double *x, ptrdiff_t n, const double *p, double *out)
{
    for (ptrdiff_t k = 0; k < n; k++) {
        double u0[3], u1[3], u2[3];
        for (int j = 0; j < 3; j++) {
            double z = p[EPRC_H0 + j] * x[k] + p[EPRC_B0 + j];
            u0[j] = z + p[EPRC_F0 + j] * tanh(z);
        }
        for (int j = 0; j < 3; j++) {
            double z = p[EPRC_B1 + j];
            for (int i = 0; i < 3; i++) z += p[EPRC_H1 + 3 * j + i] * u0[i];
            u1[j] = z + p[EPRC_F1 + j] * tanh(z);
        }
        for (int j = 0; j < 3; j++) {
            double z = p[EPRC_B2 + j];
            for (int i = 0; i < 3; i++) z += p[EPRC_H2 + 3 * j + i] * u1[i];
            u2[j] = z + p[EPRC_F2 + j] * tanh(z);
        }
        double z = p[EPRC_B3];
        for (int i = 0; i < 3; i++) z += p[EPRC_H3 + i] * u2[i];
        out[k] = z;
    }
}
