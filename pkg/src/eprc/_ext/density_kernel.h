#ifndef EPRC_DENSITY_KERNEL_H
#define EPRC_DENSITY_KERNEL_H

#include <stddef.h>

/* Packed per-column parameters of the monotone CDF network (width 3, 4 layers).
 * Offsets into a 43-entry array, matrices row-major (out, in). */
#define EPRC_H0 0
#define EPRC_H1 3
#define EPRC_H2 12
#define EPRC_H3 21
#define EPRC_B0 24
#define EPRC_B1 27
#define EPRC_B2 30
#define EPRC_B3 33
#define EPRC_F0 34
#define EPRC_F1 37
#define EPRC_F2 40
#define EPRC_NPARAM 43

/* Sum of -log2 P(x - 1/2 < X <= x + 1/2) over n values, probability floored at `floor`.
 * Writes d(bits)/dx into dx (may be NULL) and accumulates d(bits)/d(param) into gparam
 * (may be NULL). Returns the total in bits. */
double eprc_nll_f32(const float *x, ptrdiff_t n, const float *param, float floor_,
                    float *dx, double *gparam);
double eprc_nll_f64(const double *x, ptrdiff_t n, const double *param, double floor_,
                    double *dx, double *gparam);

/* Logits of the CDF at n points (forward only). */
void eprc_logits_f64(const double *x, ptrdiff_t n, const double *param, double *out);

#endif
