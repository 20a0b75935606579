/* Body of the noisy-likelihood kernel, instantiated once per floating type.
 * Expects T, FN, TANH, EXP, LOG2 to be defined by the includer.
 *
 * Each stage is a flat loop over a block of elements so the compiler can
 * vectorize it (including the tanh/exp/log2 calls via libmvec). */

double FN(const T *x, ptrdiff_t n, const T *param, T floor_, T *dx, double *gparam)
{
    T p[EPRC_NPARAM];
    memcpy(p, param, sizeof(p));
    const T inv_ln2 = (T)1.4426950408889634;
    double total = 0.0;
    double gacc[EPRC_NPARAM] = {0};

    /* activations per evaluation point (lower/upper bin edge) */
    static __thread T xe[2][BLOCK], t[2][3][3][BLOCK], u[2][3][3][BLOCK], L[2][BLOCK];
    static __thread T dL[2][BLOCK], bits[BLOCK], gx[BLOCK];
    static __thread T du[3][BLOCK], dz[3][BLOCK], dv[3][BLOCK];

    for (ptrdiff_t start = 0; start < n; start += BLOCK) {
        const ptrdiff_t m = n - start < BLOCK ? n - start : BLOCK;
        const T *restrict xb = x + start;

        for (int e = 0; e < 2; e++) {
            const T off = e ? (T)0.5 : (T)-0.5;
            T *restrict xv = xe[e];
            for (ptrdiff_t k = 0; k < m; k++) xv[k] = xb[k] + off;
            /* layer 0: 1 -> 3 */
            for (int j = 0; j < 3; j++) {
                const T h = p[EPRC_H0 + j], b = p[EPRC_B0 + j], f = p[EPRC_F0 + j];
                T *restrict tt = t[e][0][j];
                T *restrict uu = u[e][0][j];
                for (ptrdiff_t k = 0; k < m; k++) {
                    T z = h * xv[k] + b;
                    T th = TANH(z);
                    tt[k] = th;
                    uu[k] = z + f * th;
                }
            }
            /* layers 1, 2: 3 -> 3 */
            for (int l = 1; l < 3; l++) {
                const int H = l == 1 ? EPRC_H1 : EPRC_H2;
                const int B = l == 1 ? EPRC_B1 : EPRC_B2;
                const int F = l == 1 ? EPRC_F1 : EPRC_F2;
                const T *restrict a0 = u[e][l - 1][0];
                const T *restrict a1 = u[e][l - 1][1];
                const T *restrict a2 = u[e][l - 1][2];
                for (int j = 0; j < 3; j++) {
                    const T h0 = p[H + 3 * j], h1 = p[H + 3 * j + 1], h2 = p[H + 3 * j + 2];
                    const T b = p[B + j], f = p[F + j];
                    T *restrict tt = t[e][l][j];
                    T *restrict uu = u[e][l][j];
                    for (ptrdiff_t k = 0; k < m; k++) {
                        T z = h0 * a0[k] + h1 * a1[k] + h2 * a2[k] + b;
                        T th = TANH(z);
                        tt[k] = th;
                        uu[k] = z + f * th;
                    }
                }
            }
            /* layer 3: 3 -> 1 */
            {
                const T h0 = p[EPRC_H3], h1 = p[EPRC_H3 + 1], h2 = p[EPRC_H3 + 2], b = p[EPRC_B3];
                const T *restrict a0 = u[e][2][0];
                const T *restrict a1 = u[e][2][1];
                const T *restrict a2 = u[e][2][2];
                T *restrict out = L[e];
                for (ptrdiff_t k = 0; k < m; k++) out[k] = h0 * a0[k] + h1 * a1[k] + h2 * a2[k] + b;
            }
        }

        /* likelihood of the unit bin, computed in the lower sigmoid tail */
        {
            const T *restrict lo = L[0];
            const T *restrict hi = L[1];
            T *restrict d0 = dL[0];
            T *restrict d1 = dL[1];
            T *restrict bb = bits;
            for (ptrdiff_t k = 0; k < m; k++) {
                T s = (lo[k] + hi[k] > 0) ? (T)-1 : (T)1;
                T v0 = s * lo[k], v1 = s * hi[k];
                T e0 = EXP(-(v0 < 0 ? -v0 : v0));
                T e1 = EXP(-(v1 < 0 ? -v1 : v1));
                T s0 = v0 >= 0 ? (T)1 / ((T)1 + e0) : e0 / ((T)1 + e0);
                T s1 = v1 >= 0 ? (T)1 / ((T)1 + e1) : e1 / ((T)1 + e1);
                T lik = s * (s1 - s0);
                T live = lik > floor_ ? (T)1 : (T)0;
                T lk = lik > floor_ ? lik : floor_;
                bb[k] = -LOG2(lk);
                T dlik = -live * inv_ln2 / lk;
                d0[k] = -dlik * s0 * ((T)1 - s0);
                d1[k] = dlik * s1 * ((T)1 - s1);
            }
            double bsum = 0.0;
            for (ptrdiff_t k = 0; k < m; k++) bsum += bb[k];
            total += bsum;
        }

        if (dx == NULL && gparam == NULL) continue;

        for (ptrdiff_t k = 0; k < m; k++) gx[k] = 0;
        for (int e = 0; e < 2; e++) {
            const T *restrict d = dL[e];
            /* layer 3 */
            {
                double acc = 0.0;
                for (ptrdiff_t k = 0; k < m; k++) acc += d[k];
                gacc[EPRC_B3] += acc;
            }
            for (int i = 0; i < 3; i++) {
                const T *restrict a = u[e][2][i];
                const T h = p[EPRC_H3 + i];
                T *restrict g = du[i];
                double acc = 0.0;
                for (ptrdiff_t k = 0; k < m; k++) {
                    acc += d[k] * a[k];
                    g[k] = d[k] * h;
                }
                gacc[EPRC_H3 + i] += acc;
            }
            /* layers 2, 1: gradient w.r.t. pre-activation, then inputs */
            for (int l = 2; l >= 1; l--) {
                const int H = l == 1 ? EPRC_H1 : EPRC_H2;
                const int B = l == 1 ? EPRC_B1 : EPRC_B2;
                const int F = l == 1 ? EPRC_F1 : EPRC_F2;
                for (int j = 0; j < 3; j++) {
                    const T f = p[F + j];
                    const T *restrict tt = t[e][l][j];
                    const T *restrict g = du[j];
                    T *restrict zz = dz[j];
                    double accf = 0.0, accb = 0.0;
                    for (ptrdiff_t k = 0; k < m; k++) {
                        T z = g[k] * ((T)1 + f * ((T)1 - tt[k] * tt[k]));
                        zz[k] = z;
                        accf += g[k] * tt[k];
                        accb += z;
                    }
                    gacc[F + j] += accf;
                    gacc[B + j] += accb;
                }
                for (int j = 0; j < 3; j++) {
                    const T *restrict zz = dz[j];
                    for (int i = 0; i < 3; i++) {
                        const T *restrict a = u[e][l - 1][i];
                        double acc = 0.0;
                        for (ptrdiff_t k = 0; k < m; k++) acc += zz[k] * a[k];
                        gacc[H + 3 * j + i] += acc;
                    }
                }
                for (int i = 0; i < 3; i++) {
                    const T h0 = p[H + i], h1 = p[H + 3 + i], h2 = p[H + 6 + i];
                    const T *restrict z0 = dz[0];
                    const T *restrict z1 = dz[1];
                    const T *restrict z2 = dz[2];
                    T *restrict out = dv[i];
                    for (ptrdiff_t k = 0; k < m; k++) out[k] = h0 * z0[k] + h1 * z1[k] + h2 * z2[k];
                }
                for (int i = 0; i < 3; i++) memcpy(du[i], dv[i], (size_t)m * sizeof(T));
            }
            /* layer 0 */
            {
                const T *restrict xv = xe[e];
                T *restrict gxv = gx;
                for (int j = 0; j < 3; j++) {
                    const T f = p[EPRC_F0 + j], h = p[EPRC_H0 + j];
                    const T *restrict tt = t[e][0][j];
                    const T *restrict g = du[j];
                    double accf = 0.0, accb = 0.0, acch = 0.0;
                    for (ptrdiff_t k = 0; k < m; k++) {
                        T z = g[k] * ((T)1 + f * ((T)1 - tt[k] * tt[k]));
                        accf += g[k] * tt[k];
                        accb += z;
                        acch += z * xv[k];
                        gxv[k] += z * h;
                    }
                    gacc[EPRC_F0 + j] += accf;
                    gacc[EPRC_B0 + j] += accb;
                    gacc[EPRC_H0 + j] += acch;
                }
            }
        }
        if (dx) memcpy(dx + start, gx, (size_t)m * sizeof(T));
    }
    if (gparam)
        for (int q = 0; q < EPRC_NPARAM; q++) gparam[q] += gacc[q];
    return total;
}
