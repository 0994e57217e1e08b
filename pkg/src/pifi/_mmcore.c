/* Fixed-order matmul cores.
 *
 * Every out[i, j] accumulates a[i, :] * b[:, j] strictly in ascending k,
 * so results are bit-identical run to run. The kernel register-tiles
 * 4 rows x TILE columns: accumulators live in registers across the whole
 * k loop and are stored once. Built without -ffast-math: reassociation
 * would break the ordering guarantee (FMA contraction keeps it).
 */

#include "_mmcore.h"
#include <string.h>

#define PIFI_MM_BODY(T, TILE)                                              \
    ptrdiff_t i = 0, i0, p, j, j0;                                         \
    for (i0 = 0; i0 + 4 <= m; i0 += 4) {                                   \
        const T *a0 = a + (i0 + 0) * k, *a1 = a + (i0 + 1) * k;            \
        const T *a2 = a + (i0 + 2) * k, *a3 = a + (i0 + 3) * k;            \
        for (j0 = 0; j0 + TILE <= n; j0 += TILE) {                         \
            T c0[TILE], c1[TILE], c2[TILE], c3[TILE];                      \
            memset(c0, 0, sizeof c0); memset(c1, 0, sizeof c1);            \
            memset(c2, 0, sizeof c2); memset(c3, 0, sizeof c3);            \
            for (p = 0; p < k; p++) {                                      \
                const T *bp = b + p * n + j0;                              \
                const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];    \
                for (j = 0; j < TILE; j++) {                               \
                    c0[j] += v0 * bp[j];                                   \
                    c1[j] += v1 * bp[j];                                   \
                    c2[j] += v2 * bp[j];                                   \
                    c3[j] += v3 * bp[j];                                   \
                }                                                          \
            }                                                              \
            memcpy(out + (i0 + 0) * n + j0, c0, sizeof c0);                \
            memcpy(out + (i0 + 1) * n + j0, c1, sizeof c1);                \
            memcpy(out + (i0 + 2) * n + j0, c2, sizeof c2);                \
            memcpy(out + (i0 + 3) * n + j0, c3, sizeof c3);                \
        }                                                                  \
        if (j0 < n) {                                                      \
            const ptrdiff_t w = n - j0;                                    \
            T c0[TILE], c1[TILE], c2[TILE], c3[TILE];                      \
            memset(c0, 0, sizeof c0); memset(c1, 0, sizeof c1);            \
            memset(c2, 0, sizeof c2); memset(c3, 0, sizeof c3);            \
            for (p = 0; p < k; p++) {                                      \
                const T *bp = b + p * n + j0;                              \
                const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];    \
                for (j = 0; j < w; j++) {                                  \
                    c0[j] += v0 * bp[j];                                   \
                    c1[j] += v1 * bp[j];                                   \
                    c2[j] += v2 * bp[j];                                   \
                    c3[j] += v3 * bp[j];                                   \
                }                                                          \
            }                                                              \
            memcpy(out + (i0 + 0) * n + j0, c0, w * sizeof(T));            \
            memcpy(out + (i0 + 1) * n + j0, c1, w * sizeof(T));            \
            memcpy(out + (i0 + 2) * n + j0, c2, w * sizeof(T));            \
            memcpy(out + (i0 + 3) * n + j0, c3, w * sizeof(T));            \
        }                                                                  \
        i = i0 + 4;                                                        \
    }                                                                      \
    for (; i < m; i++) {                                                   \
        const T *ai = a + i * k;                                           \
        T *oi = out + i * n;                                               \
        for (p = 0; p < k; p++) {                                          \
            const T v = ai[p];                                             \
            const T *bp = b + p * n;                                       \
            for (j = 0; j < n; j++)                                        \
                oi[j] += v * bp[j];                                        \
        }                                                                  \
    }

void pifi_mm_f32(const float *restrict a, const float *restrict b,
                 float *restrict out, ptrdiff_t m, ptrdiff_t k, ptrdiff_t n)
{
    PIFI_MM_BODY(float, 32)
}

void pifi_mm_f64(const double *restrict a, const double *restrict b,
                 double *restrict out, ptrdiff_t m, ptrdiff_t k, ptrdiff_t n)
{
    PIFI_MM_BODY(double, 16)
}
