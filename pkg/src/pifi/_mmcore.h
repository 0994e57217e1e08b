#ifndef PIFI_MMCORE_H
#define PIFI_MMCORE_H

#include <stddef.h>

/* Fixed-order (ascending-k per output element) matrix products.
   out must be zero-initialized by the caller. */
void pifi_mm_f32(const float *a, const float *b, float *out,
                 ptrdiff_t m, ptrdiff_t k, ptrdiff_t n);
void pifi_mm_f64(const double *a, const double *b, double *out,
                 ptrdiff_t m, ptrdiff_t k, ptrdiff_t n);

#endif
