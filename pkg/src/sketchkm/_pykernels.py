"""Pure numpy versions of the compiled loops in ``_ckernels.pyx``.

Accumulations run in the same fixed order as the compiled code (feature by
feature, basis point by basis point), which keeps row blocks bit-identical to
slices of the full matrix.  Results may differ from the compiled backend in
the last ulp because ``np.exp``/``np.power`` are not libm.
"""
import numpy as np

GAUSSIAN = 0
POLYNOMIAL = 1
SOBOLEV = 2

# max temporary entries per block
_BLOCK = 1 << 21


def cross_kernel(code, A, B, param, degree):
    m, q = A.shape
    acc = np.zeros((m, B.shape[0]))
    if code == SOBOLEV:
        return 1.0 + np.minimum(A[:, :1], B[:, 0][None, :])
    for k in range(q):
        a = A[:, k][:, None]
        b = B[:, k][None, :]
        if code == GAUSSIAN:
            diff = a - b
            acc += diff * diff
        else:
            acc += a * b
    if code == GAUSSIAN:
        return np.exp(-acc * param)
    return np.power(acc + param, float(degree))


def kernel_expansion(code, A, B, beta, param, degree):
    m = A.shape[0]
    out = np.zeros((m, beta.shape[1]))
    if m == 0 or B.shape[0] == 0:
        return out
    step = max(1, _BLOCK // max(1, B.shape[0]))
    for start in range(0, m, step):
        blk = cross_kernel(code, A[start:start + step], B, param, degree)
        sub = out[start:start + step]
        for j in range(B.shape[0]):
            sub += blk[:, j][:, None] * beta[j][None, :]
    return out


def signed_scatter_rows(src, rows, signs, out):
    np.add.at(out, rows, signs[:, None] * src)
