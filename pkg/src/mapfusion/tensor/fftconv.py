"""Several "same" convolutions of one input, evaluated in the Fourier domain.

The OwA operation layer applies 1x1, 3x3, 5x5 and 7x7 kernels to the same
feature map. Transforming the input once and contracting channels per
frequency bin is several times cheaper than four im2col passes at these
sizes, and the result equals stacking :func:`~mapfusion.tensor.ops.conv2d`
outputs up to floating-point rounding.

Layout conventions
------------------
* The input sits at the top-left of a zero-padded FFT grid ``(sh, sw)`` with
  ``sh >= h + P`` and ``sw >= w + P``, ``P`` being the largest kernel
  half-width. That is exactly enough to keep circular wrap-around out of the
  forward correlation, its adjoint and the kernel-gradient correlation.
* Kernels are moved into a common "lag" frame ``L[du + P, dv + P, cin, cout]``
  holding the convolution filter ``g[du, dv] = K[p - du, p - dv]``.
* Spectra are stored frequency-major, ``(bins, rows, cols)``, so every
  per-bin channel contraction is one batched GEMM.
"""
from __future__ import annotations

import os
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from ..errors import ContractError
from .ops import check_rank4

# pocketfft splits independent 1-D transforms across threads: results are
# identical for any worker count
WORKERS = os.cpu_count() or 1

_COMPLEX = {np.dtype(np.float32): np.complex64, np.dtype(np.float64): np.complex128}


@lru_cache(maxsize=64)
def _lag_phases(half: int, size: int, nfreq: int, dtype, sign: int) -> np.ndarray:
    # (nfreq, 2*half + 1): exp(sign * 2πi f d / size) for lags d = -half..half
    f = np.arange(nfreq)[:, None]
    d = np.arange(-half, half + 1)[None, :]
    out = np.exp(sign * 2j * np.pi * f * d / size).astype(dtype)
    out.setflags(write=False)
    return out


def fft_grid(h: int, w: int, max_k: int) -> tuple[int, int]:
    p = (max_k - 1) // 2
    return sfft.next_fast_len(h + p, real=True), sfft.next_fast_len(w + p, real=True)


def _validate(x, kernels, biases):
    check_rank4(x)
    if not kernels:
        raise ContractError("conv2d_multi needs at least one kernel")
    cin = x.shape[1]
    for i, k in enumerate(kernels):
        if k.ndim != 4 or k.shape[2] != k.shape[3] or k.shape[2] % 2 == 0:
            raise ContractError(f"kernel {i} must be (cout, cin, k, k) with odd k, got {k.shape}")
        if k.shape[1] != cin:
            raise ContractError(f"kernel {i} cin {k.shape[1]} != input channels {cin}")
    if biases is not None:
        if len(biases) != len(kernels):
            raise ContractError(f"{len(biases)} biases for {len(kernels)} kernels")
        for i, (k, b) in enumerate(zip(kernels, biases)):
            if np.shape(b) != (k.shape[0],):
                raise ContractError(f"bias {i} shape {np.shape(b)} != ({k.shape[0]},)")


def _work_dtype(x):
    return np.dtype(np.float64 if x.dtype == np.float64 else np.float32)


def lag_frame(kernels: Sequence[np.ndarray], dtype) -> np.ndarray:
    """Embed kernels into a shared ``(2P+1, 2P+1, cin, sum cout)`` filter frame."""
    half = max((k.shape[-1] - 1) // 2 for k in kernels)
    cin = kernels[0].shape[1]
    frame = np.zeros((2 * half + 1, 2 * half + 1, cin, sum(k.shape[0] for k in kernels)), dtype)
    start = 0
    for k in kernels:
        p = (k.shape[-1] - 1) // 2
        cout = k.shape[0]
        frame[half - p:half + p + 1, half - p:half + p + 1, :, start:start + cout] = \
            k[:, :, ::-1, ::-1].transpose(2, 3, 1, 0)
        start += cout
    return frame


def kernel_spectra(kernels: Sequence[np.ndarray], grid, dtype) -> np.ndarray:
    """Half-spectrum filters, shape ``(sh * (sw // 2 + 1), cin, sum cout)``."""
    sh, sw = grid
    cdt = _COMPLEX[np.dtype(dtype)]
    frame = lag_frame(kernels, dtype)
    span, _, cin, cout = frame.shape
    half = (span - 1) // 2
    eu = _lag_phases(half, sh, sh, cdt, -1)                       # (sh, span)
    ev = _lag_phases(half, sw, sw // 2 + 1, cdt, -1)              # (fv, span)
    t = ev @ frame.reshape(span, span, cin * cout)                # (span_u, fv, cin*cout)
    g = eu @ t.reshape(span, -1)                                  # (sh, fv*cin*cout)
    return g.reshape(sh * (sw // 2 + 1), cin, cout)


def _transpose2d(a: np.ndarray, conj: bool = False, block: int = 128) -> np.ndarray:
    # tiled copy of a.T (optionally conjugated); a plain strided copy
    # thrashes the cache at these sizes
    r, c = a.shape
    out = np.empty((c, r), a.dtype)

    def put(src, dst):
        if conj:
            np.conjugate(src, out=dst)
        else:
            dst[...] = src

    if r >= c:
        for i in range(0, r, block):
            put(a[i:i + block].T, out[:, i:i + block])
    else:
        for j in range(0, c, block):
            put(a[:, j:j + block].T, out[j:j + block])
    return out


def _to_bins(spec: np.ndarray, conj: bool = False) -> np.ndarray:
    # (n, c, sh, fv) -> contiguous (sh*fv, n, c)
    n, c = spec.shape[:2]
    return _transpose2d(spec.reshape(n * c, -1), conj).reshape(-1, n, c)


def _inverse_bins(bins: np.ndarray, fshape, grid, h: int, w: int, dtype,
                  conj: bool = False) -> np.ndarray:
    # (sh*fv, n, c) spectra -> (n, c, h, w) real maps
    # transposing the complex bins first keeps the inverse on contiguous axes,
    # which beats a strided irfft2 followed by a real-valued transpose
    nf, n, c = bins.shape
    spec = _transpose2d(bins.reshape(nf, n * c), conj).reshape(n, c, *fshape)
    full = sfft.irfft2(spec, s=grid, workers=WORKERS)
    return np.ascontiguousarray(full[..., :h, :w], dtype=dtype)


def conv2d_multi(x: np.ndarray, kernels: Sequence[np.ndarray],
                 biases: Sequence[np.ndarray] | None = None,
                 cache: dict | None = None) -> np.ndarray:
    """Apply every kernel to ``x``; outputs are concatenated along channels.

    If ``cache`` is given it receives the input and kernel spectra, which
    :func:`conv2d_multi_backward` reuses.
    """
    _validate(x, kernels, biases)
    dtype = _work_dtype(x)
    x = x.astype(dtype, copy=False)
    n, c, h, w = x.shape
    grid = fft_grid(h, w, max(k.shape[-1] for k in kernels))
    xs = sfft.rfft2(x, s=grid, workers=WORKERS)
    fshape = xs.shape[2:]
    xb = _to_bins(xs)                                             # (nf, n, cin)
    gb = kernel_spectra(kernels, grid, dtype)                     # (nf, cin, cout)
    out = _inverse_bins(xb @ gb, fshape, grid, h, w, dtype)
    if biases is not None:
        out += np.concatenate(biases).astype(dtype)[None, :, None, None]
    if cache is not None:
        cache.update(grid=grid, xb=xb, gb=gb)
    return out


def conv2d_multi_backward(x: np.ndarray, kernels: Sequence[np.ndarray], grad_out: np.ndarray,
                          cache: dict | None = None):
    """Return ``(grad_input, [grad_kernel...], [grad_bias...])``."""
    _validate(x, kernels, None)
    n, c, h, w = x.shape
    couts = [k.shape[0] for k in kernels]
    o = sum(couts)
    if grad_out.shape != (n, o, h, w):
        raise ContractError(f"grad_out shape {grad_out.shape} != forward output {(n, o, h, w)}")
    dtype = _work_dtype(x)
    if not cache:
        cache = {}
        conv2d_multi(x, kernels, None, cache=cache)
    grid, xb, gb = cache["grid"], cache["xb"], cache["gb"]
    sh, sw = grid
    g = grad_out.astype(dtype, copy=False)
    dys = sfft.rfft2(g, s=grid, workers=WORKERS)
    fshape = dys.shape[2:]
    dybc = _to_bins(dys, conj=True)                               # conj, (nf, n, cout)

    # adjoint of the correlation: multiply by the conjugate filter,
    # i.e. conj(conj(dy) @ g^T) with both conjugations folded into copies
    dxbc = dybc @ gb.transpose(0, 2, 1)                           # conj, (nf, n, cin)
    grad_input = _inverse_bins(dxbc, fshape, grid, h, w, dtype, conj=True)

    # filter gradient: cross-correlation of grad_out with the input, only at small lags
    dgb = np.conj(xb.transpose(0, 2, 1) @ dybc)                  # (nf, cin, cout)
    half = max((k.shape[-1] - 1) // 2 for k in kernels)
    span = 2 * half + 1
    iu = _lag_phases(half, sh, sh, dgb.dtype, +1).T / sh          # (span, sh)
    rows = iu @ dgb.reshape(sh, -1)                               # (span, fv*cin*o)
    fv = fshape[1]
    rows = rows.reshape(span, fv, c * o)
    # half-spectrum inverse evaluated only at the needed lags; interior bins
    # stand for a conjugate pair, DC and (even sw) Nyquist for themselves
    mult = np.full(fv, 2.0)
    mult[0] = 1.0
    if sw % 2 == 0:
        mult[-1] = 1.0
    iv = _lag_phases(half, sw, fv, dgb.dtype, +1).T * (mult / sw).astype(dtype)  # (span, fv)
    lags = (iv @ rows).real.reshape(span, span, c, o)            # (span, span, cin, o)

    grad_kernels, grad_biases = [], []
    start = 0
    for k, cout in zip(kernels, couts):
        p = (k.shape[-1] - 1) // 2
        block = lags[half - p:half + p + 1, half - p:half + p + 1, :, start:start + cout]
        grad_kernels.append(np.ascontiguousarray(block[::-1, ::-1].transpose(3, 2, 0, 1), dtype=dtype))
        grad_biases.append(g[:, start:start + cout].sum(axis=(0, 2, 3)))
        start += cout
    return grad_input, grad_kernels, grad_biases
