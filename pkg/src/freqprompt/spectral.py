"""DFT/IDFT, low-frequency retention masks, and the Fourier filter block.

Power-of-two lengths go through a radix-2 FFT; everything else falls back
to direct summation, which is fine at desk scale.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, _make
from .errors import DimensionError, ParameterError

log = logging.getLogger(__name__)

IMAG_RESIDUE_WARN = 1e-6


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


def _fft_pow2(x, inverse=False):
    """Iterative radix-2 FFT over the last axis (length must be 2**m)."""
    n = x.shape[-1]
    out = np.array(x, dtype=np.complex128)
    if n == 1:
        return out
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    out = out[..., rev]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        view = out.reshape(*out.shape[:-1], n // size, size)
        even = view[..., :half].copy()
        odd = view[..., half:] * tw
        view[..., :half] = even + odd
        view[..., half:] = even - odd
        size *= 2
    return out


def _dft_direct(x, inverse=False):
    n = x.shape[-1]
    sign = 1.0 if inverse else -1.0
    p = np.arange(n)
    w = np.exp(sign * 2j * np.pi * np.outer(p, p) / n)
    return np.asarray(x, dtype=np.complex128) @ w


def _transform(x, inverse=False):
    if _is_pow2(x.shape[-1]):
        return _fft_pow2(x, inverse=inverse)
    return _dft_direct(x, inverse=inverse)


@dataclass
class ComplexSpectrum:
    """Real/imaginary parts of a DFT along the last axis."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise DimensionError("re/im shape mismatch")

    @property
    def length(self):
        return self.re.shape[-1]

    def to_complex(self):
        return self.re + 1j * self.im

    def magnitude(self):
        return np.abs(self.to_complex())


def dft_1d(signal):
    """Forward DFT of a real signal along the last axis."""
    arr = np.asarray(signal, dtype=np.float64)
    if arr.shape[-1] < 1 or arr.size == 0:
        raise DimensionError("dft_1d of empty signal")
    spec = _transform(arr, inverse=False)
    return ComplexSpectrum(re=spec.real.copy(), im=spec.imag.copy())


def idft_1d(spectrum, return_residue=False):
    """Inverse DFT; returns the real part of (1/d) * conjugate transform."""
    z = spectrum.to_complex()
    d = z.shape[-1]
    back = _transform(z, inverse=True) / d
    residue = float(np.abs(back.imag).max()) if back.size else 0.0
    real = back.real.copy()
    norm = float(np.abs(real).max())
    if residue > IMAG_RESIDUE_WARN * max(norm, 1.0):
        log.warning("idft_1d imaginary residue %.3e exceeds diagnostic bound", residue)
    if return_residue:
        return real, residue
    return real


def centered_frequency(q, d):
    """Signed frequency of bin q: q for q <= d/2, else q - d."""
    return q if q <= d // 2 else q - d


@dataclass
class SpectralFilterSpec:
    """Binary length-d retention mask keeping the k lowest |frequency| bins."""

    d: int
    k: int
    mask: np.ndarray = field(repr=False)

    def retained_bins(self):
        return np.nonzero(self.mask)[0]

    def retained_frequencies(self):
        return sorted(centered_frequency(int(q), self.d) for q in self.retained_bins())


def build_lowpass_mask(d, k):
    """Rank bins by |centered frequency|, positive-frequency-first on ties."""
    if d < 1:
        raise ParameterError(f"signal length must be >= 1, got {d}")
    if not 1 <= k <= d:
        raise ParameterError(f"retained-bin count k={k} outside [1, {d}]")
    order = sorted(
        range(d),
        key=lambda q: (abs(centered_frequency(q, d)), centered_frequency(q, d) < 0),
    )
    mask = np.zeros(d, dtype=np.float64)
    mask[order[:k]] = 1.0
    return SpectralFilterSpec(d=d, k=k, mask=mask)


def ffb_filter(x, mask):
    """Numeric low-pass projection: real(IDFT(mask * DFT(x))) per row."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mask.shape[-1]:
        raise DimensionError(f"row length {x.shape[-1]} != mask length {mask.shape[-1]}")
    spec = _transform(x, inverse=False) * mask
    d = mask.shape[-1]
    return (_transform(spec, inverse=True) / d).real


def ffb_apply(x, spec):
    """Tape-registered filter block.

    The map is real-linear; its adjoint is the same filter with the mask
    frequency-reversed (identical for conjugate-symmetric masks).
    """
    if not isinstance(x, Tensor):
        raise DimensionError("ffb_apply expects a tape Tensor")
    if x.ndim != 2 or x.shape[1] != spec.d:
        raise DimensionError(f"ffb_apply shape {x.shape} vs filter length {spec.d}")
    mask = spec.mask
    rev = mask[(spec.d - np.arange(spec.d)) % spec.d]
    data = ffb_filter(x.data, mask)
    return _make(x.tape, data, [(x, lambda g: ffb_filter(g, rev))], "ffb_apply")


# ---------------------------------------------------------------------------
# 2D demo path


def dft_lowpass_2d(image, keep_fraction):
    """Low-pass an image by row-then-column DFTs with per-axis masks.

    Returns (filtered image, log(1 + |spectrum|)) for display.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ParameterError(f"keep_fraction {keep_fraction} outside (0, 1]")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError("dft_lowpass_2d needs a non-empty matrix")
    p, t = img.shape
    kp = max(1, int(np.floor(keep_fraction * p + 0.5)))
    kt = max(1, int(np.floor(keep_fraction * t + 0.5)))
    mask_rows = build_lowpass_mask(t, min(kt, t)).mask
    mask_cols = build_lowpass_mask(p, min(kp, p)).mask

    spec = _transform(img.astype(np.complex128), inverse=False)  # along rows
    spec = _transform(spec.T, inverse=False).T  # along columns
    log_mag = np.log1p(np.abs(spec))
    spec = spec * mask_rows[None, :] * mask_cols[:, None]
    back = _transform(spec, inverse=True) / t
    back = _transform(back.T, inverse=True).T / p
    return back.real, log_mag


def write_pgm(path, image):
    """Write an array as 8-bit binary PGM (P5), min/max scaled."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError("PGM output needs a matrix")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    quant = np.clip((img - lo) / span * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(quant.tobytes())
