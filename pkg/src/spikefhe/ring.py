"""Negacyclic polynomial arithmetic over Z_Q[X]/(X^N + 1).

Polynomials are numpy int64 coefficient vectors in canonical form [0, Q).
The fast multiplier evaluates at the odd 2N-th roots of unity
omega^(4t+1), t < N/2 (omega = exp(i*pi/N)), which a single half-size
complex FFT reaches after folding the real coefficient vector as
z_j = a_j + i*a_{j+N/2}.  That point set is closed under conjugation
with no self-conjugate pairs, so N real coefficients round-trip through
N/2 complex values losslessly.

Exactness policy: a product is computed in one plane only when the
worst-case convolution magnitude N*max|a|*max|b| (centered operands)
stays below 2^44, far inside float64's exact-integer range even after
FFT rounding growth.  Larger operands are split into balanced base-2^14
digit planes and recombined in integer arithmetic, so the multiplier is
exact for every modulus used in this package.  The schoolbook oracle
(`poly_mul_schoolbook`) is the independent reference the fast path is
audited against.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Single-plane FFT safety bound; see module docstring.
_FFT_EXACT_BOUND = 1 << 44
_SPLIT_BASE_BITS = 14

_AUDIT = os.environ.get("SPIKEFHE_RING_AUDIT", "") == "1"


@dataclass(frozen=True)
class RingParams:
    """Degree and modulus of the quotient ring Z_Q[X]/(X^N + 1)."""

    N: int
    Q: int

    def __post_init__(self):
        if self.N < 2 or (self.N & (self.N - 1)) != 0:
            raise ValueError(f"ring degree must be a power of two >= 2, got {self.N}")
        if self.Q < 2:
            raise ValueError(f"ring modulus must be >= 2, got {self.Q}")


def center(x, Q):
    """Map canonical residues [0, Q) to centered representatives.

    The centered set is {-floor(Q/2), ..., ceil(Q/2) - 1} so that
    |centered| <= Q/2.
    """
    x = np.asarray(x, dtype=np.int64)
    half = Q // 2
    return ((x + half) % Q) - half


def poly_zero(params: RingParams) -> np.ndarray:
    return np.zeros(params.N, dtype=np.int64)


def poly_add(a, b, Q):
    return np.mod(np.asarray(a, np.int64) + np.asarray(b, np.int64), Q)


def poly_sub(a, b, Q):
    return np.mod(np.asarray(a, np.int64) - np.asarray(b, np.int64), Q)


def poly_neg(a, Q):
    return np.mod(-np.asarray(a, np.int64), Q)


def monomial_mul(a, k, Q):
    """Multiply by the monomial X^k.

    Exponents act as the group Z_2N: X^N = -1, X^2N = 1.  Works on a
    single polynomial or any batch with the coefficient axis last.
    """
    a = np.asarray(a, dtype=np.int64)
    N = a.shape[-1]
    k = int(k) % (2 * N)
    src = (np.arange(N) - k) % (2 * N)
    sign = np.where(src >= N, -1, 1)
    out = a[..., src % N] * sign
    return np.mod(out, Q)


def monomial_mul_batch(a, ks, Q):
    """X^{ks[i]} * a[i] for a batch of polynomials and exponents."""
    a = np.asarray(a, dtype=np.int64)
    N = a.shape[-1]
    ks = np.asarray(ks, dtype=np.int64).reshape(-1, *([1] * (a.ndim - 1))) % (2 * N)
    idx = (np.arange(N) - ks) % (2 * N)
    sign = np.where(idx >= N, -1, 1)
    gathered = np.take_along_axis(a, idx % N, axis=-1)
    return np.mod(gathered * sign, Q)


@lru_cache(maxsize=None)
def _twist(N: int) -> np.ndarray:
    j = np.arange(N // 2)
    return np.exp(1j * np.pi * j / N)


class NegacyclicFFT:
    """Half-size complex FFT evaluating Z[X]/(X^N+1) at omega^(4t+1)."""

    def __init__(self, N: int):
        if N < 2 or (N & (N - 1)) != 0:
            raise ValueError(f"N must be a power of two >= 2, got {N}")
        self.N = N
        self.tw = _twist(N)
        self.tw_conj = np.conj(self.tw)

    def forward(self, a) -> np.ndarray:
        """Transform int coefficient vectors (coefficient axis last)."""
        a = np.asarray(a, dtype=np.float64)
        n2 = self.N // 2
        z = a[..., :n2] + 1j * a[..., n2:]
        return np.fft.fft(z * self.tw, axis=-1)

    def inverse(self, F, dtype=np.int64) -> np.ndarray:
        """Inverse transform, rounding to the nearest integer."""
        z = np.fft.ifft(F, axis=-1) * self.tw_conj
        return np.concatenate(
            [np.rint(z.real).astype(dtype), np.rint(z.imag).astype(dtype)],
            axis=-1,
        )


@lru_cache(maxsize=None)
def get_fft(N: int) -> NegacyclicFFT:
    return NegacyclicFFT(N)


def _balanced_digits(x, n_digits, base_bits):
    """Balanced base-2^base_bits digits, lowest first; recomposes exactly.

    Keeps the input's integer dtype so 32-bit hot paths stay 32-bit.
    """
    base = 1 << base_bits
    half = base >> 1
    digits = []
    rem = x.copy()
    for _ in range(n_digits):
        d = ((rem + half) & (base - 1)) - half
        digits.append(d)
        rem = (rem - d) >> base_bits
    return digits, rem


def _digit_count(max_abs, base_bits):
    n = 1
    while (1 << (base_bits * n)) // 2 <= max_abs:
        n += 1
    return n


def balanced_digits(x, n_digits, base_bits):
    """Balanced base-2^base_bits digits of centered values, stacked.

    Returns shape (n_digits,) + x.shape, lowest digit first, every digit
    in [-base/2, base/2), in the input's integer dtype.  Any residue
    beyond the n_digits window is dropped; when base^n_digits is a
    multiple of the working modulus the recomposition sum(d_k * base^k)
    is still exact mod that modulus, which is the gadget-decomposition
    contract.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        x = x.astype(np.int64)
    digits, _ = _balanced_digits(x, n_digits, base_bits)
    return np.stack(digits, axis=0)


def poly_mul(a, b, Q, fft: NegacyclicFFT | None = None):
    """Exact negacyclic product of two polynomials mod Q."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    N = a.shape[-1]
    if b.shape[-1] != N:
        raise ValueError("degree mismatch")
    if fft is None:
        fft = get_fft(N)

    ac = center(a, Q)
    bc = center(b, Q)
    ma = int(np.max(np.abs(ac))) if ac.size else 0
    mb = int(np.max(np.abs(bc))) if bc.size else 0

    if N * max(ma, 1) * max(mb, 1) <= _FFT_EXACT_BOUND:
        out = fft.inverse(fft.forward(ac) * fft.forward(bc))
        result = np.mod(out, Q)
    else:
        # Split both operands into balanced digit planes so every plane
        # product stays within the exact-FFT bound, then recombine with
        # integer shifts.  Plane k collects all (i, j) with i + j = k.
        ka = _digit_count(ma, _SPLIT_BASE_BITS)
        kb = _digit_count(mb, _SPLIT_BASE_BITS)
        da, ra = _balanced_digits(ac, ka, _SPLIT_BASE_BITS)
        db, rb = _balanced_digits(bc, kb, _SPLIT_BASE_BITS)
        if np.any(ra) or np.any(rb):
            raise AssertionError("digit split failed to cover operand range")
        Fa = [fft.forward(d) for d in da]
        Fb = [fft.forward(d) for d in db]
        planes = [None] * (ka + kb - 1)
        for i in range(ka):
            for j in range(kb):
                prod = Fa[i] * Fb[j]
                k = i + j
                planes[k] = prod if planes[k] is None else planes[k] + prod
        result = np.zeros_like(ac)
        for k, plane in enumerate(planes):
            part = np.mod(fft.inverse(plane), Q)
            weight = pow(2, _SPLIT_BASE_BITS * k, Q)
            result = np.mod(result + part * weight, Q)

    if _AUDIT:
        ref = poly_mul_schoolbook(a, b, Q)
        if not np.array_equal(result, ref):
            raise AssertionError("FFT product disagrees with schoolbook oracle")
    return result


def poly_mul_schoolbook(a, b, Q):
    """Quadratic-time reference product, exact integer arithmetic.

    Uses int64 convolution when the worst case provably fits (the
    partial sums are bounded by N*(Q/2)^2), otherwise falls back to
    Python big integers.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    N = len(a)
    ac = center(a, Q)
    bc = center(b, Q)
    if N * (Q // 2 + 1) ** 2 < 2**62:
        full = np.convolve(ac, bc)
        out = full[:N].copy()
        out[: N - 1] -= full[N:]
        return np.mod(out, Q)
    acc = [0] * N
    for i in range(N):
        ai = int(ac[i])
        if ai == 0:
            continue
        for j in range(N):
            k = i + j
            if k < N:
                acc[k] += ai * int(bc[j])
            else:
                acc[k - N] -= ai * int(bc[j])
    return np.array([v % Q for v in acc], dtype=np.int64)
