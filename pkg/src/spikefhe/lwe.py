"""LWE, RLWE and RGSW primitives with explicit noise budgets.

Scalar messages live in Z_p and are encoded into Z_q as ``Delta*m`` with
``Delta = q/p``; decoding rounds the phase to the nearest multiple of
Delta, so a ciphertext decodes correctly exactly while its phase error
stays inside half a slot, ``|e| < Delta/2``.  Keeping the slot center at
``Delta*m`` (rather than offsetting by ``Delta/2`` and flooring) makes
every linear operation offset-free: sums of encodings are encodings of
sums.  Decoded messages use centered representatives in ``[-p/2, p/2)``.

Every LWE ciphertext carries ``budget``, an upper bound on the standard
deviation of its phase error in units of q.  Linear operations propagate
the bound conservatively: scaling by ``w`` multiplies it by ``|w|`` and
sums accumulate it additively, which dominates the true deviation for
any correlation structure.  ``check_budget`` refuses (raises
``NoiseBudgetError``) once the bound crosses the half-slot limit; the
caller is then expected to surface the refusal rather than decode
garbage.

Ring-level objects (RLWE, RGSW) carry *raw* messages: callers scale by
whatever encoding they need before encrypting.  The external product
implements ``phase(out) = sigma * phase(ct) + <digits, row_noise>`` for
an RGSW encryption of ``sigma``, which is the CMux workhorse the blind
rotation is built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamProfile
from .ring import balanced_digits, center, get_fft, poly_mul


class NoiseBudgetError(RuntimeError):
    """Predicted phase error no longer fits inside an encoding slot."""


# -- keys ---------------------------------------------------------------


@dataclass(frozen=True)
class LweKey:
    """Binary LWE secret with its ciphertext modulus."""

    s: np.ndarray
    q: int

    @property
    def dim(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class RingKey:
    """Binary ring secret z in Z_Q[X]/(X^N + 1)."""

    z: np.ndarray
    N: int
    Q: int

    def extracted_lwe(self) -> LweKey:
        """View the ring secret as a dimension-N LWE key mod Q.

        Sample extraction produces ciphertexts under exactly this key.
        """
        return LweKey(s=self.z.copy(), q=self.Q)


def lwe_keygen(profile: ParamProfile, rng: np.random.Generator) -> LweKey:
    return LweKey(s=rng.integers(0, 2, profile.n, dtype=np.int64), q=profile.q)


def ring_keygen(profile: ParamProfile, rng: np.random.Generator) -> RingKey:
    return RingKey(
        z=rng.integers(0, 2, profile.N, dtype=np.int64), N=profile.N, Q=profile.Q
    )


def _noise(sigma: float, size, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0.0:
        return np.zeros(size, dtype=np.int64)
    return np.rint(rng.normal(0.0, sigma, size)).astype(np.int64)


# -- scalar LWE ---------------------------------------------------------


@dataclass
class LweCiphertext:
    """(a, b) with b = <a, s> + e + encode(m), everything mod q."""

    a: np.ndarray
    b: int
    q: int
    budget: float


def lwe_encode(m: int, q: int, p: int) -> int:
    delta = q // p
    return (delta * (int(m) % p)) % q


def lwe_decode(x: int, q: int, p: int) -> int:
    delta = q // p
    return int(center(((int(x) % q) + delta // 2) // delta, p))


def lwe_encrypt(
    key: LweKey,
    m: int,
    p: int,
    sigma: float,
    rng: np.random.Generator,
) -> LweCiphertext:
    a = rng.integers(0, key.q, key.dim, dtype=np.int64)
    e = int(_noise(sigma, (), rng))
    b = (int(a @ key.s) + e + lwe_encode(m, key.q, p)) % key.q
    return LweCiphertext(a=a, b=b, q=key.q, budget=sigma)


def lwe_phase(key: LweKey, ct: LweCiphertext) -> int:
    return (ct.b - int(ct.a @ key.s)) % ct.q


def lwe_decrypt(key: LweKey, ct: LweCiphertext, p: int) -> int:
    return lwe_decode(lwe_phase(key, ct), ct.q, p)


def measure_noise(key: LweKey, ct: LweCiphertext, p: int, expected: int | None = None) -> int:
    """Signed distance from the phase to the nearest-or-expected slot center.

    Debug-side only: requires the secret key.  With ``expected`` the
    distance is taken to that message's slot center, so overflows show
    their true magnitude instead of wrapping to a neighbour.
    """
    ph = lwe_phase(key, ct)
    m = lwe_decode(ph, ct.q, p) if expected is None else int(expected)
    return int(center(ph - lwe_encode(m, ct.q, p), ct.q))


def check_budget(ct: LweCiphertext, p: int) -> None:
    limit = ct.q / (2 * p)
    if ct.budget > limit:
        raise NoiseBudgetError(
            f"noise budget {ct.budget:.2f} exceeds the half-slot limit "
            f"{limit:.2f} (q={ct.q}, p={p}); refusing to continue"
        )


def lwe_add(x: LweCiphertext, y: LweCiphertext) -> LweCiphertext:
    _same_modulus(x, y)
    return LweCiphertext(
        a=(x.a + y.a) % x.q, b=(x.b + y.b) % x.q, q=x.q, budget=x.budget + y.budget
    )


def lwe_sub(x: LweCiphertext, y: LweCiphertext) -> LweCiphertext:
    _same_modulus(x, y)
    return LweCiphertext(
        a=(x.a - y.a) % x.q, b=(x.b - y.b) % x.q, q=x.q, budget=x.budget + y.budget
    )


def lwe_neg(x: LweCiphertext) -> LweCiphertext:
    return LweCiphertext(a=(-x.a) % x.q, b=(-x.b) % x.q, q=x.q, budget=x.budget)


def lwe_scalar_mul(x: LweCiphertext, w: int) -> LweCiphertext:
    w = int(w)
    return LweCiphertext(
        a=(x.a * w) % x.q, b=(x.b * w) % x.q, q=x.q, budget=abs(w) * x.budget
    )


def lwe_add_plain(x: LweCiphertext, m: int, p: int) -> LweCiphertext:
    """Add the plaintext message m (shifts the slot, never the noise)."""
    delta = x.q // p
    return LweCiphertext(a=x.a, b=(x.b + delta * int(m)) % x.q, q=x.q, budget=x.budget)


def lwe_multisum(weights, cts: list[LweCiphertext], p: int) -> LweCiphertext:
    """Integer-weighted sum of ciphertexts, with a budget refusal check.

    This is the linear half of an encrypted neuron: the weights are the
    discretized synapse values and the ciphertexts the input spikes.
    """
    if not cts:
        raise ValueError("empty multisum")
    q = cts[0].q
    w = np.asarray(weights, dtype=np.int64)
    if len(w) != len(cts):
        raise ValueError(f"{len(w)} weights for {len(cts)} ciphertexts")
    a_stack = np.stack([c.a for c in cts])
    a = np.mod(w @ a_stack, q)
    b = int(np.mod(sum(int(wi) * c.b for wi, c in zip(w, cts)), q))
    budget = float(sum(abs(int(wi)) * c.budget for wi, c in zip(w, cts)))
    out = LweCiphertext(a=a, b=b, q=q, budget=budget)
    check_budget(out, p)
    return out


def _same_modulus(x: LweCiphertext, y: LweCiphertext) -> None:
    if x.q != y.q:
        raise ValueError(f"modulus mismatch: {x.q} vs {y.q}")


# -- RLWE ---------------------------------------------------------------


@dataclass
class RlweCiphertext:
    """(a, b) with b = a*z + e + m over Z_Q[X]/(X^N + 1); m is raw."""

    a: np.ndarray
    b: np.ndarray
    Q: int


def rlwe_encrypt(
    key: RingKey, message: np.ndarray, sigma: float, rng: np.random.Generator
) -> RlweCiphertext:
    a = rng.integers(0, key.Q, key.N, dtype=np.int64)
    e = _noise(sigma, key.N, rng)
    b = np.mod(poly_mul(a, key.z, key.Q) + e + np.asarray(message, np.int64), key.Q)
    return RlweCiphertext(a=a, b=b, Q=key.Q)


def rlwe_trivial(message: np.ndarray, Q: int) -> RlweCiphertext:
    message = np.mod(np.asarray(message, np.int64), Q)
    return RlweCiphertext(a=np.zeros_like(message), b=message, Q=Q)


def rlwe_phase(key: RingKey, ct: RlweCiphertext) -> np.ndarray:
    """Raw m + e in canonical form [0, Q)."""
    return np.mod(ct.b - poly_mul(ct.a, key.z, ct.Q), ct.Q)


# -- RGSW and the external product --------------------------------------


@dataclass
class RgswCiphertext:
    """Gadget matrix of RLWE rows encrypting sigma * B^j in each slot.

    rows has shape (2*ell, 2, N): rows j < ell carry sigma*B^j in the
    a-component, rows ell+j carry it in the b-component.
    """

    rows: np.ndarray
    Q: int
    bg_bits: int

    @property
    def ell(self) -> int:
        return self.rows.shape[0] // 2

    def to_fft(self) -> "RgswFFT":
        N = self.rows.shape[-1]
        fft = get_fft(N)
        return RgswFFT(
            rows_fft=fft.forward(center(self.rows, self.Q)),
            Q=self.Q,
            bg_bits=self.bg_bits,
            ell=self.ell,
            N=N,
        )


@dataclass
class RgswFFT:
    """Frequency-domain RGSW rows, ready for repeated external products."""

    rows_fft: np.ndarray
    Q: int
    bg_bits: int
    ell: int
    N: int


def rgsw_encrypt(
    key: RingKey, message: np.ndarray, ell: int, bg_bits: int,
    sigma: float, rng: np.random.Generator,
) -> RgswCiphertext:
    message = np.mod(np.asarray(message, np.int64), key.Q)
    rows = np.empty((2 * ell, 2, key.N), dtype=np.int64)
    for j in range(ell):
        scale = pow(2, bg_bits * j, key.Q)
        shifted = (message * scale) % key.Q
        top = rlwe_encrypt(key, np.zeros(key.N, np.int64), sigma, rng)
        rows[j, 0] = (top.a + shifted) % key.Q
        rows[j, 1] = top.b
        bot = rlwe_encrypt(key, np.zeros(key.N, np.int64), sigma, rng)
        rows[ell + j, 0] = bot.a
        rows[ell + j, 1] = (bot.b + shifted) % key.Q
    return RgswCiphertext(rows=rows, Q=key.Q, bg_bits=bg_bits)


def gadget_digits(a: np.ndarray, b: np.ndarray, Q: int, ell: int, bg_bits: int) -> np.ndarray:
    """Gadget digits of an RLWE pair, shaped for the row contraction.

    Accepts single polynomials (N,) or batches (..., N); returns digits
    with a 2*ell axis right before the coefficient axis.
    """
    da = balanced_digits(center(a, Q), ell, bg_bits)
    db = balanced_digits(center(b, Q), ell, bg_bits)
    d = np.concatenate([da, db], axis=0)
    return np.moveaxis(d, 0, -2)


def external_product(ct: RlweCiphertext, W: RgswFFT) -> RlweCiphertext:
    """RLWE x RGSW -> RLWE with phase(out) = sigma * phase(ct) + noise."""
    fft = get_fft(W.N)
    d_fft = fft.forward(gadget_digits(ct.a, ct.b, W.Q, W.ell, W.bg_bits))
    prod = np.einsum("df,dcf->cf", d_fft, W.rows_fft)
    out = np.mod(fft.inverse(prod), W.Q)
    return RlweCiphertext(a=out[0], b=out[1], Q=W.Q)


def external_product_batch(acc_a: np.ndarray, acc_b: np.ndarray, W: RgswFFT):
    """Batched external product on raw (B, N) accumulator components."""
    fft = get_fft(W.N)
    d_fft = fft.forward(gadget_digits(acc_a, acc_b, W.Q, W.ell, W.bg_bits))
    prod = np.einsum("bdf,dcf->bcf", d_fft, W.rows_fft)
    out = np.mod(fft.inverse(prod), W.Q)
    return out[:, 0], out[:, 1]


# -- batched LWE ---------------------------------------------------------


@dataclass
class LweBatch:
    """Struct-of-arrays view of many LWE ciphertexts under one key.

    a has shape (M, dim), b shape (M,).  A single budget covers every
    row: batches are built from rows produced by the same operation, so
    a per-row bound would repeat one number M times.
    """

    a: np.ndarray
    b: np.ndarray
    q: int
    budget: float

    def __len__(self) -> int:
        return len(self.b)

    def row(self, i: int) -> LweCiphertext:
        return LweCiphertext(a=self.a[i].copy(), b=int(self.b[i]), q=self.q, budget=self.budget)


def batch_from_list(cts: list[LweCiphertext]) -> LweBatch:
    if not cts:
        raise ValueError("empty batch")
    q = cts[0].q
    if any(c.q != q for c in cts):
        raise ValueError("mixed moduli in batch")
    return LweBatch(
        a=np.stack([c.a for c in cts]),
        b=np.array([c.b for c in cts], dtype=np.int64),
        q=q,
        budget=max(c.budget for c in cts),
    )


def batch_check_budget(batch: LweBatch, p: int) -> None:
    limit = batch.q / (2 * p)
    if batch.budget > limit:
        raise NoiseBudgetError(
            f"noise budget {batch.budget:.2f} exceeds the half-slot limit "
            f"{limit:.2f} (q={batch.q}, p={p}); refusing to continue"
        )


def batch_concat(batches: list[LweBatch]) -> LweBatch:
    """Stack batches row-wise; the budget is the worst of the parts."""
    if not batches:
        raise ValueError("nothing to concatenate")
    q = batches[0].q
    if any(b.q != q for b in batches):
        raise ValueError("modulus mismatch across batches")
    return LweBatch(
        a=np.concatenate([b.a for b in batches]),
        b=np.concatenate([b.b for b in batches]),
        q=q,
        budget=max(b.budget for b in batches),
    )


def batch_encrypt(
    key: LweKey,
    messages,
    p: int,
    sigma: float,
    rng: np.random.Generator,
) -> LweBatch:
    """Encrypt a vector of messages as one batch under a shared key."""
    m = np.asarray(messages, dtype=np.int64).ravel()
    delta = key.q // p
    a = rng.integers(0, key.q, (m.size, key.dim), dtype=np.int64)
    b = np.mod(a @ key.s + _noise(sigma, m.size, rng) + delta * np.mod(m, p), key.q)
    return LweBatch(a=a, b=b, q=key.q, budget=sigma)


def batch_phase(key: LweKey, batch: LweBatch) -> np.ndarray:
    return np.mod(batch.b - batch.a @ key.s, batch.q)


def batch_decrypt(key: LweKey, batch: LweBatch, p: int) -> np.ndarray:
    delta = batch.q // p
    slots = np.mod((batch_phase(key, batch) + delta // 2) // delta, p)
    return center(slots, p)
