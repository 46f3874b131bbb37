"""Programmable bootstrapping: blind rotation, extraction, key switching.

One bootstrap refreshes an LWE ciphertext while applying a lookup table
to its message: the ciphertext's phase drives a rotation of a test
polynomial inside an RLWE accumulator, the rotated constant coefficient
is extracted as an LWE sample under the ring key, and a key switch plus
(when Q > q) a modulus switch bring it back under the original key.

The quotient by X^N + 1 forces every table to be negacyclic,
``g(m + p/2) = -g(m)``: rotating halfway around the circle lands on the
negated coefficient.  ``ProgramFunction`` validates that constraint up
front so an impossible table fails loudly at construction, not as
silently wrong ciphertexts.

Everything here is batched: blind rotation processes a whole (M, n)
block of ciphertexts in lockstep against the shared bootstrapping key,
which turns the per-step CMux into one FFT contraction over the batch.
Each table evaluation is its own rotation; evaluating several tables on
one ciphertext costs that many bootstraps, and the counter tallies them
per pipeline phase.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .lwe import (
    LweBatch,
    LweCiphertext,
    LweKey,
    RingKey,
    batch_check_budget,
    batch_from_list,
    gadget_digits,
    rgsw_encrypt,
    _noise,
)
from .params import ParamProfile
from .ring import balanced_digits, center, get_fft, monomial_mul_batch


# -- programmable functions ----------------------------------------------


@dataclass(frozen=True)
class ProgramFunction:
    """A p-entry lookup table a bootstrap can evaluate.

    ``table[m]`` is the output (mod p) for canonical message m.  The
    table must satisfy the negacyclic constraint; see module docstring.
    """

    name: str
    p: int
    table: np.ndarray

    @classmethod
    def from_table(cls, name: str, p: int, table) -> "ProgramFunction":
        table = np.mod(np.asarray(table, dtype=np.int64), p)
        if table.shape != (p,):
            raise ValueError(f"table must have exactly p={p} entries")
        mirrored = np.roll(table, -(p // 2))
        if not np.array_equal(mirrored, (-table) % p):
            bad = int(np.nonzero(mirrored != (-table) % p)[0][0])
            raise ValueError(
                f"table {name!r} is not negacyclic: "
                f"g({bad} + p/2) != -g({bad}) mod p"
            )
        return cls(name=name, p=p, table=table)

    @classmethod
    def from_centered(cls, name: str, p: int, func) -> "ProgramFunction":
        """Build from a function of centered messages in [-p/2, p/2)."""
        values = [func(int(center(m, p))) for m in range(p)]
        return cls.from_table(name, p, values)

    def apply(self, m: int) -> int:
        """Plaintext reference evaluation on a centered or canonical message."""
        return int(center(self.table[int(m) % self.p], self.p))

    def test_poly(self, profile: ParamProfile) -> np.ndarray:
        """Test polynomial whose rotation-by-phase evaluates the table.

        Coefficient j covers the phases that decode to message
        round(j / w) with w = 2N/p slots per message, scaled so the
        extracted constant coefficient is already an encoding mod Q.
        """
        if profile.p != self.p:
            raise ValueError(f"table is for p={self.p}, profile has p={profile.p}")
        N, Q, p = profile.N, profile.Q, profile.p
        w = 2 * N // p
        j = np.arange(N)
        slots = ((j + w // 2) // w) % p
        delta_q = Q // p
        return (self.table[slots] * delta_q) % Q


def sign_program(p: int) -> ProgramFunction:
    """+1 for centered m >= 0, -1 below; the fire half of a neuron."""
    return ProgramFunction.from_centered("sign", p, lambda m: 1 if m >= 0 else -1)


def reset_program(p: int, vth: int) -> ProgramFunction:
    """Membrane after fire-and-reset, as a function of the membrane m.

    Four cases over centered m:
      vth <= m          -> 0             (fired, reset to 0)
      0 <= m < vth      -> m             (subthreshold, keep)
      vth - p/2 <= m < 0 -> 0            (negative membrane clamps to 0)
      m < vth - p/2     -> -(m + p/2)    (negacyclic mirror of the keep arc)
    The table matches the true reset on [vth - p/2, p/2).  A real
    membrane satisfies |m| <= alpha with alpha <= p/2 - vth, so the
    mirror arc below vth - p/2 is never addressed.
    """
    if not 0 < vth < p // 2:
        raise ValueError(f"threshold {vth} outside (0, p/2)")

    def table(m: int) -> int:
        if m >= vth:
            return 0
        if m >= 0:
            return m
        if m >= vth - p // 2:
            return 0
        return -(m + p // 2)

    return ProgramFunction.from_centered(f"reset{vth}", p, table)


# -- bootstrapping keys ---------------------------------------------------


@dataclass
class BootstrapCounter:
    """Tally of bootstraps performed, split by pipeline phase."""

    bootstraps: int = 0
    by_phase: dict = field(default_factory=dict)

    def add(self, phase: str, bootstraps: int) -> None:
        self.bootstraps += bootstraps
        self.by_phase[phase] = self.by_phase.get(phase, 0) + bootstraps


@dataclass
class BootstrapKeys:
    """Public evaluation material: blind-rotation key plus key-switch key.

    brk[i] is an RGSW encryption of LWE secret bit s_i (shape
    (n, 2*ell_g, 2, N)); ksk rows encrypt z_i * Bks^j under the LWE key
    (ksk_a: (N, ell_ks, n), ksk_b: (N, ell_ks)).  Nothing here reveals
    the secrets beyond standard LWE hardness; these are the keys a
    server holds.
    """

    profile: ParamProfile
    brk: np.ndarray
    ksk_a: np.ndarray
    ksk_b: np.ndarray

    @cached_property
    def brk_fft(self) -> np.ndarray:
        fft = get_fft(self.profile.N)
        return fft.forward(center(self.brk, self.profile.Q))


def bootstrap_keygen(
    profile: ParamProfile,
    lwe_key: LweKey,
    ring_key: RingKey,
    rng: np.random.Generator,
) -> BootstrapKeys:
    if lwe_key.q != profile.q or lwe_key.dim != profile.n:
        raise ValueError("LWE key does not match profile")
    if ring_key.N != profile.N or ring_key.Q != profile.Q:
        raise ValueError("ring key does not match profile")
    if (2 * profile.N) % profile.q:
        raise ValueError("blind rotation needs q to divide 2N")

    ell_g, bg_bits = profile.ell_g, profile.bg_bits
    brk = np.empty((profile.n, 2 * ell_g, 2, profile.N), dtype=np.int64)
    bit_poly = np.zeros(profile.N, dtype=np.int64)
    for i in range(profile.n):
        bit_poly[0] = int(lwe_key.s[i])
        brk[i] = rgsw_encrypt(
            ring_key, bit_poly, ell_g, bg_bits, profile.sigma_ring, rng
        ).rows

    ell_ks, bks = profile.ell_ks, profile.bks
    N, Q, n = profile.N, profile.Q, profile.n
    ksk_a = rng.integers(0, Q, (N, ell_ks, n), dtype=np.int64)
    powers = np.array([pow(bks, j, Q) for j in range(ell_ks)], dtype=np.int64)
    msg = (ring_key.z[:, None] * powers[None, :]) % Q
    ksk_b = np.mod(
        np.einsum("nlk,k->nl", ksk_a, lwe_key.s) + _noise(profile.sigma_ksk, (N, ell_ks), rng) + msg,
        Q,
    )
    return BootstrapKeys(profile=profile, brk=brk, ksk_a=ksk_a, ksk_b=ksk_b)


# -- the pipeline ---------------------------------------------------------


def _blind_rotate(acc_a, acc_b, exponents, keys: BootstrapKeys):
    """CMux chain: multiply the accumulator by X^<a, s> one bit at a time.

    acc_a/acc_b: (M, N) accumulator components; exponents: (M, n) mod 2N.

    The loop body is the hot path of the whole package, so it trades
    clarity for fewer array passes: both components travel in one
    (M, 2, N) block sharing a single gather-index computation, and the
    rotation difference is digit-decomposed raw (balanced digits drop
    their residue, and base^ell is a multiple of Q, so recomposition is
    still exact mod Q without centering).  When every intermediate fits
    comfortably in 32 bits the whole loop runs in int32, halving the
    memory traffic of the elementwise passes; the wide path instead
    skips the per-step reduction and lets the accumulator drift, which
    stays under n*Q, far inside int64.
    """
    prof = keys.profile
    Q, ell, bg_bits = prof.Q, prof.ell_g, prof.bg_bits
    N = prof.N
    fft = get_fft(N)
    brk_fft = keys.brk_fft

    # int32 needs room for the CMux product, conv bound N*(Bg/2)*(Q/2)*2ell.
    narrow = N * (1 << (bg_bits - 1)) * (Q // 2) * 2 * ell < 2**31
    dtype = np.int32 if narrow else np.int64

    acc = np.stack([acc_a, acc_b], axis=1).astype(dtype)  # (M, 2, N)
    exponents = exponents.astype(dtype)
    j = np.arange(N, dtype=dtype)
    for i in range(prof.n):
        k = exponents[:, i, None, None]  # (M, 1, 1)
        src = (j - k) % (2 * N)
        rot = np.take_along_axis(acc, np.broadcast_to(src % N, acc.shape), axis=-1)
        np.negative(rot, out=rot, where=(src >= N))
        rot -= acc
        d = balanced_digits(rot, ell, bg_bits)  # (ell, M, 2, N)
        d = np.concatenate([d[:, :, 0], d[:, :, 1]], axis=0)  # (2*ell, M, N)
        d_fft = fft.forward(np.moveaxis(d, 0, 1))
        upd = fft.inverse(np.einsum("bdf,dcf->bcf", d_fft, brk_fft[i]), dtype=dtype)
        if narrow:
            upd %= Q
        acc += upd
    acc = (acc % Q).astype(np.int64)
    return acc[:, 0], acc[:, 1]


def _extract_and_switch(acc_a, acc_b, keys: BootstrapKeys) -> tuple[np.ndarray, np.ndarray]:
    """Constant-coefficient extraction, key switch, modulus switch."""
    prof = keys.profile
    Q, q = prof.Q, prof.q
    # Extracted a-vector under z: (a_0, -a_{N-1}, ..., -a_1).
    ext_a = np.empty_like(acc_a)
    ext_a[:, 0] = acc_a[:, 0]
    ext_a[:, 1:] = np.mod(-acc_a[:, :0:-1], Q)
    ext_b = acc_b[:, 0]

    digits = gadget_digits_1d(ext_a, Q, prof.ell_ks, prof.bks_bits)
    a_out = np.mod(-np.einsum("lbn,nlk->bk", digits, keys.ksk_a), Q)
    b_out = np.mod(ext_b - np.einsum("lbn,nl->b", digits, keys.ksk_b), Q)

    if q != Q:
        a_out = _round_scale(a_out, q, Q)
        b_out = _round_scale(b_out, q, Q)
    return a_out, b_out


def gadget_digits_1d(x: np.ndarray, Q: int, ell: int, base_bits: int) -> np.ndarray:
    """Balanced digits of centered scalars, digit axis first."""
    return balanced_digits(center(x, Q), ell, base_bits)


def _round_scale(x: np.ndarray, q: int, Q: int) -> np.ndarray:
    """Nearest multiple rounding of canonical values from Z_Q to Z_q."""
    return np.mod((2 * x * q + Q) // (2 * Q), q)


def bootstrap_batch(
    batch: LweBatch,
    programs: list[ProgramFunction],
    keys: BootstrapKeys,
    counter: BootstrapCounter | None = None,
    phase: str = "bootstrap",
    chunk: int = 256,
) -> list[LweBatch]:
    """Evaluate every program on every ciphertext in the batch.

    Returns one output batch per program, aligned with the input rows.
    Rows are rotated in slices of at most ``chunk``: past a few hundred
    rows the accumulator working set falls out of cache and throughput
    drops, so huge batches are not rotated in one piece.
    """
    prof = keys.profile
    if batch.q != prof.q:
        raise ValueError(f"batch modulus {batch.q} does not match profile q={prof.q}")
    if not programs:
        raise ValueError("no programs to evaluate")
    if chunk < 1:
        raise ValueError(f"chunk must be positive, got {chunk}")
    batch_check_budget(batch, prof.p)

    N, Q = prof.N, prof.Q
    M = len(batch)
    scale = (2 * N) // prof.q

    out_budget = prof.post_bootstrap_sigma()
    outs = []
    for prog in programs:
        tp = prog.test_poly(prof)
        a_parts, b_parts = [], []
        for lo in range(0, M, chunk):
            b_in = batch.b[lo : lo + chunk]
            exps = (batch.a[lo : lo + chunk] * scale) % (2 * N)
            rows = len(b_in)
            acc_a = np.zeros((rows, N), dtype=np.int64)
            acc_b = monomial_mul_batch(np.broadcast_to(tp, (rows, N)), -b_in * scale, Q)
            acc_a, acc_b = _blind_rotate(acc_a, acc_b, exps, keys)
            a_out, b_out = _extract_and_switch(acc_a, acc_b, keys)
            a_parts.append(a_out)
            b_parts.append(b_out)
        outs.append(
            LweBatch(
                a=np.concatenate(a_parts),
                b=np.concatenate(b_parts),
                q=prof.q,
                budget=out_budget,
            )
        )
    if counter is not None:
        counter.add(phase, bootstraps=M * len(programs))
    return outs


def bootstrap(
    ct: LweCiphertext,
    programs: list[ProgramFunction],
    keys: BootstrapKeys,
    counter: BootstrapCounter | None = None,
    phase: str = "bootstrap",
) -> list[LweCiphertext]:
    """Single-ciphertext convenience wrapper around bootstrap_batch."""
    outs = bootstrap_batch(batch_from_list([ct]), programs, keys, counter, phase)
    return [o.row(0) for o in outs]
