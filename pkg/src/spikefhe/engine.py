"""Encrypted inference for the integer spiking network.

The server evaluates the converted network on LWE ciphertexts without
ever decrypting.  Per layer and timestep it computes the weighted spike
sum homomorphically (a linear pass, no bootstraps), adds the carried
membrane state, then spends exactly two bootstraps per neuron: one
turns the threshold-shifted membrane into a fresh spike ciphertext,
one applies the reset table to the membrane itself.  Spikes travel as
encryptions of 0 or 2, so the multisum runs on the half-scale weights
the conversion fixed (the floats rounded at tau/2): spike value 2
against weight round(w tau / 2) lands at the intended scale while
halving the noise growth of the linear pass.  The residual between the
doubled half-scale weight and the tau-scale one is at most 1 per
synapse and unbiased, the same kind of rounding error the multisum
audit already bounds at scale tau.

Two input pipelines exist.  In encode-then-encrypt mode the client
Poisson-encodes in the clear and encrypts the resulting spikes, costing
no bootstraps.  In encrypt-then-encode mode the client encrypts raw
pixel levels once and the server performs the Bernoulli comparison
itself, firing each pixel ciphertext against a public per-step
threshold drawn from the shared encoder stream; both modes produce
identical spike trains for the same seed by construction.

Key material splits by role: encryption and decryption take the LWE
secret key (client side), everything else runs on the public bootstrap
keys.  Scores accumulate by plain ciphertext addition across steps, so
a run decrypts to per-class spike counts doubled, and the label is the
argmax.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from statistics import median
from typing import Callable, Sequence

import numpy as np

from .bootstrap import (
    BootstrapCounter,
    BootstrapKeys,
    ProgramFunction,
    bootstrap_batch,
    reset_program,
    sign_program,
)
from .discretize import DiscretizationError, DiSnnModel, choose_message_space
from .lwe import (
    LweBatch,
    LweKey,
    batch_check_budget,
    batch_decrypt,
    batch_encrypt,
    batch_phase,
)
from .params import profile_for_message_space
from .ring import center
from .snn import encode_rng, poisson_encode

MODE_ENCODE_FIRST = "encode-then-encrypt"
MODE_ENCRYPT_FIRST = "encrypt-then-encode"
MODES = (MODE_ENCODE_FIRST, MODE_ENCRYPT_FIRST)

# Exact normalized values of the 256 pixel levels.  The per-step firing
# threshold for an encrypted pixel is found against this grid, so the
# homomorphic comparison reproduces the plaintext one bit for bit.
_LEVELS = np.arange(256, dtype=np.float64) / 255.0


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    return mode


# -- the deployable model --------------------------------------------------


@dataclass(frozen=True)
class FheDisnnModel:
    """Integer network prepared for encrypted evaluation.

    Weights are the half-scale synapse values from the conversion; the
    membrane bound alpha records the calibration backing the
    admissibility check alpha + v_threshold <= p/2, which keeps every
    fire input and every reset input inside the interval where the
    tables match the true neuron functions.
    """

    w1_half: np.ndarray
    w2_half: np.ndarray
    v_threshold: int
    p: int
    tau: float
    mode: str
    alpha: int
    fire_table: ProgramFunction
    reset_table: ProgramFunction

    def __post_init__(self):
        _check_mode(self.mode)
        for name, w in (("w1_half", self.w1_half), ("w2_half", self.w2_half)):
            if w.ndim != 2 or w.dtype != np.int64:
                raise ValueError(f"{name} must be a 2-d int64 array")
        if self.w1_half.shape[1] != self.w2_half.shape[0]:
            raise ValueError("layer shapes do not chain")
        if not 0 < self.v_threshold < self.p // 2:
            raise ValueError(
                f"threshold {self.v_threshold} outside (0, p/2) for p={self.p}"
            )
        if self.alpha + self.v_threshold > self.p // 2:
            raise DiscretizationError(
                f"membrane bound {self.alpha} + threshold {self.v_threshold} "
                f"exceeds p/2 = {self.p // 2}; the reset table would be "
                f"addressed outside its valid interval"
            )
        if self.fire_table.p != self.p or self.reset_table.p != self.p:
            raise ValueError("table message space does not match p")

    @property
    def dims(self) -> tuple[int, int, int]:
        n, k = self.w1_half.shape
        return n, k, self.w2_half.shape[1]

    @classmethod
    def from_disnn(
        cls,
        dmodel: DiSnnModel,
        mode: str = MODE_ENCODE_FIRST,
        p: int | None = None,
        calib_images: np.ndarray | None = None,
        T: int = 10,
        seed: int = 0,
        margin: float = 1.02,
    ) -> "FheDisnnModel":
        """Adopt the conversion's half-scale weights and size the message space.

        The halved network's trajectory differs slightly from the
        tau-scale one, so the membrane bound is re-measured on it when
        calibration images are given; otherwise the parent model's
        bound is reused.  When p is not forced, the smallest available
        parameter profile whose message space admits alpha + threshold
        is chosen.
        """
        _check_mode(mode)
        w1h = dmodel.w1_half.copy()
        w2h = dmodel.w2_half.copy()
        vth = dmodel.v_threshold
        if calib_images is not None:
            trains = encode_trains(calib_images, T, seed)
            ref = reference_run(2 * w1h, 2 * w2h, vth, trains)
            peak = max(
                float(np.max(np.abs(ref["h1"]))), float(np.max(np.abs(ref["h2"])))
            )
            alpha = int(math.ceil(margin * peak))
        else:
            alpha = dmodel.alpha
        if p is None:
            p = profile_for_message_space(choose_message_space(alpha + vth)).p
        return cls(
            w1_half=w1h,
            w2_half=w2h,
            v_threshold=vth,
            p=p,
            tau=dmodel.tau,
            mode=mode,
            alpha=alpha,
            fire_table=sign_program(p),
            reset_table=reset_program(p, vth),
        )


def bootstrap_count(n: int, k: int, m: int, T: int, mode: str) -> int:
    """Bootstraps one image costs: 2 per neuron per step, plus n per
    step when the Poisson comparison itself runs under encryption."""
    _check_mode(mode)
    if min(n, k, m, T) < 1:
        raise ValueError("dimensions and horizon must be positive")
    per_step = 2 * (k + m) + (n if mode == MODE_ENCRYPT_FIRST else 0)
    return per_step * T


# -- plaintext reference ---------------------------------------------------


def encode_trains(
    images: np.ndarray, T: int, seed: int, start_index: int = 0
) -> np.ndarray:
    """Poisson trains for a batch of images, (I, T, n) bits.

    Uses the same per-image streams as the plaintext evaluator, so
    encrypted runs and reference runs see identical randomness.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    return np.stack(
        [
            poisson_encode(img, T, encode_rng(seed, start_index + i))
            for i, img in enumerate(images)
        ]
    ).astype(np.int64)


def reference_run(
    w1: np.ndarray, w2: np.ndarray, vth: int, trains: np.ndarray
) -> dict:
    """Integer network trajectory on given spike trains, all layers.

    This is the oracle the encrypted pipeline must reproduce when run
    with the effective weights 2 * w_half: on exact profiles the match
    is bit for bit.  Returns per-step membranes before reset (h), spikes
    (s) and carried states (v), plus final scores and labels.
    """
    trains = np.asarray(trains, dtype=np.int64)
    I, T, n = trains.shape
    k, m = w1.shape[1], w2.shape[1]
    out = {
        "h1": np.empty((T, I, k), np.int64),
        "s1": np.empty((T, I, k), np.int64),
        "v1": np.empty((T, I, k), np.int64),
        "h2": np.empty((T, I, m), np.int64),
        "s2": np.empty((T, I, m), np.int64),
        "v2": np.empty((T, I, m), np.int64),
    }
    v1 = np.zeros((I, k), np.int64)
    v2 = np.zeros((I, m), np.int64)
    scores = np.zeros((I, m), np.int64)
    for t in range(T):
        h1 = v1 + trains[:, t, :] @ w1
        s1 = (h1 >= vth).astype(np.int64)
        v1 = np.where(h1 >= vth, 0, np.maximum(h1, 0))
        h2 = v2 + s1 @ w2
        s2 = (h2 >= vth).astype(np.int64)
        v2 = np.where(h2 >= vth, 0, np.maximum(h2, 0))
        scores += s2
        for key, val in (("h1", h1), ("s1", s1), ("v1", v1),
                         ("h2", h2), ("s2", s2), ("v2", v2)):
            out[key][t] = val
    out["scores"] = scores
    out["labels"] = np.argmax(scores, axis=1)
    return out


def reference_labels(
    model: FheDisnnModel, images: np.ndarray, T: int, seed: int = 0,
    start_index: int = 0,
) -> np.ndarray:
    """Labels of the plaintext halved-weight network (the exact oracle)."""
    trains = encode_trains(images, T, seed, start_index)
    ref = reference_run(2 * model.w1_half, 2 * model.w2_half,
                        model.v_threshold, trains)
    return ref["labels"]


# -- client side: encoding and encryption ----------------------------------


@dataclass
class EncodedInput:
    """Encrypted input for a T-step run over one or more images.

    Encode-then-encrypt carries one spike batch per step (rows are
    image-major, values 0 or 2); steps may also be a callable t -> batch
    so large runs can encrypt lazily.  Encrypt-then-encode carries the
    pixel levels once plus the public per-step thresholds.
    """

    mode: str
    T: int
    n_images: int
    n_inputs: int
    steps: Sequence[LweBatch] | Callable[[int], LweBatch] | None = None
    pixels: LweBatch | None = None
    thresholds: np.ndarray | None = None

    def step_batch(self, t: int) -> LweBatch:
        if callable(self.steps):
            return self.steps(t)
        return self.steps[t]

    def subset(self, lo: int, hi: int) -> "EncodedInput":
        """Images lo..hi-1 as their own input (rows are image-major)."""
        if not 0 <= lo < hi <= self.n_images:
            raise ValueError(f"bad image range [{lo}, {hi})")
        n = self.n_inputs
        sl = slice(lo * n, hi * n)

        def cut(batch: LweBatch) -> LweBatch:
            return LweBatch(
                a=batch.a[sl], b=batch.b[sl], q=batch.q, budget=batch.budget
            )

        if self.mode == MODE_ENCODE_FIRST:
            if callable(self.steps):
                raise ValueError("streaming inputs do not slice; materialize first")
            return EncodedInput(
                mode=self.mode, T=self.T, n_images=hi - lo, n_inputs=n,
                steps=[cut(s) for s in self.steps],
            )
        return EncodedInput(
            mode=self.mode, T=self.T, n_images=hi - lo, n_inputs=n,
            pixels=cut(self.pixels), thresholds=self.thresholds[:, sl],
        )


def _encryption_rng(
    seed: int, start_index: int, rng: np.random.Generator | None
) -> np.random.Generator:
    # Stream word 2^32 cannot collide with any per-image encoder stream.
    return rng if rng is not None else np.random.default_rng([seed, 2**32, start_index])


def encode_and_encrypt(
    images: np.ndarray,
    T: int,
    key: LweKey,
    profile,
    mode: str = MODE_ENCODE_FIRST,
    seed: int = 0,
    start_index: int = 0,
    rng: np.random.Generator | None = None,
) -> EncodedInput:
    """Prepare encrypted inputs for a run (client side, secret key).

    The decrypted spike train is the same in both modes for the same
    seed: the per-step threshold is the smallest pixel level whose
    normalized value exceeds the Bernoulli draw, so the homomorphic
    comparison k >= threshold fires exactly when intensity > draw.
    """
    _check_mode(mode)
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    I, n = images.shape
    p, sigma = profile.p, profile.sigma_lwe
    rng = _encryption_rng(seed, start_index, rng)
    if mode == MODE_ENCODE_FIRST:
        trains = encode_trains(images, T, seed, start_index)
        steps = [
            batch_encrypt(key, 2 * trains[:, t, :].ravel(), p, sigma, rng)
            for t in range(T)
        ]
        return EncodedInput(mode=mode, T=T, n_images=I, n_inputs=n, steps=steps)

    levels = np.rint(images * 255.0).astype(np.int64)
    if not np.array_equal(levels / 255.0, images):
        raise DiscretizationError(
            "encrypt-then-encode needs pixels on the 8-bit grid"
        )
    if 255 >= p // 2:
        raise DiscretizationError(
            f"pixel levels up to 255 do not fit message space p={p}"
        )
    draws = np.stack(
        [encode_rng(seed, start_index + i).random((T, n)) for i in range(I)]
    )
    thresholds = np.searchsorted(_LEVELS, draws, side="right")
    thresholds = thresholds.transpose(1, 0, 2).reshape(T, I * n)
    pixels = batch_encrypt(key, levels.ravel(), p, sigma, rng)
    return EncodedInput(
        mode=mode, T=T, n_images=I, n_inputs=n,
        pixels=pixels, thresholds=thresholds,
    )


def streaming_input(
    images: np.ndarray,
    T: int,
    key: LweKey,
    profile,
    mode: str = MODE_ENCODE_FIRST,
    seed: int = 0,
    start_index: int = 0,
    rng: np.random.Generator | None = None,
) -> EncodedInput:
    """Like encode_and_encrypt, but spike batches are encrypted on
    demand, so memory holds one step of ciphertexts instead of T."""
    if mode == MODE_ENCRYPT_FIRST:
        return encode_and_encrypt(
            images, T, key, profile, mode, seed, start_index, rng
        )
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    trains = encode_trains(images, T, seed, start_index)
    p, sigma = profile.p, profile.sigma_lwe
    rng = _encryption_rng(seed, start_index, rng)

    def step(t: int) -> LweBatch:
        return batch_encrypt(key, 2 * trains[:, t, :].ravel(), p, sigma, rng)

    return EncodedInput(
        mode=mode, T=T, n_images=len(images), n_inputs=images.shape[1], steps=step
    )


# -- server side: the encrypted pipeline -----------------------------------


def _badd(x: LweBatch, y: LweBatch) -> LweBatch:
    if x.q != y.q:
        raise ValueError(f"modulus mismatch: {x.q} vs {y.q}")
    return LweBatch(
        a=(x.a + y.a) % x.q, b=(x.b + y.b) % x.q, q=x.q,
        budget=x.budget + y.budget,
    )


def _badd_plain(x: LweBatch, m, p: int) -> LweBatch:
    """Add plaintext messages (scalar or per-row) without touching noise."""
    delta = x.q // p
    return LweBatch(
        a=x.a, b=(x.b + delta * np.asarray(m, dtype=np.int64)) % x.q,
        q=x.q, budget=x.budget,
    )


def encrypted_multisum(
    weights_half: np.ndarray, spikes: LweBatch, n_images: int, p: int
) -> LweBatch:
    """Weighted sum of spike ciphertexts: the linear half of a layer.

    Spike rows are image-major blocks of the input dimension; the
    result has one row per (image, output neuron).  Sums run in float64
    where the magnitude bound keeps them exact, which buys the BLAS
    matmul path; otherwise plain int64.
    """
    n_in, n_out = weights_half.shape
    if len(spikes) != n_images * n_in:
        raise ValueError(
            f"{len(spikes)} spike rows for {n_images} images of {n_in} inputs"
        )
    q = spikes.q
    a = spikes.a.reshape(n_images, n_in, -1)
    b = spikes.b.reshape(n_images, n_in)
    wmax = int(np.max(np.abs(weights_half), initial=0))
    if n_in * wmax * (q - 1) < 2**53:
        w = weights_half.astype(np.float64)
        a_out = np.tensordot(a.astype(np.float64), w, axes=([1], [0]))
        a_out = np.rint(a_out).astype(np.int64) % q
        b_out = np.rint(b.astype(np.float64) @ w).astype(np.int64) % q
    else:
        a_out = np.einsum("ijd,jo->ido", a, weights_half) % q
        b_out = (b @ weights_half) % q
    a_out = np.ascontiguousarray(np.swapaxes(a_out, 1, 2)).reshape(
        n_images * n_out, -1
    )
    budget = spikes.budget * int(np.max(np.abs(weights_half).sum(axis=0), initial=0))
    out = LweBatch(a=a_out, b=b_out.reshape(-1), q=q, budget=float(budget))
    batch_check_budget(out, p)
    return out


def fhe_fire(
    batch: LweBatch,
    model: FheDisnnModel,
    keys: BootstrapKeys,
    counter: BootstrapCounter | None = None,
    phase: str = "fire",
) -> LweBatch:
    """Spike ciphertexts {0,2} from threshold-shifted membranes.

    The input must already encode membrane minus threshold; the sign
    bootstrap gives -1 or 1 and a plaintext increment lands on {0,2}.
    """
    (out,) = bootstrap_batch(batch, [model.fire_table], keys, counter, phase)
    return _badd_plain(out, 1, model.p)


def fhe_reset(
    batch: LweBatch,
    model: FheDisnnModel,
    keys: BootstrapKeys,
    counter: BootstrapCounter | None = None,
) -> LweBatch:
    """Post-reset membranes with fresh noise, from raw membranes."""
    (out,) = bootstrap_batch(batch, [model.reset_table], keys, counter, "reset")
    return out


@dataclass
class EncState:
    """Carried membrane ciphertexts between timesteps."""

    v1: LweBatch
    v2: LweBatch
    n_images: int


def _trivial_zeros(rows: int, dim: int, q: int) -> LweBatch:
    """Encryptions of zero that any key decrypts: a = 0, b = 0."""
    return LweBatch(
        a=np.zeros((rows, dim), np.int64), b=np.zeros(rows, np.int64),
        q=q, budget=0.0,
    )


def initial_state(model: FheDisnnModel, n_images: int, keys: BootstrapKeys) -> EncState:
    """Zero membranes as trivial ciphertexts (no key, no noise)."""
    dim, q = keys.profile.n, keys.profile.q
    _, k, m = model.dims
    return EncState(
        v1=_trivial_zeros(n_images * k, dim, q),
        v2=_trivial_zeros(n_images * m, dim, q),
        n_images=n_images,
    )


def encrypted_timestep(
    model: FheDisnnModel,
    spikes_in: LweBatch,
    state: EncState,
    keys: BootstrapKeys,
    counter: BootstrapCounter | None = None,
) -> tuple[LweBatch, EncState]:
    """One step of both layers: charge, fire, reset, under encryption.

    Costs exactly two bootstraps per neuron.  Layer order is strict:
    the second layer consumes the first layer's fresh spikes.
    """
    I = state.n_images
    p, vth = model.p, model.v_threshold

    i1 = encrypted_multisum(model.w1_half, spikes_in, I, p)
    h1 = _badd(state.v1, i1)
    s1 = fhe_fire(_badd_plain(h1, -vth, p), model, keys, counter)
    v1 = fhe_reset(h1, model, keys, counter)

    i2 = encrypted_multisum(model.w2_half, s1, I, p)
    h2 = _badd(state.v2, i2)
    s2 = fhe_fire(_badd_plain(h2, -vth, p), model, keys, counter)
    v2 = fhe_reset(h2, model, keys, counter)

    return s2, EncState(v1=v1, v2=v2, n_images=I)


def _input_spikes(
    inputs: EncodedInput,
    t: int,
    model: FheDisnnModel,
    keys: BootstrapKeys,
    counter: BootstrapCounter | None,
) -> LweBatch:
    """Spike batch for step t; in encrypt-then-encode mode this is
    where the Poisson comparison spends its n bootstraps."""
    if inputs.mode == MODE_ENCODE_FIRST:
        return inputs.step_batch(t)
    shifted = _badd_plain(inputs.pixels, -inputs.thresholds[t], model.p)
    return fhe_fire(shifted, model, keys, counter, phase="encoding")


def encrypted_scores(
    model: FheDisnnModel,
    inputs: EncodedInput,
    keys: BootstrapKeys,
    counter: BootstrapCounter | None = None,
    log: Callable[[str], None] | None = None,
) -> LweBatch:
    """Run the full T-step pipeline; returns score ciphertexts.

    Scores are plain ciphertext sums of output spikes, one row per
    (image, class); they decrypt to twice the spike counts.
    """
    if model.p != keys.profile.p:
        raise ValueError(
            f"model message space p={model.p} does not match profile "
            f"p={keys.profile.p}"
        )
    if inputs.mode != model.mode:
        raise ValueError(
            f"inputs were encoded for {inputs.mode!r} but the model is "
            f"configured for {model.mode!r}"
        )
    n, k, m = model.dims
    if inputs.n_inputs != n:
        raise ValueError(f"{inputs.n_inputs} inputs for a {n}-input network")
    if 2 * inputs.T > model.p // 2:
        raise DiscretizationError(
            f"score range 2T = {2 * inputs.T} does not fit p/2 = {model.p // 2}"
        )
    I = inputs.n_images
    state = initial_state(model, I, keys)
    scores = _trivial_zeros(I * m, keys.profile.n, keys.profile.q)
    for t in range(inputs.T):
        t0 = time.monotonic()
        spikes = _input_spikes(inputs, t, model, keys, counter)
        s2, state = encrypted_timestep(model, spikes, state, keys, counter)
        scores = _badd(scores, s2)
        if log:
            log(f"step {t + 1}/{inputs.T}: {time.monotonic() - t0:.2f}s")
    batch_check_budget(scores, model.p)
    return scores


def decrypt_scores(
    key: LweKey, scores: LweBatch, model: FheDisnnModel, n_images: int
) -> np.ndarray:
    """Per-class doubled spike counts, (n_images, classes) ints."""
    m = model.dims[2]
    return batch_decrypt(key, scores, model.p).reshape(n_images, m)


def encrypted_predict(
    model: FheDisnnModel,
    image: np.ndarray,
    T: int,
    keys: BootstrapKeys,
    key: LweKey,
    seed: int = 0,
    image_index: int = 0,
    counter: BootstrapCounter | None = None,
) -> tuple[int, np.ndarray]:
    """Encrypt, classify, decrypt one image; returns (label, scores)."""
    inputs = encode_and_encrypt(
        image, T, key, keys.profile, model.mode, seed, image_index
    )
    scores = encrypted_scores(model, inputs, keys, counter)
    row = decrypt_scores(key, scores, model, 1)[0]
    return int(np.argmax(row)), row


def evaluate_encrypted(
    model: FheDisnnModel,
    images: np.ndarray,
    T: int,
    keys: BootstrapKeys,
    key: LweKey,
    labels: np.ndarray | None = None,
    seed: int = 0,
    start_index: int = 0,
    group_size: int = 100,
    counter: BootstrapCounter | None = None,
    log: Callable[[str], None] | None = None,
) -> dict:
    """Classify a batch of images under encryption; returns a report.

    Images run in lockstep groups (bigger groups batch the rotations
    better); inputs are encrypted step by step so memory stays at one
    step of ciphertexts.  The report carries predicted labels, timing
    medians, and the bootstrap tally checked against the closed form.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    counter = counter if counter is not None else BootstrapCounter()
    n, k, m = model.dims
    I = len(images)
    predicted = np.empty(I, dtype=np.int64)
    all_scores = np.empty((I, m), dtype=np.int64)
    step_seconds: list[float] = []
    t0 = time.monotonic()
    for lo in range(0, I, group_size):
        group = images[lo : lo + group_size]
        inputs = streaming_input(
            group, T, key, keys.profile, model.mode, seed, start_index + lo
        )
        marks: list[float] = []

        def mark(msg: str, _marks=marks, _lo=lo) -> None:
            _marks.append(time.monotonic())
            if log:
                log(f"images {_lo}+: {msg}")

        t_group = time.monotonic()
        scores = encrypted_scores(model, inputs, keys, counter, log=mark)
        span = time.monotonic() - t_group
        step_seconds.extend(_spans(t_group, marks))
        rows = decrypt_scores(key, scores, model, len(group))
        all_scores[lo : lo + len(group)] = rows
        predicted[lo : lo + len(group)] = np.argmax(rows, axis=1)
        if log:
            log(
                f"images {lo}..{lo + len(group) - 1}: {span:.1f}s, "
                f"{counter.bootstraps} bootstraps so far"
            )
    seconds = time.monotonic() - t0
    expected = bootstrap_count(n, k, m, T, model.mode) * I
    report = {
        "n_images": I,
        "T": T,
        "mode": model.mode,
        "p": model.p,
        "profile": keys.profile.name,
        "labels": predicted.tolist(),
        "scores": all_scores.tolist(),
        "bootstraps": counter.bootstraps,
        "bootstraps_by_phase": dict(counter.by_phase),
        "bootstraps_expected": expected,
        "seconds": round(seconds, 3),
        "seconds_per_step_median": round(median(step_seconds), 4),
        "seconds_per_image": round(seconds / I, 3),
    }
    if labels is not None:
        report["accuracy"] = float(np.mean(predicted == np.asarray(labels)))
    return report


def _spans(start: float, marks: list[float]) -> list[float]:
    edges = [start, *marks]
    return [b - a for a, b in zip(edges, edges[1:])]


# -- debug dual-run ---------------------------------------------------------


def debug_dual_run(
    model: FheDisnnModel,
    images: np.ndarray,
    T: int,
    keys: BootstrapKeys,
    key: LweKey,
    seed: int = 0,
    log: Callable[[str], None] | None = None,
) -> dict:
    """Step-locked encrypted vs plaintext comparison (needs the key).

    Decrypts every spike and membrane each step and checks them against
    the halved-weight reference.  Divergences and membranes outside the
    calibrated bound are reported, never fatal: slight noise overflow
    shifts a value by one slot without invalidating the run.  Also
    records the RMS distance of the carried state's phases to their own
    nearest slot centers per step, which is the state noise independent
    of any message divergence; it should be flat in T since every state
    leaves a bootstrap.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    I = len(images)
    n, k, m = model.dims
    p, vth = model.p, model.v_threshold
    trains = encode_trains(images, T, seed)
    ref = reference_run(2 * model.w1_half, 2 * model.w2_half, vth, trains)
    prof = keys.profile
    rng = _encryption_rng(seed, 0, None)

    divergences: list[dict] = []
    range_violations: list[dict] = []
    state_noise_rms: list[float] = []

    def compare(stage: str, t: int, batch: LweBatch, expect: np.ndarray) -> None:
        got = batch_decrypt(key, batch, p)
        bad = np.nonzero(got != expect.ravel())[0]
        for i in bad:
            divergences.append(
                {"step": t, "stage": stage, "row": int(i),
                 "got": int(got[i]), "expected": int(expect.ravel()[i])}
            )
            if log:
                log(
                    f"step {t} {stage} row {i}: decrypted {int(got[i])}, "
                    f"reference {int(expect.ravel()[i])}"
                )

    def noise_rms(batch: LweBatch) -> float:
        delta = prof.q // p
        err = (batch_phase(key, batch) + delta // 2) % delta - delta // 2
        return float(np.sqrt(np.mean(err.astype(np.float64) ** 2)))

    state = initial_state(model, I, keys)
    for t in range(T):
        for layer, h_ref in (("h1", ref["h1"][t]), ("h2", ref["h2"][t])):
            peak = int(np.max(np.abs(h_ref)))
            if peak > model.alpha:
                range_violations.append(
                    {"step": t, "stage": layer, "peak": peak, "alpha": model.alpha}
                )
                if log:
                    log(
                        f"step {t} {layer}: membrane {peak} exceeds the "
                        f"calibrated bound {model.alpha}"
                    )
        spikes = batch_encrypt(key, 2 * trains[:, t, :].ravel(), p, prof.sigma_lwe, rng)
        s2, state = encrypted_timestep(model, spikes, state, keys)
        compare("spikes", t, s2, 2 * ref["s2"][t])
        compare("state1", t, state.v1, ref["v1"][t])
        compare("state2", t, state.v2, ref["v2"][t])
        state_noise_rms.append(noise_rms(state.v1))

    return {
        "divergences": divergences,
        "range_violations": range_violations,
        "state_noise_rms": state_noise_rms,
        "agree": not divergences,
    }
