"""Plaintext spiking network: IF/LIF dynamics, Poisson coding, inference.

The reference model is a dense 784-k-m network of integrate-and-fire
neurons.  Pixels are rate-coded into Bernoulli spike trains, each layer
runs charge -> fire -> reset per timestep, and the predicted class is
the argmax of accumulated output spikes over T steps.  Everything is
float64 numpy; training has its own module (torch), and the discretized
and encrypted evaluators downstream mirror this one step for step.

Neuron dynamics per timestep, elementwise over a layer:

    H = charge(V, I)            IF: V + I,  LIF: V + (-V + I)/omega
    S = 1  iff  H - V_threshold >= 0
    V' = V_reset        if H >= V_threshold
         H              if V_reset <= H < V_threshold
         V_reset        if H < V_reset

so a membrane that fires resets, one that decays below the floor clamps
to it, and V' always lands in [V_reset, V_threshold).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NeuronConfig:
    """Shared neuron parameters for one network.

    kind "IF" integrates its input directly; "LIF" leaks toward zero
    with time constant omega (forward-Euler step of the continuous
    leak, unit timestep).
    """

    kind: str = "IF"
    v_threshold: float = 1.0
    v_reset: float = 0.0
    omega: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in ("IF", "LIF"):
            raise ValueError(f"neuron kind must be IF or LIF, got {self.kind!r}")
        if not self.v_reset < self.v_threshold:
            raise ValueError(
                f"v_reset {self.v_reset} must lie below v_threshold {self.v_threshold}"
            )
        if self.kind == "LIF" and not self.omega > 0:
            raise ValueError(f"LIF needs omega > 0, got {self.omega}")


@dataclass
class SnnModel:
    """Two dense layers of spiking neurons: weights and neuron config.

    w1 maps input spikes (n,) to hidden currents (k,); w2 maps hidden
    spikes to output currents (m,).  Weights are stored input-major so
    a batch of spike rows multiplies as spikes @ w.
    """

    w1: np.ndarray
    w2: np.ndarray
    cfg: NeuronConfig = field(default_factory=NeuronConfig)

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("weights must be matrices")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError(
                f"hidden size mismatch: w1 is {self.w1.shape}, w2 is {self.w2.shape}"
            )
        if not (np.isfinite(self.w1).all() and np.isfinite(self.w2).all()):
            raise ValueError("weights must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]


# -- neuron dynamics -------------------------------------------------------


def charge(v: np.ndarray, i: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Membrane after integrating one step of input current."""
    if cfg.kind == "IF":
        return v + i
    return v + (-v + i) / cfg.omega


def fire(h: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Spike indicator: 1.0 where the membrane reached threshold."""
    return (h - cfg.v_threshold >= 0).astype(np.float64)


def reset(h: np.ndarray, cfg: NeuronConfig) -> np.ndarray:
    """Post-spike membrane: fired neurons and underflows go to v_reset."""
    return np.where(
        h >= cfg.v_threshold, cfg.v_reset, np.maximum(h, cfg.v_reset)
    )


def forward_timestep(
    model: SnnModel,
    spikes_in: np.ndarray,
    v1: np.ndarray,
    v2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One step through both layers.

    spikes_in is (..., n); v1 and v2 carry the membrane state between
    calls and start at zero.  Returns hidden spikes, output spikes and
    the updated states.
    """
    cfg = model.cfg
    h1 = charge(v1, spikes_in @ model.w1, cfg)
    s1 = fire(h1, cfg)
    v1 = reset(h1, cfg)
    h2 = charge(v2, s1 @ model.w2, cfg)
    s2 = fire(h2, cfg)
    v2 = reset(h2, cfg)
    return s1, s2, v1, v2


# -- Poisson rate coding ----------------------------------------------------


def poisson_encode(image: np.ndarray, T: int, rng: np.random.Generator) -> np.ndarray:
    """Rate-code pixels in [0,1] as a (T, ...) train of Bernoulli spikes.

    A pixel of intensity x spikes in each step independently with
    probability x: spike iff x > u for fresh u ~ U[0,1).  Strict
    inequality makes intensity 0 silent and intensity 1 certain.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.min(initial=0.0) < 0.0 or image.max(initial=0.0) > 1.0:
        raise ValueError("pixel intensities must lie in [0, 1]")
    u = rng.random((T,) + image.shape)
    return (image > u).astype(np.float64)


def encode_rng(seed: int, image_index: int) -> np.random.Generator:
    """Per-image encoder stream: reproducible regardless of batch order."""
    return np.random.default_rng([seed, image_index])


# -- inference ----------------------------------------------------------------


def predict(
    model: SnnModel, image: np.ndarray, T: int, rng: np.random.Generator
) -> tuple[int, np.ndarray]:
    """Classify one image: argmax of output spike counts over T steps.

    State lives only inside this call: every prediction starts from
    zero membranes, matching the convention that the network is reset
    between simulations.
    """
    n, k, m = model.dims
    v1 = np.zeros(k)
    v2 = np.zeros(m)
    scores = np.zeros(m)
    train = poisson_encode(image, T, rng)
    for t in range(T):
        _, s2, v1, v2 = forward_timestep(model, train[t], v1, v2)
        scores += s2
    return int(np.argmax(scores)), scores


def evaluate(
    model: SnnModel,
    images: np.ndarray,
    labels: np.ndarray,
    T: int,
    seed: int = 0,
    batch_size: int = 256,
) -> float:
    """Accuracy over a set of images, batched across images per step.

    Encoding draws one seeded stream per image (seed, index), so the
    result is independent of batch size.
    """
    n_total = len(images)
    correct = 0
    for start in range(0, n_total, batch_size):
        block = images[start : start + batch_size]
        trains = np.stack(
            [
                poisson_encode(img, T, encode_rng(seed, start + j))
                for j, img in enumerate(block)
            ]
        )  # (B, T, n)
        B = len(block)
        v1 = np.zeros((B, model.dims[1]))
        v2 = np.zeros((B, model.dims[2]))
        scores = np.zeros((B, model.dims[2]))
        for t in range(T):
            _, s2, v1, v2 = forward_timestep(model, trains[:, t], v1, v2)
            scores += s2
        correct += int(np.sum(np.argmax(scores, axis=1) == labels[start : start + B]))
    return correct / n_total


# -- surrogate derivatives ----------------------------------------------------


def surrogate_grad(kind: str, a: float, v, v_threshold: float = 1.0):
    """Smooth stand-ins for the derivative of the spike step at threshold.

    f1 rectangle, f2 triangle, f3 logistic derivative, f4 Gaussian, and
    the arctan family the training loop uses.  All peak at
    v = v_threshold and integrate to 1 (f1-f4) so they approximate the
    same delta.
    """
    if a <= 0:
        raise ValueError(f"surrogate width must be positive, got {a}")
    x = np.asarray(v, dtype=np.float64) - v_threshold
    if kind == "f1":
        return np.where(np.abs(x) < a / 2, 1.0 / a, 0.0)
    if kind == "f2":
        return np.maximum(np.sqrt(a) / 2 - (a / 4) * np.abs(x), 0.0)
    if kind == "f3":
        e = np.exp(-x / a)
        return e / (a * (1 + e) ** 2)
    if kind == "f4":
        return np.exp(-(x**2) / (2 * a)) / np.sqrt(2 * np.pi * a)
    if kind == "atan":
        return (a / 2) / (1 + (np.pi / 2 * a * x) ** 2)
    raise ValueError(f"unknown surrogate kind {kind!r}")
