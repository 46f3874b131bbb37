"""Integer discretization of trained spiking networks.

A trained float model becomes an integer one by scaling every weight
and the threshold by a factor tau and rounding to nearest.  Because
spikes are already 0/1, that rounding is the only source of error: per
multisum it is bounded by half the number of active input spikes,
independent of tau, and in expectation it is a quarter of the mean
spike count.  Both facts are auditable here.

The integer model's membrane range [beta, alpha] decides how large a
message space the encrypted evaluator needs: every intermediate value
must stay inside one half-circle of Z_p.  Bounds come in two flavors:
an analytic worst case (all inputs spiking at once) and an empirical
one measured by running the integer network over calibration images.
The worst case is loose by roughly the ratio of peak to total input
activity, so message-space selection uses the calibrated bound with a
safety margin; both are stored on the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .snn import NeuronConfig, SnnModel, encode_rng, forward_timestep, poisson_encode


class DiscretizationError(Exception):
    """Inadmissible (tau, p) combination or unsupported source model."""


def discret(x, tau: float):
    """Scale by tau and round to nearest, ties away from zero.

    Scalar in, int out; array in, int64 array out.
    """
    if tau <= 0:
        raise DiscretizationError(f"tau must be positive, got {tau}")
    arr = np.asarray(x, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise DiscretizationError("cannot discretize non-finite values")
    y = arr * tau
    rounded = np.sign(y) * np.floor(np.abs(y) + 0.5)
    out = rounded.astype(np.int64)
    return int(out) if np.isscalar(x) or out.ndim == 0 else out


@dataclass(frozen=True)
class LayerBounds:
    """Membrane range of one layer of the integer network.

    alpha bounds |H|; beta = -alpha + v_threshold is the exact lower
    end of the range when the reset potential is zero.  The analytic
    value assumes every input spikes each step; the empirical one is
    the observed extreme over a calibration run, and alpha is whichever
    of the two the selection policy picked.
    """

    alpha: int
    beta: int
    alpha_analytic: int
    alpha_empirical: int | None = None


@dataclass
class DiSnnModel:
    """Integer twin of a trained SnnModel.

    Weights and threshold live at scale tau; the reset potential is 0.
    p is the message-space size the encrypted evaluator will use; both
    layers' membranes provably fit in [-p/2, p/2).

    w1_half / w2_half are the same float weights discretized at tau/2.
    The encrypted evaluator's spike ciphertexts carry the value 2, so it
    runs on the half-scale weights to land at the intended scale.
    Rounding at tau/2 is not the same as halving the tau-scale integers:
    every integer halving rule biases odd weights and measurably breaks
    parity with this network, so both scales are fixed at conversion
    while the floats are still in hand.
    """

    w1: np.ndarray
    w2: np.ndarray
    w1_half: np.ndarray
    w2_half: np.ndarray
    tau: float
    p: int
    v_threshold: int
    bounds: tuple[LayerBounds, LayerBounds]

    def __post_init__(self) -> None:
        self.w1 = np.asarray(self.w1, dtype=np.int64)
        self.w2 = np.asarray(self.w2, dtype=np.int64)
        self.w1_half = np.asarray(self.w1_half, dtype=np.int64)
        self.w2_half = np.asarray(self.w2_half, dtype=np.int64)
        for w, half in ((self.w1, self.w1_half), (self.w2, self.w2_half)):
            if half.shape != w.shape:
                raise DiscretizationError(
                    f"halved weights shaped {half.shape} do not match {w.shape}"
                )
            # Both scales round the same float, so they differ by <= 1.
            if np.abs(2 * half - w).max() > 1:
                raise DiscretizationError(
                    "halved weights inconsistent with the tau-scale weights; "
                    "they must be rounded from the same floats at tau/2"
                )
        if self.v_threshold <= 0:
            raise DiscretizationError(
                f"integer threshold must be positive, got {self.v_threshold} "
                "(tau too small for this model)"
            )
        if self.p & (self.p - 1) or self.p < 4:
            raise DiscretizationError(f"p must be a power of two >= 4, got {self.p}")
        for b in self.bounds:
            if b.beta != -b.alpha + self.v_threshold:
                raise DiscretizationError(
                    f"bounds corrupted: beta {b.beta} != -alpha + v_threshold "
                    f"{-b.alpha + self.v_threshold}"
                )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    @property
    def alpha(self) -> int:
        """Largest membrane magnitude across layers; must stay below p/2."""
        return max(b.alpha for b in self.bounds)

    def as_snn(self) -> SnnModel:
        """View as a float model for the shared forward/evaluate code.

        Integer weights and threshold are exact in float64, so the
        float dynamics reproduce the integer ones bit for bit.
        """
        cfg = NeuronConfig(
            kind="IF", v_threshold=float(self.v_threshold), v_reset=0.0
        )
        return SnnModel(w1=self.w1, w2=self.w2, cfg=cfg)


# -- error theory ------------------------------------------------------------


def error_bound(spike_count: float) -> float:
    """Worst-case |integer multisum - tau * float multisum|.

    Each active synapse contributes at most half a unit of rounding
    error, so the bound is half the input spike count, whatever tau is.
    """
    if spike_count < 0:
        raise ValueError("spike count cannot be negative")
    return spike_count / 2


def expected_error_mc(lam: float, trials: int, rng: np.random.Generator) -> float:
    """Monte-Carlo mean of the accumulated absolute rounding error.

    Draws a Poisson(lam) spike count per trial and a uniform
    [-1/2, 1/2] residual per spike; returns the average of
    sum_j |residual_j|, whose expectation is lam / 4.
    """
    if lam <= 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if trials < 10_000:
        raise ValueError("need at least 1e4 trials for a stable estimate")
    counts = rng.poisson(lam, trials)
    residuals = np.abs(rng.uniform(-0.5, 0.5, int(counts.sum())))
    totals = np.add.reduceat(
        np.concatenate([residuals, [0.0]]),
        np.concatenate([[0], np.cumsum(counts)[:-1]]),
    )
    totals[counts == 0] = 0.0
    return float(totals.mean())


# -- range bounds -------------------------------------------------------------


def _empirical_extremes(
    w1: np.ndarray,
    w2: np.ndarray,
    vth: int,
    images: np.ndarray,
    T: int,
    seed: int,
    batch_size: int = 256,
) -> tuple[int, int]:
    """Max |H| per layer over an integer-network run on real images."""
    cfg = NeuronConfig(kind="IF", v_threshold=float(vth), v_reset=0.0)
    k, m = w1.shape[1], w2.shape[1]
    peak1 = peak2 = 0
    for start in range(0, len(images), batch_size):
        block = images[start : start + batch_size]
        trains = np.stack(
            [
                poisson_encode(img, T, encode_rng(seed, start + j))
                for j, img in enumerate(block)
            ]
        )
        v1 = np.zeros((len(block), k))
        v2 = np.zeros((len(block), m))
        for t in range(T):
            h1 = v1 + trains[:, t] @ w1
            s1 = (h1 - vth >= 0).astype(np.float64)
            v1 = np.where(h1 >= vth, 0.0, np.maximum(h1, 0.0))
            h2 = v2 + s1 @ w2
            v2 = np.where(h2 >= vth, 0.0, np.maximum(h2, 0.0))
            peak1 = max(peak1, int(np.abs(h1).max()))
            peak2 = max(peak2, int(np.abs(h2).max()))
    return peak1, peak2


def compute_bounds(
    model: SnnModel,
    tau: float,
    images: np.ndarray | None = None,
    T: int = 10,
    seed: int = 0,
    margin: float = 1.02,
) -> tuple[LayerBounds, LayerBounds]:
    """Per-layer membrane bounds of the integer network at scale tau.

    The analytic bound charges every input synapse at once:
    tau * (v_threshold + max|w| * fan_in).  With calibration images the
    empirical peak |H| is measured instead and selected after widening
    by `margin`; the analytic value is kept alongside.  beta is derived
    from alpha exactly.
    """
    w1, w2 = discret(model.w1, tau), discret(model.w2, tau)
    vth = discret(model.cfg.v_threshold, tau)
    layers = []
    empirical: tuple[int, int] | None = None
    if images is not None:
        empirical = _empirical_extremes(w1, w2, vth, images, T, seed)
    for li, w in enumerate((model.w1, model.w2)):
        analytic = math.ceil(
            tau * (model.cfg.v_threshold + np.abs(w).max() * w.shape[0])
        )
        if empirical is None:
            alpha = analytic
            emp = None
        else:
            emp = empirical[li]
            alpha = min(math.ceil(emp * margin), analytic)
        layers.append(
            LayerBounds(
                alpha=alpha,
                beta=-alpha + vth,
                alpha_analytic=analytic,
                alpha_empirical=emp,
            )
        )
    return layers[0], layers[1]


def choose_message_space(alpha: int, minimum: int = 4) -> int:
    """Smallest power-of-two p whose half-circle strictly covers alpha."""
    if alpha <= 0:
        raise DiscretizationError(f"alpha must be positive, got {alpha}")
    p = 1 << (2 * alpha).bit_length()
    return max(p, minimum)


# -- conversion ----------------------------------------------------------------


def convert(
    model: SnnModel,
    tau: float,
    p: int | None = None,
    calib_images: np.ndarray | None = None,
    T: int = 10,
    seed: int = 0,
    margin: float = 1.02,
) -> DiSnnModel:
    """Discretize a trained model at scale tau and fix its message space.

    When p is omitted the smallest admissible power of two is chosen
    from the computed bounds.  When given, it is validated: every
    membrane must fit strictly inside [-p/2, p/2), otherwise the error
    names the smallest p that would work.
    """
    if model.cfg.kind != "IF":
        raise DiscretizationError(
            "only IF models convert to the integer form; the LIF leak "
            "divides by omega, which has no integer counterpart"
        )
    if model.cfg.v_reset != 0.0:
        raise DiscretizationError("conversion assumes v_reset = 0")
    bounds = compute_bounds(model, tau, calib_images, T=T, seed=seed, margin=margin)
    alpha = max(b.alpha for b in bounds)
    if p is None:
        p = choose_message_space(alpha)
    elif alpha >= p // 2:
        raise DiscretizationError(
            f"membranes reach +-{alpha} but p={p} covers only "
            f"(-{p // 2}, {p // 2}); smallest admissible p is "
            f"{choose_message_space(alpha)}"
        )
    w1_hat, w2_hat = discret(model.w1, tau), discret(model.w2, tau)
    for w_hat, w in ((w1_hat, model.w1), (w2_hat, model.w2)):
        assert np.abs(w_hat).max() <= math.ceil(tau * np.abs(w).max()) + 1
    return DiSnnModel(
        w1=w1_hat,
        w2=w2_hat,
        w1_half=discret(model.w1, tau / 2),
        w2_half=discret(model.w2, tau / 2),
        tau=tau,
        p=p,
        v_threshold=discret(model.cfg.v_threshold, tau),
        bounds=bounds,
    )


# -- dual-run audit -------------------------------------------------------------


def audit_multisum_error(
    model: SnnModel,
    dmodel: DiSnnModel,
    images: np.ndarray,
    T: int = 10,
    seed: int = 0,
    batch_size: int = 256,
) -> dict:
    """Check the rounding-error bound on a real run, every neuron and step.

    Drives the integer network over the images; at each step each
    layer's integer multisum is compared with tau times the float
    multisum of the original weights on the same input spikes.  The
    absolute difference must stay within half the input spike count.
    Returns counts and extremes; violations would indicate a broken
    rounding rule, not statistical bad luck.
    """
    tau = dmodel.tau
    vth = dmodel.v_threshold
    k, m = dmodel.dims[1], dmodel.dims[2]
    report = {"checks": 0, "violations": 0, "max_error": 0.0, "max_bound": 0.0}
    tol = 1e-9
    for start in range(0, len(images), batch_size):
        block = images[start : start + batch_size]
        trains = np.stack(
            [
                poisson_encode(img, T, encode_rng(seed, start + j))
                for j, img in enumerate(block)
            ]
        )
        v1 = np.zeros((len(block), k))
        v2 = np.zeros((len(block), m))
        for t in range(T):
            s_in = trains[:, t]
            # Layer 1: integer vs scaled-float currents on the input spikes.
            i_hat1 = s_in @ dmodel.w1
            err1 = np.abs(i_hat1 - tau * (s_in @ model.w1))
            bound1 = s_in.sum(axis=1) / 2
            report["checks"] += err1.size
            report["violations"] += int((err1 > bound1[:, None] + tol).sum())
            report["max_error"] = max(report["max_error"], float(err1.max()))
            report["max_bound"] = max(report["max_bound"], float(bound1.max()))
            h1 = v1 + i_hat1
            s1 = (h1 - vth >= 0).astype(np.float64)
            v1 = np.where(h1 >= vth, 0.0, np.maximum(h1, 0.0))
            # Layer 2: same comparison on the hidden spikes.
            i_hat2 = s1 @ dmodel.w2
            err2 = np.abs(i_hat2 - tau * (s1 @ model.w2))
            bound2 = s1.sum(axis=1) / 2
            report["checks"] += err2.size
            report["violations"] += int((err2 > bound2[:, None] + tol).sum())
            report["max_error"] = max(report["max_error"], float(err2.max()))
            h2 = v2 + i_hat2
            v2 = np.where(h2 >= vth, 0.0, np.maximum(h2, 0.0))
    return report
