"""Surrogate-gradient training for the spiking network (torch).

Training unrolls the network over T timesteps, re-encoding the image
with fresh Bernoulli draws each step, and backpropagates through the
unrolled graph with an arctan surrogate standing in for the derivative
of the spike step.  The loss is mean squared error between the mean
output firing rate and the one-hot label.  The reset is detached: the
gradient flows through the kept membrane only, never through the
branch choice.

Only this module imports torch; the trained weights come back as the
plain numpy SnnModel the rest of the package consumes.
"""

from __future__ import annotations

import math
import time

import numpy as np
import torch

from .snn import NeuronConfig, SnnModel, evaluate
from .mnist import normalize


class TrainingError(Exception):
    """Divergence or invalid configuration during training."""


class _AtanSpike(torch.autograd.Function):
    """Heaviside forward, arctan-family derivative backward."""

    @staticmethod
    def forward(ctx, x, alpha):
        ctx.save_for_backward(x)
        ctx.alpha = alpha
        return (x >= 0).to(x)

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        alpha = ctx.alpha
        return grad_out * (alpha / 2) / (1 + (math.pi / 2 * alpha * x) ** 2), None


def _layer_step(v, i, vth, vreset, alpha):
    """charge -> fire -> detached reset for one layer, torch tensors."""
    h = v + i
    s = _AtanSpike.apply(h - vth, alpha)
    keep = torch.clamp(h, min=vreset)
    v_next = torch.where(s.detach().bool(), torch.full_like(h, vreset), keep)
    return s, v_next


def train_snn(
    train_images: np.ndarray,
    train_labels: np.ndarray,
    test_images: np.ndarray | None = None,
    test_labels: np.ndarray | None = None,
    T: int = 10,
    epochs: int = 10,
    hidden: int = 30,
    n_out: int = 10,
    lr: float = 0.1,
    momentum: float = 0.9,
    batch_size: int = 64,
    surrogate_alpha: float = 2.0,
    seed: int = 0,
    cfg: NeuronConfig | None = None,
    log=None,
) -> tuple[SnnModel, dict]:
    """Train a dense spiking classifier; returns (model, run info).

    Images are raw uint8 (n, 28, 28); normalization happens here.  The
    run is deterministic for a fixed seed (single CPU process).  The
    info dict records wall time, hyperparameters, per-epoch losses and,
    when a test split is given, the final numpy-evaluator accuracy.
    """
    if T < 1 or epochs < 1:
        raise TrainingError(f"T={T} and epochs={epochs} must be at least 1")
    cfg = cfg or NeuronConfig()
    if cfg.kind != "IF":
        raise TrainingError("training supports the IF neuron only")

    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    x = torch.from_numpy(normalize(train_images)).float()
    y = torch.from_numpy(np.asarray(train_labels, dtype=np.int64))
    n_in = x.shape[1]
    onehot = torch.eye(n_out)[y]

    w1 = torch.empty(n_in, hidden).uniform_(
        -1 / math.sqrt(n_in), 1 / math.sqrt(n_in), generator=gen
    ).requires_grad_()
    w2 = torch.empty(hidden, n_out).uniform_(
        -1 / math.sqrt(hidden), 1 / math.sqrt(hidden), generator=gen
    ).requires_grad_()
    opt = torch.optim.SGD([w1, w2], lr=lr, momentum=momentum)
    vth, vreset = cfg.v_threshold, cfg.v_reset

    t0 = time.monotonic()
    epoch_losses = []
    for epoch in range(epochs):
        order = torch.randperm(len(x), generator=gen)
        running, batches = 0.0, 0
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            img, target = x[idx], onehot[idx]
            v1 = torch.zeros(len(idx), hidden)
            v2 = torch.zeros(len(idx), n_out)
            rate = torch.zeros(len(idx), n_out)
            for _ in range(T):
                enc = (img > torch.rand(img.shape, generator=gen)).float()
                s1, v1 = _layer_step(v1, enc @ w1, vth, vreset, surrogate_alpha)
                s2, v2 = _layer_step(v2, s1 @ w2, vth, vreset, surrogate_alpha)
                rate = rate + s2
            loss = torch.mean((rate / T - target) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            finite_w = bool(torch.isfinite(w1).all() and torch.isfinite(w2).all())
            if not torch.isfinite(loss) or not finite_w:
                what = "loss" if not torch.isfinite(loss) else "weights"
                raise TrainingError(
                    f"training diverged at epoch {epoch}, batch {batches}: "
                    f"non-finite {what} (loss={loss.item():.4g}, "
                    f"|w1|max={w1.abs().max().item():.4g}, "
                    f"|w2|max={w2.abs().max().item():.4g})"
                )
            running += loss.item()
            batches += 1
        epoch_losses.append(running / batches)
        if log:
            log(f"epoch {epoch + 1}/{epochs}: loss {epoch_losses[-1]:.5f}")

    model = SnnModel(
        w1=w1.detach().numpy().astype(np.float64),
        w2=w2.detach().numpy().astype(np.float64),
        cfg=cfg,
    )
    info = {
        "train_seconds": round(time.monotonic() - t0, 3),
        "epochs": epochs,
        "T": T,
        "seed": seed,
        "lr": lr,
        "momentum": momentum,
        "batch_size": batch_size,
        "surrogate": {"kind": "atan", "alpha": surrogate_alpha},
        "epoch_losses": [round(l, 6) for l in epoch_losses],
    }
    if test_images is not None and test_labels is not None:
        acc = evaluate(model, normalize(test_images), test_labels, T=T, seed=seed)
        info["test_accuracy"] = round(acc, 4)
        if log:
            log(f"test accuracy at T={T}: {acc:.4f}")
    return model, info
