"""Command-line workflow: train, convert, keygen, encrypt, infer, evaluate, sweep.

The verbs mirror the deployment roles.  A client trains and converts a
model, generates keys, and encrypts images; a server runs `infer` on
the ciphertext bundle with only the public evaluation keys; the client
then runs `evaluate` with the secret key to decrypt the scores and
assemble the run report.  Every artifact records the digests of its
inputs, and each verb compares those before computing anything, so a
mismatched key, model, or bundle is refused up front.

Exit codes: 0 success, 2 configuration error, 3 data or integrity
error, 4 noise-budget refusal.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from statistics import median

import numpy as np

from . import mnist, snn
from .bootstrap import BootstrapCounter, bootstrap_keygen
from .discretize import DiscretizationError, choose_message_space, convert
from .engine import (
    MODE_ENCODE_FIRST,
    MODES,
    FheDisnnModel,
    bootstrap_count,
    encode_and_encrypt,
    encode_trains,
    encrypted_scores,
    reference_run,
)
from .lwe import (
    NoiseBudgetError,
    batch_concat,
    batch_decrypt,
    batch_phase,
    lwe_keygen,
    ring_keygen,
)
from .mnist import DatasetError
from .params import ParameterError, get_profile, list_profiles
from .serialize import (
    IntegrityError,
    load_bootstrap_keys,
    load_disnn_model,
    load_encrypted_images,
    load_scores,
    load_secret_key,
    load_snn_model,
    require_lineage,
    save_bootstrap_keys,
    save_disnn_model,
    save_encrypted_images,
    save_scores,
    save_secret_key,
    save_snn_model,
    seed_commitment,
)

# Empirical membrane envelope of rate-encoded image workloads: peak |H|
# stays well under 50 tau, so the default message space is sized from
# that; conversion still validates it against the calibrated bounds and
# refuses when a model genuinely needs more.
ENVELOPE_FACTOR = 50


def _say(msg: str) -> None:
    print(msg)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _load_split(args, split: str):
    images, labels = mnist.load_split(split, mnist.data_root(args.data_dir))
    return mnist.normalize(images), labels


# -- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    from .snn_train import train_snn

    root = mnist.data_root(args.data_dir)
    tr_images, tr_labels = mnist.load_split("train", root)
    te_images, te_labels = mnist.load_split("test", root)
    log = _say if args.verbose else None
    model, info = train_snn(
        tr_images, tr_labels, te_images, te_labels,
        T=args.T, epochs=args.epochs, hidden=args.hidden, lr=args.lr,
        momentum=args.momentum, batch_size=args.batch_size, seed=args.seed,
        log=log,
    )
    # Wall time stays out of the checkpoint so a fixed seed writes
    # byte-identical files.
    seconds = info.pop("train_seconds")
    digest = save_snn_model(args.out, model, meta=info)
    _say(f"test accuracy {info['test_accuracy']:.4f} at T={args.T} "
         f"({seconds:.1f}s)")
    _say(f"wrote {args.out} ({digest[:16]})")
    return 0


# -- convert ------------------------------------------------------------------


def cmd_convert(args) -> int:
    if args.tau <= 0:
        raise DiscretizationError(f"tau must be positive, got {args.tau}")
    model, _, snn_digest = load_snn_model(args.model)
    calib = None
    if args.calib > 0:
        images, _ = _load_split(args, args.calib_split)
        calib = images[: args.calib]
    p = args.p
    if p is None and calib is not None:
        # Default to the workload envelope; the calibrated bounds keep
        # the final say through the admissibility check below.
        p = choose_message_space(int(np.ceil(ENVELOPE_FACTOR * args.tau)))
    d = convert(
        model, tau=args.tau, p=p, calib_images=calib,
        T=args.T, seed=args.seed, margin=args.margin,
    )
    alpha = d.alpha
    beta = -alpha + d.v_threshold
    digest = save_disnn_model(
        args.out, d,
        lineage={"snn": snn_digest},
        meta={"tau": args.tau, "calib_images": 0 if calib is None else len(calib)},
    )
    _say(f"alpha {alpha}  beta {beta}  p {d.p}  threshold {d.v_threshold}")
    _say(f"wrote {args.out} ({digest[:16]})")
    return 0


# -- keygen ---------------------------------------------------------------------


def cmd_keygen(args) -> int:
    prof = get_profile(args.profile)
    rng = np.random.default_rng(args.seed)
    sk = lwe_keygen(prof, rng)
    rk = ring_keygen(prof, rng)
    keys = bootstrap_keygen(prof, sk, rk, rng)
    sk_digest = save_secret_key(args.secret_key, sk, prof)
    bk_digest = save_bootstrap_keys(args.public_keys, keys, sk_digest)
    _say(f"profile {prof.name} (n={prof.n}, N={prof.N}, q={prof.q}, p={prof.p})")
    _say(f"wrote {args.secret_key} ({sk_digest[:16]}) [keep private]")
    _say(f"wrote {args.public_keys} ({bk_digest[:16]})")
    return 0


# -- encrypt --------------------------------------------------------------------


def cmd_encrypt(args) -> int:
    sk, sk_art = load_secret_key(args.secret_key)
    prof = get_profile(sk_art.params["profile"])
    images, _ = _load_split(args, args.split)
    stop = args.start + args.count
    if stop > len(images):
        raise DatasetError(
            f"requested images {args.start}..{stop - 1} but the {args.split} "
            f"split has {len(images)}"
        )
    lineage = {"secret_key": sk_art.digest}
    if args.model:
        _, _, model_digest = load_disnn_model(args.model)
        lineage["model"] = model_digest
    inputs = encode_and_encrypt(
        images[args.start : stop], args.T, sk, prof,
        mode=args.mode, seed=args.seed, start_index=args.start,
    )
    digest = save_encrypted_images(
        args.out, inputs, prof.q, prof.p, prof.sigma_lwe,
        seed_commitment(args.seed, args.start),
        lineage=lineage, start_index=args.start,
    )
    _say(
        f"encrypted {args.count} images ({args.split}[{args.start}:{stop}]) "
        f"for T={args.T}, mode {args.mode}"
    )
    _say(f"wrote {args.out} ({digest[:16]})")
    return 0


# -- infer ----------------------------------------------------------------------


def cmd_infer(args) -> int:
    """Server role: public keys and ciphertexts only, never the secret."""
    keys, bk_art = load_bootstrap_keys(args.public_keys)
    dmodel, _, model_digest = load_disnn_model(args.model)
    inputs, bundle = load_encrypted_images(args.bundle)
    if "model" in bundle.lineage:
        require_lineage(bundle, "model", model_digest, "infer")
    sk_of_bundle = bundle.lineage.get("secret_key")
    sk_of_keys = bk_art.lineage.get("secret_key")
    if sk_of_bundle and sk_of_keys and sk_of_bundle != sk_of_keys:
        raise IntegrityError(
            "bundle was encrypted under a different secret key than the "
            "one these evaluation keys derive from; refusing to infer"
        )
    if bundle.params["p"] != keys.profile.p or bundle.params["q"] != keys.profile.q:
        raise IntegrityError(
            f"bundle was encrypted for p={bundle.params['p']}, "
            f"q={bundle.params['q']} but the keys use p={keys.profile.p}, "
            f"q={keys.profile.q}"
        )
    model = FheDisnnModel.from_disnn(dmodel, mode=bundle.params["mode"],
                                     p=dmodel.p)
    n, k, m = model.dims
    I, T = inputs.n_images, inputs.T
    log = _say if args.verbose else None
    group = max(1, args.group_size)
    ranges = [(lo, min(lo + group, I)) for lo in range(0, I, group)]

    def run(span):
        # Each group gets its own tally; merged after the pool joins.
        lo, hi = span
        part_counter = BootstrapCounter()
        marks = []

        def mark(msg):
            marks.append(time.monotonic())
            if log:
                log(f"images {lo}..{hi - 1}: {msg}")

        t0 = time.monotonic()
        part = encrypted_scores(model, inputs.subset(lo, hi), keys,
                                part_counter, log=mark)
        spans = [b - a for a, b in zip([t0, *marks], marks)]
        return part, spans, part_counter

    t_all = time.monotonic()
    step_seconds: list[float] = []
    parts = []
    counter = BootstrapCounter()
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(run, ranges))
    else:
        results = [run(span) for span in ranges]
    for part, spans, part_counter in results:
        parts.append(part)
        step_seconds.extend(spans)
        for phase, count in part_counter.by_phase.items():
            counter.add(phase, count)
    seconds = time.monotonic() - t_all

    scores = batch_concat(parts)
    expected = bootstrap_count(n, k, m, T, model.mode) * I
    if counter.bootstraps != expected:
        raise RuntimeError(
            f"bootstrap tally {counter.bootstraps} does not match the "
            f"closed form {expected}; the pipeline is broken"
        )
    digest = save_scores(
        args.out, scores, I, m, model.p,
        lineage={
            "bundle": bundle.digest,
            "model": model_digest,
            "public_keys": bk_art.digest,
            "secret_key": bundle.lineage.get("secret_key", ""),
        },
        meta={
            "T": T,
            "mode": model.mode,
            "seconds": round(seconds, 3),
            "seconds_per_step_median": round(median(step_seconds), 4),
            "seconds_per_image": round(seconds / I, 3),
            "bootstraps": counter.bootstraps,
            "bootstraps_by_phase": dict(counter.by_phase),
            "workers": args.workers,
        },
    )
    _say(
        f"classified {I} images in {seconds:.1f}s "
        f"({seconds / I:.1f}s/image, median step "
        f"{median(step_seconds):.2f}s, {counter.bootstraps} bootstraps)"
    )
    _say(f"wrote {args.out} ({digest[:16]})")
    return 0


# -- evaluate ---------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    """Client role: decrypt scores, compare with the plaintext twin."""
    scores, score_art = load_scores(args.scores)
    sk, sk_art = load_secret_key(args.secret_key)
    _, bundle = load_encrypted_images(args.bundle)
    dmodel, _, model_digest = load_disnn_model(args.model)
    require_lineage(score_art, "bundle", bundle.digest, "evaluate")
    require_lineage(score_art, "model", model_digest, "evaluate")
    require_lineage(bundle, "secret_key", sk_art.digest, "evaluate")
    start = bundle.params["start_index"]
    if bundle.params["seed_commitment"] != seed_commitment(args.seed, start):
        raise IntegrityError(
            "bundle was encoded with a different seed than the one presented"
        )

    pp = score_art.params
    I, m, p = pp["n_images"], pp["classes"], pp["p"]
    rows = batch_decrypt(sk, scores, p).reshape(I, m)
    predicted = np.argmax(rows, axis=1)

    images, truth = _load_split(args, args.split)
    images = images[start : start + I]
    truth = truth[start : start + I]
    trains = encode_trains(images, pp["T"], args.seed, start_index=start)
    ref = reference_run(dmodel.w1, dmodel.w2, dmodel.v_threshold, trains)
    agreement = (predicted == ref["labels"]).tolist()

    delta = scores.q // p
    err = (batch_phase(sk, scores) + delta // 2) % delta - delta // 2
    report = {
        "n_images": I,
        "T": pp["T"],
        "mode": pp["mode"],
        "p": p,
        "labels": predicted.tolist(),
        "reference_labels": ref["labels"].tolist(),
        "agreement": agreement,
        "agreement_fraction": float(np.mean(agreement)),
        "accuracy": float(np.mean(predicted == truth)),
        "reference_accuracy": float(np.mean(ref["labels"] == truth)),
        "seconds": pp.get("seconds"),
        "seconds_per_step_median": pp.get("seconds_per_step_median"),
        "seconds_per_image": pp.get("seconds_per_image"),
        "bootstraps": pp.get("bootstraps"),
        "bootstraps_by_phase": pp.get("bootstraps_by_phase"),
        "noise": {
            "budget": scores.budget,
            "limit": scores.q / (2 * p),
            "measured_rms": float(np.sqrt(np.mean(err.astype(np.float64) ** 2))),
            "measured_max": int(np.abs(err).max()),
        },
        "lineage": dict(score_art.lineage),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1))
        _say(f"wrote {args.out}")
    _say(
        f"accuracy {report['accuracy']:.4f} "
        f"(plaintext twin {report['reference_accuracy']:.4f}), "
        f"agreement {report['agreement_fraction']:.4f} over {I} images"
    )
    if report["seconds_per_step_median"] is not None:
        _say(
            f"median step {report['seconds_per_step_median']:.2f}s, "
            f"{report['seconds_per_image']:.1f}s/image, "
            f"{report['bootstraps']} bootstraps"
        )
    return 0


# -- sweep ------------------------------------------------------------------------


def cmd_sweep(args) -> int:
    """Accuracy sweeps of the plaintext models, repeated over seeds.

    CSV schema: one row per (kind, value, repetition, metric); the
    summary rows use mean / min / max in the repetition column.
    """
    grid = [v for v in args.grid.split(",") if v != ""]
    if not grid:
        _warn("empty sweep grid, nothing to do")
        return 0
    model, _, _ = load_snn_model(args.model)
    images, labels = _load_split(args, args.split)
    images, labels = images[: args.samples], labels[: args.samples]

    rows = []
    for raw in grid:
        if args.kind == "T":
            value = int(raw)
            nets = [(model, value)]
        else:
            value = float(raw)
            if value <= 0:
                raise DiscretizationError(f"tau must be positive, got {value}")
            nets = [(convert(model, tau=value).as_snn(), args.T)]
        accs = []
        for rep in range(args.reps):
            net, T = nets[0]
            acc = snn.evaluate(net, images, labels, T=T, seed=args.seed + rep)
            accs.append(acc)
            rows.append([args.kind, value, rep, "accuracy", f"{acc:.4f}"])
            _say(f"{args.kind}={value} rep {rep}: accuracy {acc:.4f}")
        for name, stat in (
            ("mean", float(np.mean(accs))),
            ("min", float(np.min(accs))),
            ("max", float(np.max(accs))),
        ):
            rows.append([args.kind, value, name, "accuracy", f"{stat:.4f}"])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "value", "repetition", "metric", "result"])
        writer.writerows(rows)
    _say(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# -- argument plumbing --------------------------------------------------------------


def _add_data_dir(sp) -> None:
    sp.add_argument(
        "--data-dir", default=None,
        help="dataset root (default: the SPIKEFHE_DATA_DIR environment variable)",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spikefhe",
        description="Encrypted spiking-network inference workflow",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", help="train the plaintext spiking classifier")
    _add_data_dir(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--T", type=int, default=10)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--hidden", type=int, default=30)
    sp.add_argument("--lr", type=float, default=0.1)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("convert", help="discretize a trained model")
    _add_data_dir(sp)
    sp.add_argument("--model", required=True, help="snn checkpoint (json)")
    sp.add_argument("--tau", type=float, required=True)
    sp.add_argument("--p", type=int, default=None,
                    help="message space (default: sized from tau)")
    sp.add_argument("--calib", type=int, default=500,
                    help="calibration images for the membrane bounds (0: analytic)")
    sp.add_argument("--calib-split", default="train")
    sp.add_argument("--T", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--margin", type=float, default=1.02)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("keygen", help="generate secret and evaluation keys")
    sp.add_argument("--profile", required=True, choices=list_profiles())
    sp.add_argument("--seed", type=int, default=None,
                    help="rng seed (default: fresh entropy)")
    sp.add_argument("--secret-key", required=True)
    sp.add_argument("--public-keys", required=True)
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("encrypt", help="encode and encrypt dataset images")
    _add_data_dir(sp)
    sp.add_argument("--secret-key", required=True)
    sp.add_argument("--model", default=None,
                    help="disnn checkpoint to bind into the bundle lineage")
    sp.add_argument("--split", default="test", choices=("train", "test"))
    sp.add_argument("--start", type=int, default=0)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--T", type=int, default=20)
    sp.add_argument("--mode", default=MODE_ENCODE_FIRST, choices=MODES)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encrypt)

    sp = sub.add_parser("infer", help="run encrypted inference (server role)")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--public-keys", required=True)
    sp.add_argument("--group-size", type=int, default=100,
                    help="images evaluated in lockstep")
    sp.add_argument("--workers", type=int, default=1,
                    help="parallel image groups (threads)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("evaluate", help="decrypt scores and report (client role)")
    _add_data_dir(sp)
    sp.add_argument("--scores", required=True)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--secret-key", required=True)
    sp.add_argument("--split", default="test", choices=("train", "test"))
    sp.add_argument("--seed", type=int, default=0,
                    help="encoding seed the bundle was built with")
    sp.add_argument("--out", default=None, help="write the report as json")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="accuracy sweeps over T or tau")
    _add_data_dir(sp)
    sp.add_argument("--kind", required=True, choices=("T", "tau"))
    sp.add_argument("--model", required=True, help="snn checkpoint (json)")
    sp.add_argument("--grid", required=True, help="comma-separated values")
    sp.add_argument("--reps", type=int, default=5)
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--T", type=int, default=10,
                    help="simulation steps for tau sweeps")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--split", default="test", choices=("train", "test"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NoiseBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DatasetError, IntegrityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DiscretizationError, ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
