"""Artifact files: models, keys, ciphertext bundles, and their lineage.

Every binary artifact uses one container: a magic tag, a version byte, a
JSON header describing the payload arrays, the raw array bytes, and a
trailing sha256 over everything before it.  The digest doubles as the
artifact's identity: artifacts record the digests of the inputs they
were derived from, and consumers compare those before doing any work,
so a key swapped mid-pipeline or a truncated ciphertext file is refused
up front instead of producing silent garbage.

Models are JSON documents rather than binary: they are small, diffable,
and hand-inspectable, and float64 weights survive JSON exactly (Python
prints shortest-round-trip decimals).  Their digest is computed over
the canonical dump of everything except the digest field itself.

Ciphertext and key arrays are packed to the smallest unsigned dtype the
modulus allows (uint16 at q = 2048), which quarters files compared to
the in-memory int64.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discretize import DiSnnModel, LayerBounds
from .engine import MODES, EncodedInput
from .lwe import LweBatch, LweKey
from .snn import NeuronConfig, SnnModel

MAGIC = b"SPKF"
VERSION = 1


class IntegrityError(Exception):
    """Corrupt, tampered, or mismatched artifact."""


# -- binary container --------------------------------------------------------


def _pack_dtype(modulus: int) -> np.dtype:
    """Smallest unsigned dtype that holds values in [0, modulus)."""
    for dt in (np.uint8, np.uint16, np.uint32, np.uint64):
        if modulus - 1 <= np.iinfo(dt).max:
            return np.dtype(dt)
    raise ValueError(f"modulus {modulus} too large")


def save_artifact(
    path: str | Path,
    kind: str,
    params: dict,
    arrays: dict[str, np.ndarray],
    lineage: dict[str, str] | None = None,
) -> str:
    """Write one container file; returns its digest (the lineage id)."""
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        specs.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)}
        )
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"kind": kind, "params": params, "lineage": lineage or {}, "arrays": specs},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    body = MAGIC + struct.pack("<BI", VERSION, len(header)) + header + b"".join(blobs)
    digest = hashlib.sha256(body).hexdigest()
    Path(path).write_bytes(body + bytes.fromhex(digest))
    return digest


@dataclass
class Artifact:
    kind: str
    params: dict
    arrays: dict[str, np.ndarray]
    lineage: dict[str, str]
    digest: str


def load_artifact(path: str | Path, expect_kind: str | None = None) -> Artifact:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 5 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not an artifact file")
    body, stored = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != stored:
        raise IntegrityError(f"{path}: checksum mismatch, file corrupt or tampered")
    version, hlen = struct.unpack_from("<BI", body, len(MAGIC))
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported container version {version}")
    off = len(MAGIC) + 5
    header = json.loads(body[off : off + hlen])
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        end = off + count * dt.itemsize
        if end > len(body):
            raise IntegrityError(f"{path}: truncated array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(body[off:end], dtype=dt).reshape(
            spec["shape"]
        )
        off = end
    if off != len(body):
        raise IntegrityError(f"{path}: trailing bytes after arrays")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise IntegrityError(
            f"{path}: expected a {expect_kind!r} artifact, found {header['kind']!r}"
        )
    return Artifact(
        kind=header["kind"],
        params=header["params"],
        arrays=arrays,
        lineage=header["lineage"],
        digest=hashlib.sha256(body).hexdigest(),
    )


def require_lineage(artifact: Artifact, name: str, digest: str, what: str) -> None:
    """Refuse before compute when an input is not the recorded one."""
    recorded = artifact.lineage.get(name)
    if recorded != digest:
        raise IntegrityError(
            f"{what}: lineage mismatch for {name!r} "
            f"(recorded {recorded}, presented {digest})"
        )


# -- JSON model checkpoints ---------------------------------------------------


def _doc_digest(doc: dict) -> str:
    clean = {k: v for k, v in doc.items() if k != "digest"}
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_doc(path: str | Path, doc: dict) -> str:
    doc["digest"] = _doc_digest(doc)
    Path(path).write_text(json.dumps(doc, indent=1))
    return doc["digest"]


def _read_doc(path: str | Path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (ValueError, OSError) as exc:
        raise IntegrityError(f"{path}: unreadable checkpoint ({exc})") from exc
    if doc.get("kind") != kind:
        raise IntegrityError(
            f"{path}: expected a {kind!r} checkpoint, found {doc.get('kind')!r}"
        )
    if doc.get("digest") != _doc_digest(doc):
        raise IntegrityError(f"{path}: digest mismatch, checkpoint was edited")
    return doc


def save_snn_model(path: str | Path, model: SnnModel, meta: dict | None = None) -> str:
    doc = {
        "kind": "snn-model",
        "cfg": {
            "kind": model.cfg.kind,
            "v_threshold": model.cfg.v_threshold,
            "v_reset": model.cfg.v_reset,
            "omega": model.cfg.omega,
        },
        "w1": model.w1.tolist(),
        "w2": model.w2.tolist(),
        "meta": meta or {},
    }
    return _write_doc(path, doc)


def load_snn_model(path: str | Path) -> tuple[SnnModel, dict, str]:
    doc = _read_doc(path, "snn-model")
    cfg = NeuronConfig(**doc["cfg"])
    model = SnnModel(
        w1=np.array(doc["w1"], dtype=np.float64),
        w2=np.array(doc["w2"], dtype=np.float64),
        cfg=cfg,
    )
    return model, doc["meta"], doc["digest"]


def save_disnn_model(
    path: str | Path,
    model: DiSnnModel,
    lineage: dict[str, str] | None = None,
    meta: dict | None = None,
) -> str:
    doc = {
        "kind": "disnn-model",
        "tau": model.tau,
        "p": model.p,
        "v_threshold": model.v_threshold,
        "w1": model.w1.tolist(),
        "w2": model.w2.tolist(),
        "w1_half": model.w1_half.tolist(),
        "w2_half": model.w2_half.tolist(),
        "bounds": [
            {
                "alpha": b.alpha,
                "beta": b.beta,
                "alpha_analytic": b.alpha_analytic,
                "alpha_empirical": b.alpha_empirical,
            }
            for b in model.bounds
        ],
        "lineage": lineage or {},
        "meta": meta or {},
    }
    return _write_doc(path, doc)


def load_disnn_model(path: str | Path) -> tuple[DiSnnModel, dict, str]:
    doc = _read_doc(path, "disnn-model")
    bounds = tuple(LayerBounds(**b) for b in doc["bounds"])
    model = DiSnnModel(
        w1=np.array(doc["w1"], dtype=np.int64),
        w2=np.array(doc["w2"], dtype=np.int64),
        w1_half=np.array(doc["w1_half"], dtype=np.int64),
        w2_half=np.array(doc["w2_half"], dtype=np.int64),
        tau=doc["tau"],
        p=doc["p"],
        v_threshold=doc["v_threshold"],
        bounds=bounds,
    )
    return model, doc["lineage"], doc["digest"]


# -- keys ----------------------------------------------------------------------


def save_secret_key(path: str | Path, key: LweKey, profile) -> str:
    return save_artifact(
        path,
        "secret-key",
        {"q": key.q, "dim": key.dim, "profile": profile.name,
         "param_hash": profile.param_hash()},
        {"s": key.s.astype(_pack_dtype(key.q))},
    )


def load_secret_key(path: str | Path) -> tuple[LweKey, Artifact]:
    art = load_artifact(path, "secret-key")
    key = LweKey(s=art.arrays["s"].astype(np.int64), q=art.params["q"])
    if key.dim != art.params["dim"]:
        raise IntegrityError(f"{path}: key length does not match its header")
    return key, art


def save_bootstrap_keys(path: str | Path, keys, secret_digest: str) -> str:
    """Public evaluation keys, fingerprinting the secret they derive from.

    The fingerprint is a sha256 of the secret-key artifact, recorded so
    runs can check that encryption and evaluation keys belong together;
    it is an identity check, not an authenticator.
    """
    prof = keys.profile
    return save_artifact(
        path,
        "bootstrap-keys",
        {"profile": prof.name, "param_hash": prof.param_hash()},
        {
            "brk": keys.brk.astype(_pack_dtype(prof.Q)),
            "ksk_a": keys.ksk_a.astype(_pack_dtype(prof.Q)),
            "ksk_b": keys.ksk_b.astype(_pack_dtype(prof.Q)),
        },
        {"secret_key": secret_digest},
    )


def load_bootstrap_keys(path: str | Path):
    from .bootstrap import BootstrapKeys
    from .params import get_profile

    art = load_artifact(path, "bootstrap-keys")
    prof = get_profile(art.params["profile"])
    if prof.param_hash() != art.params["param_hash"]:
        raise IntegrityError(
            f"{path}: profile {prof.name!r} has changed since these keys "
            "were generated; regenerate them"
        )
    keys = BootstrapKeys(
        profile=prof,
        brk=art.arrays["brk"].astype(np.int64),
        ksk_a=art.arrays["ksk_a"].astype(np.int64),
        ksk_b=art.arrays["ksk_b"].astype(np.int64),
    )
    return keys, art


# -- encrypted image bundles -----------------------------------------------------


def seed_commitment(seed: int, start_index: int) -> str:
    """Binds a bundle to its encoder stream without revealing the seed."""
    return hashlib.sha256(f"encode:{seed}:{start_index}".encode()).hexdigest()


def save_encrypted_images(
    path: str | Path,
    inputs: EncodedInput,
    q: int,
    p: int,
    budget: float,
    commitment: str,
    lineage: dict[str, str] | None = None,
    start_index: int = 0,
) -> str:
    """Ciphertext bundle plus the header a server needs to run it."""
    if inputs.mode not in MODES:
        raise ValueError(f"unknown mode {inputs.mode!r}")
    params = {
        "mode": inputs.mode,
        "T": inputs.T,
        "n_images": inputs.n_images,
        "n_inputs": inputs.n_inputs,
        "q": q,
        "p": p,
        "budget": budget,
        "seed_commitment": commitment,
        "start_index": start_index,
    }
    dt = _pack_dtype(q)
    if inputs.mode == MODES[0]:
        if callable(inputs.steps):
            raise ValueError("streaming inputs cannot be serialized; "
                             "materialize the steps first")
        arrays = {
            "a": np.stack([s.a for s in inputs.steps]).astype(dt),
            "b": np.stack([s.b for s in inputs.steps]).astype(dt),
        }
    else:
        arrays = {
            "a": inputs.pixels.a.astype(dt),
            "b": inputs.pixels.b.astype(dt),
            "thresholds": inputs.thresholds.astype(np.uint16),
        }
    return save_artifact(path, "encrypted-images", params, arrays, lineage)


def load_encrypted_images(path: str | Path) -> tuple[EncodedInput, Artifact]:
    art = load_artifact(path, "encrypted-images")
    pp = art.params
    q, budget = pp["q"], pp["budget"]
    if pp["mode"] == MODES[0]:
        a, b = art.arrays["a"].astype(np.int64), art.arrays["b"].astype(np.int64)
        steps = [
            LweBatch(a=a[t], b=b[t], q=q, budget=budget) for t in range(pp["T"])
        ]
        inputs = EncodedInput(
            mode=pp["mode"], T=pp["T"], n_images=pp["n_images"],
            n_inputs=pp["n_inputs"], steps=steps,
        )
    else:
        inputs = EncodedInput(
            mode=pp["mode"], T=pp["T"], n_images=pp["n_images"],
            n_inputs=pp["n_inputs"],
            pixels=LweBatch(
                a=art.arrays["a"].astype(np.int64),
                b=art.arrays["b"].astype(np.int64),
                q=q, budget=budget,
            ),
            thresholds=art.arrays["thresholds"].astype(np.int64),
        )
    return inputs, art


def save_scores(
    path: str | Path,
    scores: LweBatch,
    n_images: int,
    classes: int,
    p: int,
    lineage: dict[str, str] | None = None,
    meta: dict | None = None,
) -> str:
    dt = _pack_dtype(scores.q)
    params = {"q": scores.q, "p": p, "budget": scores.budget,
              "n_images": n_images, "classes": classes}
    params.update(meta or {})
    return save_artifact(
        path,
        "encrypted-scores",
        params,
        {"a": scores.a.astype(dt), "b": scores.b.astype(dt)},
        lineage,
    )


def load_scores(path: str | Path) -> tuple[LweBatch, Artifact]:
    art = load_artifact(path, "encrypted-scores")
    batch = LweBatch(
        a=art.arrays["a"].astype(np.int64),
        b=art.arrays["b"].astype(np.int64),
        q=art.params["q"],
        budget=art.params["budget"],
    )
    return batch, art
