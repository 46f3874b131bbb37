"""Artifact round-trips, integrity refusal, lineage checks."""

import json

import numpy as np
import pytest

from spikefhe import lwe
from spikefhe.bootstrap import bootstrap_keygen
from spikefhe.discretize import convert
from spikefhe.engine import (
    MODE_ENCRYPT_FIRST,
    encode_and_encrypt,
    streaming_input,
)
from spikefhe.params import get_profile
from spikefhe.serialize import (
    Artifact,
    IntegrityError,
    load_artifact,
    load_bootstrap_keys,
    load_disnn_model,
    load_encrypted_images,
    load_scores,
    load_secret_key,
    load_snn_model,
    require_lineage,
    save_artifact,
    save_bootstrap_keys,
    save_disnn_model,
    save_encrypted_images,
    save_scores,
    save_secret_key,
    save_snn_model,
    seed_commitment,
)
from spikefhe.snn import NeuronConfig, SnnModel

RNG = lambda seed: np.random.default_rng(seed)


def small_model(seed=0):
    rng = RNG(seed)
    return SnnModel(
        w1=rng.normal(0, 0.3, (6, 4)),
        w2=rng.normal(0, 0.3, (4, 3)),
        cfg=NeuronConfig(kind="IF", v_threshold=1.0, v_reset=0.0),
    )


# -- binary container ---------------------------------------------------------


def test_artifact_roundtrip_preserves_everything(tmp_path):
    path = tmp_path / "x.spkf"
    arrays = {
        "a": RNG(1).integers(0, 2**27, (5, 7)).astype(np.uint32),
        "b": np.arange(11, dtype=np.uint16),
    }
    digest = save_artifact(path, "test-kind", {"q": 2048}, arrays, {"up": "ab12"})
    art = load_artifact(path)
    assert art.kind == "test-kind"
    assert art.params == {"q": 2048}
    assert art.lineage == {"up": "ab12"}
    assert art.digest == digest
    for name in arrays:
        assert np.array_equal(art.arrays[name], arrays[name])
        assert art.arrays[name].dtype == arrays[name].dtype


def test_flipping_one_byte_is_refused(tmp_path):
    path = tmp_path / "x.spkf"
    save_artifact(path, "k", {}, {"a": np.arange(64, dtype=np.uint16)})
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(IntegrityError, match="checksum"):
        load_artifact(path)


def test_truncated_file_is_refused(tmp_path):
    path = tmp_path / "x.spkf"
    save_artifact(path, "k", {}, {"a": np.arange(64, dtype=np.uint16)})
    path.write_bytes(path.read_bytes()[:-40])
    with pytest.raises(IntegrityError):
        load_artifact(path)


def test_wrong_kind_and_wrong_magic_are_refused(tmp_path):
    path = tmp_path / "x.spkf"
    save_artifact(path, "cipher", {}, {"a": np.zeros(3, np.uint8)})
    with pytest.raises(IntegrityError, match="expected"):
        load_artifact(path, expect_kind="key")
    plain = tmp_path / "y.spkf"
    plain.write_bytes(b"hello world, definitely not an artifact")
    with pytest.raises(IntegrityError, match="not an artifact"):
        load_artifact(plain)


def test_lineage_refusal_names_the_input():
    art = Artifact("k", {}, {}, {"model": "aaaa"}, "selfhash")
    require_lineage(art, "model", "aaaa", "run")
    with pytest.raises(IntegrityError, match="model"):
        require_lineage(art, "model", "bbbb", "run")


# -- model checkpoints --------------------------------------------------------


def test_snn_checkpoint_roundtrip_is_exact(tmp_path):
    model = small_model()
    path = tmp_path / "snn.json"
    digest = save_snn_model(path, model, meta={"test_accuracy": 0.95})
    loaded, meta, loaded_digest = load_snn_model(path)
    assert np.array_equal(loaded.w1, model.w1)  # bit-exact through JSON
    assert np.array_equal(loaded.w2, model.w2)
    assert loaded.cfg == model.cfg
    assert meta == {"test_accuracy": 0.95}
    assert digest == loaded_digest


def test_edited_checkpoint_is_refused(tmp_path):
    path = tmp_path / "snn.json"
    save_snn_model(path, small_model())
    doc = json.loads(path.read_text())
    doc["w1"][0][0] += 0.25
    path.write_text(json.dumps(doc))
    with pytest.raises(IntegrityError, match="digest mismatch"):
        load_snn_model(path)


def test_disnn_checkpoint_roundtrip(tmp_path):
    model = small_model(1)
    d = convert(model, tau=10, calib_images=RNG(2).random((20, 6)), T=5)
    path = tmp_path / "disnn.json"
    digest = save_disnn_model(path, d, lineage={"snn": "feed"}, meta={"note": 1})
    loaded, lineage, loaded_digest = load_disnn_model(path)
    assert np.array_equal(loaded.w1, d.w1)
    assert np.array_equal(loaded.w1_half, d.w1_half)
    assert loaded.tau == d.tau and loaded.p == d.p
    assert loaded.v_threshold == d.v_threshold
    assert loaded.bounds == d.bounds
    assert lineage == {"snn": "feed"}
    assert digest == loaded_digest


def test_wrong_checkpoint_kind_is_refused(tmp_path):
    path = tmp_path / "snn.json"
    save_snn_model(path, small_model())
    with pytest.raises(IntegrityError, match="disnn-model"):
        load_disnn_model(path)


# -- keys ----------------------------------------------------------------------


def test_key_files_roundtrip(tmp_path):
    prof = get_profile("micro-exact-p64")
    rng = RNG(3)
    sk = lwe.lwe_keygen(prof, rng)
    rk = lwe.ring_keygen(prof, rng)
    keys = bootstrap_keygen(prof, sk, rk, rng)

    sk_digest = save_secret_key(tmp_path / "sk.spkf", sk, prof)
    loaded_sk, sk_art = load_secret_key(tmp_path / "sk.spkf")
    assert np.array_equal(loaded_sk.s, sk.s) and loaded_sk.q == sk.q
    assert sk_art.digest == sk_digest

    bk_digest = save_bootstrap_keys(tmp_path / "bk.spkf", keys, sk_digest)
    loaded_keys, bk_art = load_bootstrap_keys(tmp_path / "bk.spkf")
    assert np.array_equal(loaded_keys.brk, keys.brk)
    assert np.array_equal(loaded_keys.ksk_a, keys.ksk_a)
    assert np.array_equal(loaded_keys.ksk_b, keys.ksk_b)
    assert loaded_keys.profile.name == prof.name
    assert bk_art.lineage == {"secret_key": sk_digest}
    assert bk_art.digest == bk_digest

    # The reloaded keys still bootstrap correctly.
    from spikefhe.bootstrap import BootstrapCounter, sign_program, bootstrap_batch

    batch = lwe.batch_encrypt(sk, [3, -9], prof.p, prof.sigma_lwe, rng)
    (out,) = bootstrap_batch(batch, [sign_program(prof.p)], loaded_keys,
                             BootstrapCounter())
    assert lwe.batch_decrypt(sk, out, prof.p).tolist() == [1, -1]


# -- ciphertext bundles ----------------------------------------------------------


def test_encrypted_image_bundle_roundtrip_both_modes(tmp_path):
    prof = get_profile("micro-exact-p1024")
    sk = lwe.lwe_keygen(prof, RNG(4))
    images = RNG(5).integers(0, 256, (2, 4)) / 255.0
    for mode, name in zip(("encode-then-encrypt", MODE_ENCRYPT_FIRST), "ab"):
        inputs = encode_and_encrypt(images, 3, sk, prof, mode, seed=6)
        path = tmp_path / f"{name}.spkf"
        commit = seed_commitment(6, 0)
        digest = save_encrypted_images(
            path, inputs, prof.q, prof.p, prof.sigma_lwe, commit,
            lineage={"keys": "cafe"},
        )
        loaded, art = load_encrypted_images(path)
        assert art.params["seed_commitment"] == commit
        assert art.params["p"] == prof.p and art.params["T"] == 3
        assert art.lineage == {"keys": "cafe"}
        assert art.digest == digest
        assert loaded.mode == mode
        assert (loaded.n_images, loaded.n_inputs) == (2, 4)
        if mode == MODE_ENCRYPT_FIRST:
            assert np.array_equal(loaded.pixels.a, inputs.pixels.a)
            assert np.array_equal(loaded.pixels.b, inputs.pixels.b)
            assert np.array_equal(loaded.thresholds, inputs.thresholds)
        else:
            for t in range(3):
                assert np.array_equal(loaded.step_batch(t).a, inputs.step_batch(t).a)
                assert np.array_equal(loaded.step_batch(t).b, inputs.step_batch(t).b)
                # Packing must not have clipped any coefficient.
                got = lwe.batch_decrypt(sk, loaded.step_batch(t), prof.p)
                want = lwe.batch_decrypt(sk, inputs.step_batch(t), prof.p)
                assert np.array_equal(got, want)


def test_streaming_inputs_cannot_be_serialized(tmp_path):
    prof = get_profile("micro-exact-p64")
    sk = lwe.lwe_keygen(prof, RNG(7))
    lazy = streaming_input(RNG(8).random((1, 3)), 2, sk, prof)
    with pytest.raises(ValueError, match="materialize"):
        save_encrypted_images(
            tmp_path / "x.spkf", lazy, prof.q, prof.p, 0.0, seed_commitment(0, 0)
        )


def test_scores_roundtrip(tmp_path):
    prof = get_profile("micro-exact-p64")
    sk = lwe.lwe_keygen(prof, RNG(9))
    scores = lwe.batch_encrypt(sk, [4, 0, 6, 2, 0, 8], prof.p, prof.sigma_lwe, RNG(10))
    digest = save_scores(tmp_path / "s.spkf", scores, 2, 3, prof.p,
                         lineage={"bundle": "beef"})
    loaded, art = load_scores(tmp_path / "s.spkf")
    assert np.array_equal(
        lwe.batch_decrypt(sk, loaded, prof.p), lwe.batch_decrypt(sk, scores, prof.p)
    )
    assert art.params["n_images"] == 2 and art.params["classes"] == 3
    assert art.digest == digest


def test_seed_commitment_is_stable_and_seed_sensitive():
    assert seed_commitment(0, 0) == seed_commitment(0, 0)
    assert seed_commitment(0, 0) != seed_commitment(1, 0)
    assert seed_commitment(0, 0) != seed_commitment(0, 100)
