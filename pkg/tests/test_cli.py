"""End-to-end command workflows, exit codes, role separation."""

import csv
import json
import shutil
import struct
from pathlib import Path

import numpy as np
import pytest

from spikefhe import lwe, mnist
from spikefhe.cli import main
from spikefhe.engine import (
    MODE_ENCRYPT_FIRST,
    encode_and_encrypt,
    encode_trains,
    reference_run,
    streaming_input,
)
from spikefhe.discretize import DiSnnModel, LayerBounds
from spikefhe.params import get_profile
from spikefhe.serialize import (
    load_artifact,
    load_disnn_model,
    load_scores,
    load_secret_key,
    load_snn_model,
    save_disnn_model,
    save_snn_model,
)
from spikefhe.snn import NeuronConfig, SnnModel

from conftest import requires_dataset

pytestmark = requires_dataset


def write_idx(path: Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    magic = 0x803 if arr.ndim == 3 else 0x801
    head = struct.pack(f">{arr.ndim + 1}I", magic, *arr.shape)
    path.write_bytes(head + arr.tobytes())


@pytest.fixture(scope="module")
def mini_data(tmp_path_factory):
    """A 256/64-image slice of the real dataset in its own directory."""
    root = tmp_path_factory.mktemp("mini-mnist")
    for split, count in (("train", 256), ("test", 64)):
        images, labels = mnist.load_split(split)
        img_name, lbl_name = mnist.SPLIT_FILES[split]
        write_idx(root / img_name, images[:count])
        write_idx(root / lbl_name, labels[:count])
    return root


@pytest.fixture(scope="module")
def snn_file(tmp_path_factory):
    rng = np.random.default_rng(3)
    model = SnnModel(
        w1=rng.normal(0, 0.3, (784, 6)),
        w2=rng.normal(0, 0.4, (6, 10)),
        cfg=NeuronConfig(kind="IF", v_threshold=1.0, v_reset=0.0),
    )
    path = tmp_path_factory.mktemp("models") / "snn.json"
    save_snn_model(path, model, meta={"note": "random workflow stand-in"})
    return path


@pytest.fixture(scope="module")
def chain(tmp_path_factory, mini_data, snn_file):
    """One full client/server round on the smallest exact profile."""
    d = tmp_path_factory.mktemp("chain")
    paths = {
        "data": mini_data,
        "snn": snn_file,
        "disnn": d / "disnn.json",
        "sk": d / "sk.spk",
        "pk": d / "pk.spk",
        "bundle": d / "bundle.spk",
        "scores": d / "scores.spk",
        "report": d / "report.json",
    }
    steps = [
        ["convert", "--data-dir", str(mini_data), "--model", str(snn_file),
         "--tau", "2", "--p", "64", "--calib", "32", "--T", "3",
         "--out", str(paths["disnn"])],
        ["keygen", "--profile", "micro-exact-p64", "--seed", "7",
         "--secret-key", str(paths["sk"]), "--public-keys", str(paths["pk"])],
        ["encrypt", "--data-dir", str(mini_data), "--secret-key",
         str(paths["sk"]), "--model", str(paths["disnn"]), "--count", "4",
         "--T", "3", "--seed", "5", "--out", str(paths["bundle"])],
        ["infer", "--bundle", str(paths["bundle"]), "--model",
         str(paths["disnn"]), "--public-keys", str(paths["pk"]),
         "--group-size", "2", "--out", str(paths["scores"])],
        ["evaluate", "--data-dir", str(mini_data), "--scores",
         str(paths["scores"]), "--bundle", str(paths["bundle"]), "--model",
         str(paths["disnn"]), "--secret-key", str(paths["sk"]),
         "--seed", "5", "--out", str(paths["report"])],
    ]
    for argv in steps:
        assert main(argv) == 0, f"step {argv[0]} failed"
    return paths


# -- train -----------------------------------------------------------------


def train_argv(data, out, seed=0):
    return ["train", "--data-dir", str(data), "--out", str(out),
            "--T", "3", "--epochs", "1", "--hidden", "8", "--seed", str(seed)]


def test_train_prints_accuracy_and_writes_a_loadable_checkpoint(
    mini_data, tmp_path, capsys
):
    out = tmp_path / "trained.json"
    assert main(train_argv(mini_data, out)) == 0
    printed = capsys.readouterr().out
    assert "test accuracy" in printed
    model, meta, _ = load_snn_model(out)
    assert model.w1.shape == (784, 8)
    assert 0.0 <= meta["test_accuracy"] <= 1.0
    # No wall-clock fields may leak into the checkpoint.
    assert "train_seconds" not in meta


def test_train_with_a_fixed_seed_writes_byte_identical_checkpoints(
    mini_data, tmp_path
):
    a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    assert main(train_argv(mini_data, a, seed=4)) == 0
    assert main(train_argv(mini_data, b, seed=4)) == 0
    assert main(train_argv(mini_data, c, seed=5)) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_train_on_truncated_images_fails_cleanly_without_partial_output(
    mini_data, tmp_path, capsys
):
    broken = tmp_path / "broken-data"
    shutil.copytree(mini_data, broken)
    img = broken / "train-images-idx3-ubyte"
    img.write_bytes(img.read_bytes()[:-100])
    out = tmp_path / "never.json"
    assert main(train_argv(broken, out)) == 3
    assert "train-images" in capsys.readouterr().err
    assert not out.exists()


# -- convert ---------------------------------------------------------------


def test_convert_prints_alpha_beta_and_p_consistent_with_the_file(
    chain, capsys, tmp_path
):
    argv = ["convert", "--data-dir", str(chain["data"]), "--model",
            str(chain["snn"]), "--tau", "2", "--p", "64", "--calib", "32",
            "--T", "3", "--out", str(tmp_path / "d.json")]
    assert main(argv) == 0
    printed = capsys.readouterr().out
    d, _, _ = load_disnn_model(tmp_path / "d.json")
    beta = -d.alpha + d.v_threshold
    assert f"alpha {d.alpha}  beta {beta}  p {d.p}" in printed
    assert d.p == 64


@pytest.mark.parametrize("tau,expected_p", [(10, 1024), (20, 2048)])
def test_convert_sizes_the_message_space_from_tau_when_p_is_omitted(
    chain, tmp_path, capsys, tau, expected_p
):
    argv = ["convert", "--data-dir", str(chain["data"]), "--model",
            str(chain["snn"]), "--tau", str(tau), "--calib", "32",
            "--T", "3", "--out", str(tmp_path / "d.json")]
    assert main(argv) == 0
    assert f"p {expected_p}" in capsys.readouterr().out


def test_convert_rejects_nonpositive_tau(chain, tmp_path, capsys):
    argv = ["convert", "--data-dir", str(chain["data"]), "--model",
            str(chain["snn"]), "--tau", "0", "--out", str(tmp_path / "d.json")]
    assert main(argv) == 2
    assert "tau" in capsys.readouterr().err


def test_convert_rejects_a_message_space_that_is_too_small(
    chain, tmp_path, capsys
):
    # Calibrated membranes reach +-19 at tau=2; p=16 covers only +-8.
    argv = ["convert", "--data-dir", str(chain["data"]), "--model",
            str(chain["snn"]), "--tau", "2", "--p", "16", "--calib", "32",
            "--T", "3", "--out", str(tmp_path / "d.json")]
    assert main(argv) == 2
    assert "smallest admissible p" in capsys.readouterr().err


# -- keygen / encrypt --------------------------------------------------------


def test_keygen_binds_the_public_keys_to_the_secret_key(chain):
    sk_art = load_artifact(chain["sk"], "secret-key")
    pk_art = load_artifact(chain["pk"], "bootstrap-keys")
    assert pk_art.lineage["secret_key"] == sk_art.digest
    assert pk_art.params["profile"] == "micro-exact-p64"


def test_encrypt_records_lineage_commitment_and_window(chain):
    sk_art = load_artifact(chain["sk"], "secret-key")
    model_digest = load_disnn_model(chain["disnn"])[2]
    bundle = load_artifact(chain["bundle"], "encrypted-images")
    assert bundle.lineage["secret_key"] == sk_art.digest
    assert bundle.lineage["model"] == model_digest
    assert bundle.params["n_images"] == 4
    assert bundle.params["T"] == 3
    assert bundle.params["start_index"] == 0
    assert len(bundle.params["seed_commitment"]) == 64


def test_encrypt_refuses_a_window_past_the_end_of_the_split(
    chain, tmp_path, capsys
):
    argv = ["encrypt", "--data-dir", str(chain["data"]), "--secret-key",
            str(chain["sk"]), "--start", "60", "--count", "10", "--T", "2",
            "--out", str(tmp_path / "b.spk")]
    assert main(argv) == 3
    assert "64" in capsys.readouterr().err


# -- infer -------------------------------------------------------------------


def test_infer_runs_with_only_public_material(chain, tmp_path, monkeypatch):
    server = tmp_path / "server"
    server.mkdir()
    for name in ("pk", "bundle", "disnn"):
        shutil.copy(chain[name], server / chain[name].name)
    monkeypatch.chdir(server)
    monkeypatch.delenv(mnist.DATA_DIR_ENV, raising=False)
    assert not any(p.name.startswith("sk") for p in server.iterdir())
    argv = ["infer", "--bundle", "bundle.spk", "--model", "disnn.json",
            "--public-keys", "pk.spk", "--out", "scores.spk"]
    assert main(argv) == 0
    assert (server / "scores.spk").exists()


def test_infer_checks_the_bootstrap_tally_against_the_closed_form(chain):
    art = load_artifact(chain["scores"], "encrypted-scores")
    # 784-6-10 network, T=3, spike mode: fire + reset per neuron per
    # step, nothing for the inputs.
    assert art.params["bootstraps"] == 2 * 3 * (6 + 10) * 4
    assert art.params["bootstraps_by_phase"] == {"fire": 192, "reset": 192}


def test_infer_refuses_keys_from_a_different_secret(chain, tmp_path, capsys):
    sk2, pk2 = tmp_path / "sk2.spk", tmp_path / "pk2.spk"
    assert main(["keygen", "--profile", "micro-exact-p64", "--seed", "8",
                 "--secret-key", str(sk2), "--public-keys", str(pk2)]) == 0
    argv = ["infer", "--bundle", str(chain["bundle"]), "--model",
            str(chain["disnn"]), "--public-keys", str(pk2),
            "--out", str(tmp_path / "never.spk")]
    assert main(argv) == 3
    assert "different secret key" in capsys.readouterr().err
    assert not (tmp_path / "never.spk").exists()


def test_infer_refuses_a_model_other_than_the_bundled_one(
    chain, tmp_path, capsys
):
    other = tmp_path / "other.json"
    argv = ["convert", "--data-dir", str(chain["data"]), "--model",
            str(chain["snn"]), "--tau", "1.5", "--p", "64", "--calib", "32",
            "--T", "3", "--out", str(other)]
    assert main(argv) == 0
    argv = ["infer", "--bundle", str(chain["bundle"]), "--model", str(other),
            "--public-keys", str(chain["pk"]),
            "--out", str(tmp_path / "never.spk")]
    assert main(argv) == 3
    assert "infer" in capsys.readouterr().err
    assert not (tmp_path / "never.spk").exists()


def test_infer_with_workers_reproduces_the_single_worker_scores(
    chain, tmp_path
):
    out = tmp_path / "scores-par.spk"
    argv = ["infer", "--bundle", str(chain["bundle"]), "--model",
            str(chain["disnn"]), "--public-keys", str(chain["pk"]),
            "--group-size", "1", "--workers", "3", "--out", str(out)]
    assert main(argv) == 0
    sk, _ = load_secret_key(chain["sk"])
    base, _ = load_scores(chain["scores"])
    par, _ = load_scores(out)
    assert np.array_equal(
        lwe.batch_decrypt(sk, base, 64), lwe.batch_decrypt(sk, par, 64)
    )


def test_infer_tampered_bundle_is_refused_before_any_work(
    chain, tmp_path, capsys
):
    raw = bytearray(chain["bundle"].read_bytes())
    raw[60] ^= 0xFF
    bad = tmp_path / "tampered.spk"
    bad.write_bytes(bytes(raw))
    argv = ["infer", "--bundle", str(bad), "--model", str(chain["disnn"]),
            "--public-keys", str(chain["pk"]),
            "--out", str(tmp_path / "never.spk")]
    assert main(argv) == 3
    assert "checksum" in capsys.readouterr().err
    assert not (tmp_path / "never.spk").exists()


# -- evaluate ------------------------------------------------------------------


def test_evaluate_report_matches_the_plaintext_references(chain):
    report = json.loads(chain["report"].read_text())
    d, _, _ = load_disnn_model(chain["disnn"])
    images, truth = mnist.load_split("test", chain["data"])
    images = mnist.normalize(images)[:4]
    trains = encode_trains(images, 3, 5)
    halved = reference_run(2 * d.w1_half, 2 * d.w2_half, d.v_threshold, trains)
    tau_scale = reference_run(d.w1, d.w2, d.v_threshold, trains)
    # Exact profile: the encrypted run equals its halved twin bit for bit.
    assert report["labels"] == halved["labels"].tolist()
    assert report["reference_labels"] == tau_scale["labels"].tolist()
    agree = np.mean(np.array(report["labels"]) == tau_scale["labels"])
    assert report["agreement_fraction"] == pytest.approx(agree)
    assert report["accuracy"] == pytest.approx(
        np.mean(np.array(report["labels"]) == truth[:4])
    )
    assert report["noise"]["measured_max"] == 0
    assert report["noise"]["budget"] <= report["noise"]["limit"]
    assert report["bootstraps"] == 192 * 2


def test_evaluate_refuses_the_wrong_encoding_seed(chain, capsys):
    argv = ["evaluate", "--data-dir", str(chain["data"]), "--scores",
            str(chain["scores"]), "--bundle", str(chain["bundle"]),
            "--model", str(chain["disnn"]), "--secret-key", str(chain["sk"]),
            "--seed", "6"]
    assert main(argv) == 3
    assert "different seed" in capsys.readouterr().err


def test_evaluate_refuses_scores_for_a_different_bundle(
    chain, tmp_path, capsys
):
    other_bundle = tmp_path / "other-bundle.spk"
    argv = ["encrypt", "--data-dir", str(chain["data"]), "--secret-key",
            str(chain["sk"]), "--model", str(chain["disnn"]), "--count", "4",
            "--T", "3", "--seed", "9", "--out", str(other_bundle)]
    assert main(argv) == 0
    argv = ["evaluate", "--data-dir", str(chain["data"]), "--scores",
            str(chain["scores"]), "--bundle", str(other_bundle),
            "--model", str(chain["disnn"]), "--secret-key", str(chain["sk"]),
            "--seed", "9"]
    assert main(argv) == 3
    assert "evaluate" in capsys.readouterr().err


def test_identical_config_and_seed_reproduce_the_report(chain, tmp_path):
    wall_clock = ("seconds", "seconds_per_step_median", "seconds_per_image")
    reports = []
    for tag in ("x", "y"):
        scores = tmp_path / f"scores-{tag}.spk"
        report = tmp_path / f"report-{tag}.json"
        assert main(["infer", "--bundle", str(chain["bundle"]), "--model",
                     str(chain["disnn"]), "--public-keys", str(chain["pk"]),
                     "--out", str(scores)]) == 0
        assert main(["evaluate", "--data-dir", str(chain["data"]),
                     "--scores", str(scores), "--bundle", str(chain["bundle"]),
                     "--model", str(chain["disnn"]), "--secret-key",
                     str(chain["sk"]), "--seed", "5",
                     "--out", str(report)]) == 0
        doc = json.loads(report.read_text())
        for key in wall_clock:
            doc.pop(key)
        reports.append(doc)
    assert reports[0] == reports[1]


# -- sweep ----------------------------------------------------------------------


def test_sweep_over_T_writes_per_rep_rows_and_summaries(chain, tmp_path):
    out = tmp_path / "sweep.csv"
    argv = ["sweep", "--data-dir", str(chain["data"]), "--kind", "T",
            "--model", str(chain["snn"]), "--grid", "2,4", "--reps", "2",
            "--samples", "32", "--out", str(out)]
    assert main(argv) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["kind", "value", "repetition", "metric", "result"]
    body = rows[1:]
    assert len(body) == 2 * (2 + 3)
    for value in ("2", "4"):
        reps = [r for r in body if r[1] == value and r[2] in ("0", "1")]
        stats = {r[2]: float(r[4]) for r in body
                 if r[1] == value and not r[2].isdigit()}
        accs = [float(r[4]) for r in reps]
        assert stats["mean"] == pytest.approx(np.mean(accs), abs=1e-4)
        assert stats["min"] == pytest.approx(min(accs))
        assert stats["max"] == pytest.approx(max(accs))


def test_sweep_over_tau_evaluates_the_discretized_models(chain, tmp_path):
    out = tmp_path / "sweep-tau.csv"
    argv = ["sweep", "--data-dir", str(chain["data"]), "--kind", "tau",
            "--model", str(chain["snn"]), "--grid", "2,8", "--reps", "1",
            "--T", "3", "--samples", "32", "--out", str(out)]
    assert main(argv) == 0
    rows = list(csv.reader(out.open()))[1:]
    assert {r[1] for r in rows} == {"2.0", "8.0"}


def test_sweep_with_an_empty_grid_warns_and_writes_nothing(
    chain, tmp_path, capsys
):
    out = tmp_path / "empty.csv"
    argv = ["sweep", "--data-dir", str(chain["data"]), "--kind", "T",
            "--model", str(chain["snn"]), "--grid", "", "--out", str(out)]
    assert main(argv) == 0
    assert "empty sweep grid" in capsys.readouterr().err
    assert not out.exists()


# -- noise refusal ------------------------------------------------------------


def test_noise_budget_violation_exits_4(chain, tmp_path, capsys):
    # Weight 9 against fresh sigma-1 noise exceeds the q/(2p) = 4 limit
    # on the noisy profile; infer must refuse rather than emit garbage.
    w1 = np.zeros((784, 2), dtype=np.int64)
    w1[0] = 18
    w2 = np.array([[2], [2]], dtype=np.int64)
    hot = DiSnnModel(
        w1=w1, w2=w2, w1_half=w1 // 2, w2_half=w2 // 2, tau=2.0, p=16,
        v_threshold=2,
        bounds=(LayerBounds(alpha=5, beta=-3, alpha_analytic=5),
                LayerBounds(alpha=5, beta=-3, alpha_analytic=5)),
    )
    model_path = tmp_path / "hot.json"
    save_disnn_model(model_path, hot, lineage={}, meta={})
    sk, pk = tmp_path / "sk.spk", tmp_path / "pk.spk"
    bundle = tmp_path / "bundle.spk"
    assert main(["keygen", "--profile", "micro-noisy-p16", "--seed", "1",
                 "--secret-key", str(sk), "--public-keys", str(pk)]) == 0
    assert main(["encrypt", "--data-dir", str(chain["data"]), "--secret-key",
                 str(sk), "--count", "1", "--T", "1",
                 "--out", str(bundle)]) == 0
    argv = ["infer", "--bundle", str(bundle), "--model", str(model_path),
            "--public-keys", str(pk), "--out", str(tmp_path / "never.spk")]
    assert main(argv) == 4
    assert "budget" in capsys.readouterr().err


# -- batch plumbing ------------------------------------------------------------


def test_batch_concat_stacks_rows_and_keeps_the_worst_budget():
    prof = get_profile("micro-exact-p64")
    rng = np.random.default_rng(0)
    key = lwe.lwe_keygen(prof, rng)
    a = lwe.batch_encrypt(key, np.array([1, 2]), 64, 0.0, rng)
    b = lwe.batch_encrypt(key, np.array([3]), 64, 0.0, rng)
    b.budget = 0.7
    cat = lwe.batch_concat([a, b])
    assert len(cat) == 3
    assert cat.budget == 0.7
    assert lwe.batch_decrypt(key, cat, 64).tolist() == [1, 2, 3]
    with pytest.raises(ValueError):
        lwe.batch_concat([])


def test_encoded_input_subset_selects_whole_images():
    # p1024 profile so 8-bit pixel levels fit the encrypt-first mode.
    prof = get_profile("micro-exact-p1024")
    rng = np.random.default_rng(1)
    key = lwe.lwe_keygen(prof, rng)
    images = rng.integers(0, 256, (4, 8)).astype(np.uint8)
    images = images.astype(np.float64) / 255.0
    for mode in ("encode-then-encrypt", MODE_ENCRYPT_FIRST):
        full = encode_and_encrypt(images, 3, key, prof, mode=mode, seed=2)
        part = full.subset(1, 3)
        assert part.n_images == 2
        if mode == MODE_ENCRYPT_FIRST:
            got = lwe.batch_decrypt(key, part.pixels, prof.p)
            want = lwe.batch_decrypt(key, full.pixels, prof.p)[8:24]
            assert np.array_equal(got, want)
            assert np.array_equal(part.thresholds, full.thresholds[:, 8:24])
        else:
            for t in range(3):
                got = lwe.batch_decrypt(key, part.step_batch(t), prof.p)
                want = lwe.batch_decrypt(key, full.step_batch(t), prof.p)
                assert np.array_equal(got, want[8:24])
    with pytest.raises(ValueError, match="materialize"):
        streaming_input(images, 3, key, prof,
                        "encode-then-encrypt", 2, 0).subset(0, 1)
    with pytest.raises(ValueError):
        full.subset(3, 1)
