"""LWE / RLWE / RGSW layer: correctness, noise budgets, external product."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikefhe import lwe
from spikefhe.params import get_profile
from spikefhe.ring import balanced_digits, center, monomial_mul

RNG = lambda seed: np.random.default_rng(seed)


# -- encoding ------------------------------------------------------------


@pytest.mark.parametrize("q,p", [(2048, 1024), (2048, 16), (128, 64), (1 << 27, 16)])
def test_encode_decode_roundtrip(q, p):
    for m in range(p):
        want = m if m < p // 2 else m - p
        assert lwe.lwe_decode(lwe.lwe_encode(m, q, p), q, p) == want


def test_decode_tolerates_half_slot_error():
    q, p = 2048, 16
    delta = q // p
    x = lwe.lwe_encode(5, q, p)
    for e in range(-(delta // 2), delta // 2):
        assert lwe.lwe_decode(x + e, q, p) == 5


# -- scalar LWE ----------------------------------------------------------


@pytest.mark.parametrize(
    "profile", ["std128-exact-p1024", "micro-exact-p64", "std128-noisy-p16"]
)
def test_encrypt_decrypt_all_messages(profile):
    prof = get_profile(profile)
    key = lwe.lwe_keygen(prof, RNG(1))
    rng = RNG(2)
    for m in range(prof.p):
        ct = lwe.lwe_encrypt(key, m, prof.p, prof.sigma_lwe, rng)
        assert lwe.lwe_decrypt(key, ct, prof.p) == int(center(m, prof.p))


def test_fresh_noise_statistics():
    prof = get_profile("std128-noisy-p16")
    key = lwe.lwe_keygen(prof, RNG(3))
    rng = RNG(4)
    errs = []
    for _ in range(1000):
        ct = lwe.lwe_encrypt(key, 7, prof.p, prof.sigma_lwe, rng)
        errs.append(lwe.measure_noise(key, ct, prof.p, expected=7))
    errs = np.array(errs)
    # Rounded Gaussian with sigma 3.19; 1000 samples pin the std tightly.
    assert 2.8 < errs.std() < 3.7
    assert np.max(np.abs(errs)) <= 6 * prof.sigma_lwe


def test_exact_profile_measures_zero_noise():
    prof = get_profile("std128-exact-p1024")
    key = lwe.lwe_keygen(prof, RNG(5))
    ct = lwe.lwe_encrypt(key, 123, prof.p, prof.sigma_lwe, RNG(6))
    assert lwe.measure_noise(key, ct, prof.p) == 0
    assert ct.budget == 0.0


@settings(max_examples=50, deadline=None)
@given(
    m1=st.integers(0, 63),
    m2=st.integers(0, 63),
    w=st.integers(-10, 10),
    const=st.integers(-31, 31),
)
def test_linear_ops_match_plaintext(m1, m2, w, const):
    prof = get_profile("micro-exact-p64")
    key = lwe.lwe_keygen(prof, RNG(7))
    rng = RNG(8)
    c1 = lwe.lwe_encrypt(key, m1, prof.p, 0.0, rng)
    c2 = lwe.lwe_encrypt(key, m2, prof.p, 0.0, rng)
    p = prof.p
    dec = lambda ct: lwe.lwe_decrypt(key, ct, p)
    assert dec(lwe.lwe_add(c1, c2)) == int(center(m1 + m2, p))
    assert dec(lwe.lwe_sub(c1, c2)) == int(center(m1 - m2, p))
    assert dec(lwe.lwe_neg(c1)) == int(center(-m1, p))
    assert dec(lwe.lwe_scalar_mul(c1, w)) == int(center(m1 * w, p))
    assert dec(lwe.lwe_add_plain(c1, const, p)) == int(center(m1 + const, p))


def test_multisum_matches_plaintext_dot():
    prof = get_profile("std128-exact-p1024")
    key = lwe.lwe_keygen(prof, RNG(9))
    rng = RNG(10)
    spikes = rng.integers(0, 3, 64) * 2 - 2  # values in {-2, 0, 2}
    weights = rng.integers(-40, 41, 64)
    cts = [lwe.lwe_encrypt(key, int(s), prof.p, 0.0, rng) for s in spikes]
    acc = lwe.lwe_multisum(weights, cts, prof.p)
    assert lwe.lwe_decrypt(key, acc, prof.p) == int(center(weights @ spikes, prof.p))
    assert acc.budget == 0.0


def test_multisum_budget_refusal():
    prof = get_profile("std128-noisy-p16")
    key = lwe.lwe_keygen(prof, RNG(11))
    rng = RNG(12)
    ct = lwe.lwe_encrypt(key, 1, prof.p, prof.sigma_lwe, rng)
    # 10 * 3.19 = 31.9 stays under the 64-unit half slot.
    ok = lwe.lwe_multisum([10], [ct], prof.p)
    assert ok.budget == pytest.approx(10 * prof.sigma_lwe)
    # 21 * 3.19 = 67.0 crosses it and must refuse.
    with pytest.raises(lwe.NoiseBudgetError):
        lwe.lwe_multisum([21], [ct], prof.p)


def test_budget_bounds_measured_noise():
    prof = get_profile("std128-noisy-p16")
    key = lwe.lwe_keygen(prof, RNG(13))
    rng = RNG(14)
    worst = 0.0
    for _ in range(200):
        cts = [lwe.lwe_encrypt(key, 0, prof.p, prof.sigma_lwe, rng) for _ in range(4)]
        acc = lwe.lwe_multisum([3, -2, 1, 4], cts, prof.p)
        err = abs(lwe.measure_noise(key, acc, prof.p, expected=0))
        worst = max(worst, err / acc.budget)
    assert worst <= 6.0


# -- gadget decomposition ------------------------------------------------


def test_gadget_digits_recompose_mod_Q():
    Q, bg_bits, ell = 1 << 27, 7, 4
    rng = RNG(15)
    x = rng.integers(0, Q, 4096, dtype=np.int64)
    d = balanced_digits(center(x, Q), ell, bg_bits)
    assert np.max(np.abs(d)) <= (1 << bg_bits) // 2
    recomposed = sum(
        d[j].astype(object) * pow(2, bg_bits * j, Q) for j in range(ell)
    )
    assert np.array_equal(np.mod(np.asarray(recomposed, np.int64), Q), x)


# -- RLWE ----------------------------------------------------------------


def test_rlwe_phase_recovers_raw_message_exact():
    prof = get_profile("std128-exact-p1024")
    key = lwe.ring_keygen(prof, RNG(16))
    rng = RNG(17)
    msg = rng.integers(0, prof.Q, prof.N, dtype=np.int64)
    ct = lwe.rlwe_encrypt(key, msg, 0.0, rng)
    assert np.array_equal(lwe.rlwe_phase(key, ct), msg)
    assert np.array_equal(lwe.rlwe_phase(key, lwe.rlwe_trivial(msg, prof.Q)), msg)


def test_rlwe_phase_noise_bounded():
    prof = get_profile("std128-noisy-p16")
    key = lwe.ring_keygen(prof, RNG(18))
    rng = RNG(19)
    msg = rng.integers(0, prof.Q, prof.N, dtype=np.int64)
    ct = lwe.rlwe_encrypt(key, msg, prof.sigma_ring, rng)
    err = center(lwe.rlwe_phase(key, ct) - msg, prof.Q)
    assert np.max(np.abs(err)) <= 6 * prof.sigma_ring


# -- RGSW / external product ---------------------------------------------


@pytest.mark.parametrize("profile", ["micro-exact-p64", "std128-exact-p1024"])
def test_external_product_monomial_identity_exact(profile):
    prof = get_profile(profile)
    key = lwe.ring_keygen(prof, RNG(20))
    rng = RNG(21)
    for k in [0, 1, prof.N // 3, prof.N - 1, prof.N, 2 * prof.N - 1]:
        mono = np.zeros(prof.N, np.int64)
        mono[k % prof.N] = 1 if (k % (2 * prof.N)) < prof.N else prof.Q - 1
        W = lwe.rgsw_encrypt(key, mono, prof.ell_g, prof.bg_bits, 0.0, rng).to_fft()
        msg = rng.integers(0, prof.Q, prof.N, dtype=np.int64)
        ct = lwe.rlwe_encrypt(key, msg, 0.0, rng)
        out = lwe.external_product(ct, W)
        assert np.array_equal(
            lwe.rlwe_phase(key, out), monomial_mul(msg, k, prof.Q)
        )


def test_external_product_float_exact_at_large_modulus():
    """Full-range operands at Q=2^27 through the FFT contraction.

    Rows are noiseless here, so any disagreement with the monomial
    rotation of the phase can only come from float64 rounding in the
    frequency-domain accumulation.  This pins the precision headroom the
    production-size profiles rely on.
    """
    prof = get_profile("std128-noisy-p16")
    key = lwe.ring_keygen(prof, RNG(22))
    rng = RNG(23)
    for trial in range(50):
        k = int(rng.integers(0, 2 * prof.N))
        mono = np.zeros(prof.N, np.int64)
        mono[k % prof.N] = 1 if k < prof.N else prof.Q - 1
        W = lwe.rgsw_encrypt(key, mono, prof.ell_g, prof.bg_bits, 0.0, rng).to_fft()
        msg = rng.integers(0, prof.Q, prof.N, dtype=np.int64)
        ct = lwe.rlwe_encrypt(key, msg, 0.0, rng)
        out = lwe.external_product(ct, W)
        assert np.array_equal(
            lwe.rlwe_phase(key, out), monomial_mul(msg, k, prof.Q)
        ), f"float rounding corrupted external product (trial {trial}, k={k})"


def test_external_product_noise_growth_bounded():
    prof = get_profile("std128-noisy-p16")
    key = lwe.ring_keygen(prof, RNG(24))
    rng = RNG(25)
    # Predicted added noise: sqrt(2*ell*N*(Bg^2/12)) * sigma per coefficient.
    pred = np.sqrt(2 * prof.ell_g * prof.N * prof.bg**2 / 12) * prof.sigma_ring
    mono = np.zeros(prof.N, np.int64)
    mono[3] = 1
    W = lwe.rgsw_encrypt(
        key, mono, prof.ell_g, prof.bg_bits, prof.sigma_ring, rng
    ).to_fft()
    worst = 0
    for _ in range(10):
        msg = rng.integers(0, prof.Q, prof.N, dtype=np.int64)
        ct = lwe.rlwe_encrypt(key, msg, 0.0, rng)
        out = lwe.external_product(ct, W)
        err = center(lwe.rlwe_phase(key, out) - monomial_mul(msg, 3, prof.Q), prof.Q)
        worst = max(worst, int(np.max(np.abs(err))))
    assert worst <= 8 * pred


def test_external_product_batch_matches_single():
    prof = get_profile("micro-exact-p64")
    key = lwe.ring_keygen(prof, RNG(26))
    rng = RNG(27)
    mono = np.zeros(prof.N, np.int64)
    mono[5] = 1
    W = lwe.rgsw_encrypt(key, mono, prof.ell_g, prof.bg_bits, 0.0, rng).to_fft()
    cts = [
        lwe.rlwe_encrypt(key, rng.integers(0, prof.Q, prof.N, dtype=np.int64), 0.0, rng)
        for _ in range(7)
    ]
    a = np.stack([c.a for c in cts])
    b = np.stack([c.b for c in cts])
    out_a, out_b = lwe.external_product_batch(a, b, W)
    for i, ct in enumerate(cts):
        single = lwe.external_product(ct, W)
        assert np.array_equal(out_a[i], single.a)
        assert np.array_equal(out_b[i], single.b)
