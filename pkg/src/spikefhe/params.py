"""Parameter profiles for the encrypted-inference stack.

A profile fixes every lattice constant the library needs: the LWE dimension
``n`` and modulus ``q``, the ring dimension ``N`` and modulus ``Q``, the
message space ``p``, gadget and key-switch bases, and the noise widths.
Profiles live in ``profiles.json`` next to this module so that parameter
sets are versioned data, not code.

Two families ship by default.  The ``std128-exact-*`` profiles run the
production lattice shape with zero sampled noise and ``q = Q = 2N``; every
operation is then deterministic and bootstrapping is exact for all messages.
The ``*-noisy-*`` profiles carry real discrete-Gaussian noise and a genuine
modulus switch, and are the ones the noise-accounting tests run against.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources

from .ring import RingParams

PROFILE_RESOURCE = "profiles.json"

# Fields that define a profile's behaviour, in canonical order for hashing.
_HASH_FIELDS = (
    "n",
    "N",
    "q",
    "Q",
    "p",
    "bg_bits",
    "bks_bits",
    "sigma_lwe",
    "sigma_ring",
    "sigma_ksk",
)


class ParameterError(ValueError):
    """Raised when a profile is internally inconsistent."""


@dataclass(frozen=True)
class ParamProfile:
    """A complete, validated parameter set.

    Attributes:
        name: Profile identifier, e.g. ``"std128-exact-p1024"``.
        n: LWE dimension.
        N: Ring dimension (power of two).
        q: LWE ciphertext modulus.
        Q: Ring ciphertext modulus.
        p: Plaintext message space size.
        bg_bits: log2 of the gadget (blind rotation) decomposition base.
        bks_bits: log2 of the key-switch decomposition base.
        sigma_lwe: Gaussian width of fresh LWE noise, in units of q.
        sigma_ring: Gaussian width of ring (RLWE/RGSW) noise, in units of Q.
        sigma_ksk: Gaussian width of key-switch key noise, in units of Q.
    """

    name: str
    n: int
    N: int
    q: int
    Q: int
    p: int
    bg_bits: int
    bks_bits: int
    sigma_lwe: float
    sigma_ring: float
    sigma_ksk: float

    def __post_init__(self) -> None:
        for field in ("n", "N", "q", "Q", "p", "bg_bits", "bks_bits"):
            value = getattr(self, field)
            if not isinstance(value, int) or value <= 0:
                raise ParameterError(f"{field} must be a positive integer, got {value!r}")
        for field in ("N", "q", "Q", "p"):
            value = getattr(self, field)
            if value & (value - 1):
                raise ParameterError(f"{field} must be a power of two, got {value}")
        if self.p > 2 * self.N:
            raise ParameterError(
                f"message space p={self.p} exceeds the 2N={2 * self.N} slots one "
                "ring rotation can address"
            )
        if self.q % self.p:
            raise ParameterError(f"p={self.p} must divide q={self.q}")
        fully_exact = (
            self.sigma_lwe == 0.0
            and self.sigma_ring == 0.0
            and self.sigma_ksk == 0.0
            and self.q == self.Q
        )
        if self.q // self.p < 2 and not fully_exact:
            raise ParameterError(
                f"q/p={self.q // self.p} leaves no room for noise; a one-unit "
                "slot is only usable in a fully exact profile"
            )
        if self.Q % self.q:
            raise ParameterError(f"q={self.q} must divide Q={self.Q}")
        if (2 * self.N) % self.q:
            raise ParameterError(
                f"q={self.q} must divide 2N={2 * self.N} so phases map to "
                "rotation exponents without rounding"
            )
        if self.Q % self.p:
            raise ParameterError(f"p={self.p} must divide Q={self.Q}")
        for field in ("sigma_lwe", "sigma_ring", "sigma_ksk"):
            if getattr(self, field) < 0:
                raise ParameterError(f"{field} must be non-negative")

    # -- derived quantities -------------------------------------------------

    @property
    def delta(self) -> int:
        """Encoding step: each message occupies a slot of this width in Z_q."""
        return self.q // self.p

    @property
    def bg(self) -> int:
        return 1 << self.bg_bits

    @property
    def bks(self) -> int:
        return 1 << self.bks_bits

    @property
    def ell_g(self) -> int:
        """Gadget length: digits needed to cover Q in base 2^bg_bits."""
        return math.ceil(math.log2(self.Q) / self.bg_bits)

    @property
    def ell_ks(self) -> int:
        return math.ceil(math.log2(self.Q) / self.bks_bits)

    @property
    def ring(self) -> RingParams:
        return RingParams(N=self.N, Q=self.Q)

    @property
    def is_exact(self) -> bool:
        """True when no operation can introduce error of any kind."""
        return (
            self.sigma_lwe == 0.0
            and self.sigma_ring == 0.0
            and self.sigma_ksk == 0.0
            and self.q == self.Q
        )

    @property
    def noise_limit(self) -> float:
        """Largest tolerable error magnitude: half an encoding slot."""
        return self.q / (2 * self.p)

    def post_bootstrap_sigma(self) -> float:
        """Predicted output-noise width of one bootstrap, in units of q.

        Standard average-case accounting: balanced base-B digits behave like
        uniforms on (-B/2, B/2], each CMux adds 2*ell_g*N digit-by-sample
        products against width-sigma_ring keys and the (X^a - 1) factor
        doubles the variance; the key switch adds N*ell_ks products against
        sigma_ksk keys; switching Q -> q rounds n+1 coefficients.  Exact
        profiles report zero.
        """
        var_dig_g = (self.bg**2) / 12.0
        var_br = self.n * 2.0 * (2 * self.ell_g) * self.N * var_dig_g * self.sigma_ring**2
        var_dig_ks = (self.bks**2) / 12.0
        var_ks = self.N * self.ell_ks * var_dig_ks * self.sigma_ksk**2
        scale = self.q / self.Q
        var_ms = 0.0 if self.q == self.Q else (1.0 + self.n / 2.0) / 12.0
        return math.sqrt((var_br + var_ks) * scale**2 + var_ms)

    def param_hash(self) -> str:
        """Stable short digest of the numeric parameters (not the name)."""
        blob = json.dumps({f: getattr(self, f) for f in _HASH_FIELDS}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_message_space(self, p: int) -> "ParamProfile":
        """Same lattice, different message space."""
        prof = replace(self, p=p, name=f"{self.name}@p{p}")
        return prof


def _load_raw() -> dict:
    text = resources.files(__package__).joinpath(PROFILE_RESOURCE).read_text()
    data = json.loads(text)
    if data.get("format") != "spikefhe-profiles":
        raise ParameterError("unrecognized profile file format")
    return data["profiles"]


@lru_cache(maxsize=None)
def get_profile(name: str) -> ParamProfile:
    raw = _load_raw()
    if name not in raw:
        known = ", ".join(sorted(raw))
        raise ParameterError(f"unknown profile {name!r}; available: {known}")
    entry = {k: v for k, v in raw[name].items() if k != "description"}
    return ParamProfile(name=name, **entry)


def list_profiles() -> list[str]:
    return sorted(_load_raw())


def profile_for_message_space(p: int) -> ParamProfile:
    """Pick the standard profile that hosts a p-slot message space.

    Inference wants the exact production-shape lattice, so this maps a
    message-space requirement straight to the std128-exact family.
    """
    for name in ("std128-exact-p1024", "std128-exact-p2048"):
        prof = get_profile(name)
        if prof.p == p:
            return prof
    base = get_profile("std128-exact-p1024")
    if p <= 2 * base.N and base.q % p == 0 and base.q // p >= 2:
        return base.with_message_space(p)
    raise ParameterError(f"no standard profile supports message space p={p}")
