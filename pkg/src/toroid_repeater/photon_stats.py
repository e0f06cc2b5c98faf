"""Photon-counting model used to discriminate 0, 1 or 2 bright atoms.

The forward photon number seen by a detector is Poisson with a mean set by
how many probed atoms are bright. A count inside the acceptance window
heralds "exactly one bright".
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import mpmath
import numpy as np

# 30 significant digits leave the final rounding to double as the only error,
# which keeps far-tail terms (log-probability near -700) exact to ~1 ulp
_MP = mpmath.MPContext()
_MP.dps = 30


class CountClass(enum.Enum):
    BELOW_WINDOW = "below"
    IN_WINDOW = "in"
    ABOVE_WINDOW = "above"


@dataclass(frozen=True)
class PhotonCountModel:
    lambda_dark: float = 10.0
    lambda_one: float = 100.0
    lambda_two: float = 200.0
    window_lo: int = 40
    window_hi: int = 120

    def __post_init__(self):
        if not 0 <= self.lambda_dark < self.lambda_one < self.lambda_two:
            raise ValueError("need 0 <= lambda_dark < lambda_one < lambda_two")
        if not 0 <= self.window_lo <= self.window_hi:
            raise ValueError("need 0 <= window_lo <= window_hi")

    def mean_for(self, bright: int) -> float:
        return (self.lambda_dark, self.lambda_one, self.lambda_two)[bright]


@dataclass(frozen=True)
class DiscriminationProfile:
    p0: float
    p1: float
    p2: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.p0, self.p1, self.p2)


def poisson_pmf(n: int, lam: float) -> float:
    """Poisson probability of ``n`` counts at mean ``lam``.

    Evaluated as ``exp(n log lam - lam - lgamma(n + 1))`` in extended precision,
    so it neither overflows nor loses relative accuracy deep in the tails.
    """
    if not lam > 0 or not math.isfinite(lam):
        raise ValueError(f"lambda must be positive and finite, got {lam}")
    if n < 0:
        return 0.0
    x = _MP.mpf(lam)
    return float(_MP.exp(n * _MP.log(x) - x - _MP.loggamma(n + 1)))


def _support_cap(lam: float) -> int:
    return int(math.ceil(lam + 40.0 * math.sqrt(lam) + 60.0))


def window_probability(lam: float, lo: int, hi: Optional[int] = None) -> float:
    """P(lo <= n <= hi); ``hi=None`` caps the sum far into the upper tail."""
    if lo < 0 or (hi is not None and hi < lo):
        raise ValueError(f"invalid window [{lo}, {hi}]")
    if hi is None:
        hi = max(lo, _support_cap(lam))
    terms = sorted(poisson_pmf(n, lam) for n in range(lo, hi + 1))
    return min(math.fsum(terms), 1.0)


@lru_cache(maxsize=256)
def discrimination_profile(model: PhotonCountModel) -> DiscriminationProfile:
    lo, hi = model.window_lo, model.window_hi
    return DiscriminationProfile(
        window_probability(model.lambda_dark, lo, hi) if model.lambda_dark > 0 else float(lo == 0),
        window_probability(model.lambda_one, lo, hi),
        window_probability(model.lambda_two, lo, hi),
    )


def sample_count(lam: float, rng: np.random.Generator) -> int:
    # numpy's Poisson sampler is exact (inversion below lam=10, PTRS rejection above)
    if lam == 0:
        return 0
    return int(rng.poisson(lam))


def classify(n: int, model: PhotonCountModel) -> CountClass:
    if n < model.window_lo:
        return CountClass.BELOW_WINDOW
    if n > model.window_hi:
        return CountClass.ABOVE_WINDOW
    return CountClass.IN_WINDOW


def threshold_bit(n: int, lo: int) -> int:
    """Readout bit: 0 for a dark atom (``n < lo``), 1 for a bright one."""
    return 0 if n < lo else 1


def detected_mean(L0_km: float, L_att_km: float, t_e: float, tau_B: float) -> float:
    """Expected detected photons from one bright atom over a link of length ``L0_km``."""
    if min(L_att_km, t_e, tau_B) <= 0 or L0_km < 0:
        raise ValueError("detected_mean needs positive L_att, t_e, tau_B and L0 >= 0")
    return math.exp(-L0_km / (2.0 * L_att_km)) * t_e / tau_B
