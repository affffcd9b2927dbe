"""Deterministic, restriction-consistent random potentials.

Every on-site value is a pure function of ``(master seed, site coordinates)``: a
SplitMix64-style finalizer is applied to the seed and folded over the
coordinates, so the field never has to be materialized and any sub-box sees
exactly the values of any box containing it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lattice import Box

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def hash_sites(seed: int, sites) -> np.ndarray:
    """64-bit hash of ``(seed, coords)`` for each row of ``sites``."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    with np.errstate(over="ignore"):
        h = _mix(np.full(len(sites), np.uint64(seed & _MASK64)) + _GOLDEN)
        for k in range(sites.shape[1]):
            c = sites[:, k].astype(np.uint64)  # two's complement wrap keeps negatives distinct
            h = _mix(h ^ (c + _GOLDEN * np.uint64(k + 1)))
    return h


def uniforms(seed: int, sites) -> np.ndarray:
    """Uniform [0, 1) variates, 53 bits each, keyed by site."""
    return (hash_sites(seed, sites) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for ``(master, key1, key2, ...)``; used for per-sample fields."""
    with np.errstate(over="ignore"):
        h = _mix(np.array([master & _MASK64], dtype=np.uint64) + _GOLDEN)
        for k in keys:
            h = _mix(h ^ (np.uint64(k & _MASK64) + _GOLDEN))
    return int(h[0])


@dataclass(frozen=True)
class Distribution:
    """Single-site law ``mu`` times the coupling ``lam``.

    ``kind`` is ``"bernoulli"`` (values ``v0``/``v1``, ``P(v1) = q``),
    ``"uniform"`` (on ``[a, b)``) or ``"point"`` (always ``v0``).
    """

    kind: str = "bernoulli"
    lam: float = 8.0
    v0: float = 0.0
    v1: float = 1.0
    q: float = 0.5
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bernoulli", "uniform", "point"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "bernoulli":
            if not 0.0 < self.q < 1.0:
                raise ValueError("Bernoulli weight q must lie in (0, 1)")
            if self.v0 == self.v1:
                raise ValueError("Bernoulli support needs two distinct points")
        if self.kind == "uniform" and not self.a < self.b:
            raise ValueError("uniform distribution needs a < b")

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms to values of ``mu`` (before the coupling)."""
        if self.kind == "bernoulli":
            return np.where(u < self.q, self.v1, self.v0)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        return np.full(np.shape(u), float(self.v0))

    def cdf(self, x) -> np.ndarray:
        """CDF of ``lam * mu``."""
        x = np.asarray(x, dtype=float)
        if self.lam == 0:
            return (x >= 0).astype(float)
        y = x / self.lam
        if self.kind == "bernoulli":
            return (1 - self.q) * (x >= self.lam * self.v0) + self.q * (x >= self.lam * self.v1)
        if self.kind == "uniform":
            frac = np.clip((y - self.a) / (self.b - self.a), 0.0, 1.0)
            return frac if self.lam > 0 else 1.0 - frac
        return (x >= self.lam * self.v0).astype(float)

    @property
    def support_bound(self) -> float:
        """``max |lam * s|`` over the support."""
        if self.kind == "bernoulli":
            pts = (self.v0, self.v1)
        elif self.kind == "uniform":
            pts = (self.a, self.b)
        else:
            pts = (self.v0,)
        return abs(self.lam) * max(abs(p) for p in pts)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("kind", "lam", "v0", "v1", "q", "a", "b")}


@dataclass(frozen=True)
class DisorderField:
    seed: int
    distribution: Distribution = Distribution()

    def potential(self, sites) -> np.ndarray:
        """``lam * omega`` at each row of ``sites``."""
        sites = np.asarray(sites)
        if sites.size == 0:
            return np.zeros(len(sites))
        return self.distribution.lam * self.distribution.sample(uniforms(self.seed, sites))

    def potential_at(self, site) -> float:
        return float(self.potential(np.atleast_2d(site))[0])

    def for_sample(self, index: int) -> "DisorderField":
        return DisorderField(derive_seed(self.seed, index), self.distribution)


@dataclass(frozen=True)
class PatchedField:
    """``base`` inside ``box``, an independent field outside it."""

    base: DisorderField
    box: Box
    outside_seed: int

    @property
    def distribution(self) -> Distribution:
        return self.base.distribution

    def potential(self, sites) -> np.ndarray:
        sites = np.atleast_2d(np.asarray(sites))
        inside = self.box.contains(sites)
        other = DisorderField(self.outside_seed, self.base.distribution)
        return np.where(inside, self.base.potential(sites), other.potential(sites))

    def potential_at(self, site) -> float:
        return float(self.potential(np.atleast_2d(site))[0])


def event_sigma_algebra_check(
    field: DisorderField,
    box: Box,
    statistic: Callable,
    trials: int = 100,
    salt: int = 0x5EED,
) -> bool:
    """True iff ``statistic(field)`` is unchanged whenever the exterior of ``box`` is rerandomized.

    ``statistic`` receives any object with a ``potential(sites)`` method.
    """
    ref = statistic(field)
    for t in range(trials):
        patched = PatchedField(field, box, derive_seed(field.seed, salt, t))
        if not _same(statistic(patched), ref):
            return False
    return True


def _same(a, b) -> bool:
    try:
        return bool(np.array_equal(np.asarray(a), np.asarray(b)))
    except (TypeError, ValueError):
        return a == b
