"""Finite-volume W quantities built from host-box eigenfunctions.

A *proxy* for the generalized eigenfunctions at energy ``E`` is any host
eigenpair with ``|E_k - E| <= delta``. On such a mode

    W(x; E)   = max |psi(x)| / ||T_x^{-1} psi||
    W_L(x; E) = max ||psi||_{Lambda_{2L,L}(x)} / ||T_x^{-1} psi||

with ``(T_x^{-1} psi)(y) = <y - x>^{-nu} psi(y)``; both are 0 when no mode is
in the window.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .disorder import DisorderField
from .lattice import Annulus, Box, CoarseLattice, Weight
from .operator import EigenSystem, assemble
from .resolvent import PAIR_FRACTION, NearSingular, classify_box
from .stats import loglog_slope

#: Default energy window for selecting proxy modes.
DELTA_E = 1e-6
#: Hosts must be at least this many times the largest probed scale.
HOST_FACTOR = 3


@dataclass(eq=False)
class ModeProxy:
    box: Box
    energy: float
    vector: np.ndarray
    nu: float
    _norms: dict = field(default_factory=dict, repr=False)

    def inv_weight_norm(self, anchor) -> float:
        """``||T_anchor^{-1} psi||`` over the host box (cached per anchor)."""
        key = tuple(int(a) for a in anchor)
        if key not in self._norms:
            w = Weight(self.nu, key).values(self.box.sites)
            self._norms[key] = float(np.linalg.norm(self.vector / w))
        return self._norms[key]

    def at(self, site) -> float:
        i = self.box.index.get(tuple(int(s) for s in site))
        if i is None:
            raise ValueError(f"site {tuple(site)} is outside the host box")
        return float(self.vector[i])

    def boundary_mass(self, shell: float = 0.1) -> float:
        """Squared mass within ``shell * side`` of the host faces."""
        core = Box(self.box.center, (1.0 - 2.0 * shell) * self.box.side)
        outside = ~core.contains(self.box.sites)
        return float(np.sum(self.vector[outside] ** 2))


def host_system(field: DisorderField, center, side: float):
    """Hamiltonian and eigensystem on ``Lambda_side(center)``."""
    H = assemble(Box(tuple(center), side), field)
    return H, H.eigensystem


def proxies(sys: EigenSystem, energy: float, nu: float, delta: float = DELTA_E) -> list[ModeProxy]:
    lo = np.searchsorted(sys.values, energy - delta, side="left")
    hi = np.searchsorted(sys.values, energy + delta, side="right")
    return [ModeProxy(sys.box, float(sys.values[k]), sys.vectors[:, k], nu) for k in range(lo, hi)]


def w_point(modes: Sequence[ModeProxy], anchor) -> float:
    best = 0.0
    for p in modes:
        best = max(best, abs(p.at(anchor)) / p.inv_weight_norm(anchor))
    return best


def w_annulus(modes: Sequence[ModeProxy], anchor, L: float) -> float:
    best = 0.0
    for p in modes:
        ann = Annulus(tuple(anchor), 2 * L, L)
        if not ann.outer_box.is_subset_of(p.box):
            raise ValueError(f"annulus of scale {L} around {tuple(anchor)} exceeds the host box")
        mass = np.linalg.norm(p.vector[ann.contains(p.box.sites)])
        best = max(best, float(mass) / p.inv_weight_norm(anchor))
    return best


@dataclass(eq=False)
class ModeTable:
    """Per-mode ingredients of the W quantities for one host and one anchor, all modes at once."""

    sys: EigenSystem
    anchor: tuple[int, ...]
    nu: float
    amplitude: np.ndarray = field(init=False)
    inv_norm: np.ndarray = field(init=False)

    def __post_init__(self):
        box = self.sys.box
        i = box.index.get(tuple(self.anchor))
        if i is None:
            raise ValueError("anchor outside the host box")
        w = Weight(self.nu, self.anchor).values(box.sites)
        self.amplitude = np.abs(self.sys.vectors[i])
        self.inv_norm = np.sqrt(np.sum((self.sys.vectors / w[:, None]) ** 2, axis=0))

    def annulus_mass(self, L: float) -> np.ndarray:
        box = self.sys.box
        ann = Annulus(self.anchor, 2 * L, L)
        if not ann.outer_box.is_subset_of(box):
            raise ValueError(f"annulus of scale {L} exceeds the host box")
        inside = ann.contains(box.sites)
        return np.sqrt(np.sum(self.sys.vectors[inside] ** 2, axis=0))

    def _window_max(self, ratio: np.ndarray, energies, delta) -> np.ndarray:
        ev = self.sys.values
        lo = np.searchsorted(ev, np.asarray(energies) - delta, side="left")
        hi = np.searchsorted(ev, np.asarray(energies) + delta, side="right")
        return np.array([ratio[a:b].max() if b > a else 0.0 for a, b in zip(lo, hi)])

    def w_point(self, energies, delta: float = DELTA_E) -> np.ndarray:
        return self._window_max(self.amplitude / self.inv_norm, energies, delta)

    def w_annulus(self, energies, L: float, delta: float = DELTA_E) -> np.ndarray:
        return self._window_max(self.annulus_mass(L) / self.inv_norm, energies, delta)


def dump_profile(mode: ModeProxy, out: IO[str]) -> None:
    """CSV ``site..., abs_psi`` decay profile."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([f"x{k}" for k in range(mode.box.dim)] + ["abs_psi"])
    for s, v in zip(mode.box.sites, mode.vector):
        writer.writerow([*map(int, s), repr(abs(float(v)))])


# --- fixed-energy trap -------------------------------------------------------


@dataclass
class TrapReport:
    in_event: bool
    bad_nodes: list
    energies: list
    w_values: list
    bound: float
    window: float
    holds: bool | None
    proxies_used: int
    boundary_mass: float

    def to_dict(self) -> dict:
        return {
            "in_event": self.in_event,
            "bad_nodes": self.bad_nodes,
            "bound": self.bound,
            "window": self.window,
            "holds": self.holds,
            "max_w": max(self.w_values, default=0.0),
            "proxies_used": self.proxies_used,
            "boundary_mass": self.boundary_mass,
        }


def trap_event(field, x0, L: float, E0: float, m0: float, eta: float, gamma: float = 0.2, fraction=PAIR_FRACTION):
    """Good-box event: every ``Lambda_{gamma L}(r)``, ``r`` coarse in ``Lambda_{2L+, L-}(x0)``, is good at ``E0``.

    ``L+- = (1 +- gamma) L``. Returns ``(holds, bad_nodes)``.
    """
    l = gamma * L
    region = Annulus(tuple(x0), 2 * (1 + gamma) * L, (1 - gamma) * L)
    lat = CoarseLattice(l, strict=False)
    nodes = lat.nodes_in_window(region.center, region.outer / 2.0)
    nodes = nodes[np.asarray(region.contains(nodes), dtype=bool)]
    bad = []
    for r in nodes:
        try:
            ok = classify_box(assemble(Box(tuple(r), l), field), E0, m0, eta, fraction).good
        except NearSingular:
            ok = False
        if not ok:
            bad.append([int(c) for c in r])
    return not bad, bad


def trap_check(
    field: DisorderField,
    x0,
    L: float,
    E0: float,
    m: float,
    m_prime: float,
    m0: float,
    eta: float,
    nu: float,
    gamma: float = 0.2,
    theta_adj: float = 1.0,
    points: int = 11,
    delta: float = DELTA_E,
    host_factor: float = HOST_FACTOR,
    fraction: float = PAIR_FRACTION,
) -> TrapReport:
    """Check ``W_L(x0; E) <= exp(-m gamma L theta_adj)`` for ``|E - E0| <= exp(-m' gamma L theta_adj)``.

    Only evaluated when the good-box event holds; the grid is ``points``
    uniform energies plus every host eigenvalue inside the window.
    """
    if not m < m_prime < m0:
        raise ValueError("need m < m' < m0")
    ok, bad = trap_event(field, x0, L, E0, m0, eta, gamma, fraction)
    bound = math.exp(-m * gamma * L * theta_adj)
    window = math.exp(-m_prime * gamma * L * theta_adj)
    if not ok:
        return TrapReport(False, bad, [], [], bound, window, None, 0, 0.0)
    _, sys = host_system(field, x0, host_factor * L)
    grid = np.linspace(E0 - window, E0 + window, points)
    inside = sys.values[(sys.values >= E0 - window) & (sys.values <= E0 + window)]
    grid = np.unique(np.concatenate([grid, inside]))
    vals, used, bmass = [], 0, 0.0
    for E in grid:
        ps = proxies(sys, float(E), nu, delta)
        used += len(ps)
        bmass = max([bmass] + [p.boundary_mass() for p in ps])
        vals.append(w_annulus(ps, x0, L))
    return TrapReport(True, [], grid.tolist(), vals, bound, window, bool(max(vals) <= bound), used, bmass)


# --- product decay ------------------------------------------------------------


@dataclass
class DecayTable:
    scales: list
    means: list
    fitted_exponent: float
    samples: int
    s: float

    def rows(self):
        return list(zip(self.scales, self.means))


def product_sup(table: ModeTable, interval, L: float, s: float, delta: float = DELTA_E) -> float:
    """``sup_E (W W_L)^s`` over the host eigenvalues in ``interval``."""
    ev = table.sys.values
    grid = ev[(ev >= interval[0]) & (ev <= interval[1])]
    if s == 0:
        return 1.0
    if len(grid) == 0:
        return 0.0
    prod = table.w_point(grid, delta) * table.w_annulus(grid, L, delta)
    return float(np.max(prod) ** s)


def product_decay_scan(
    field: DisorderField,
    x0,
    interval,
    ks: Sequence[int],
    s: float,
    nu: float,
    samples: int,
    delta: float = DELTA_E,
    host_factor: float = HOST_FACTOR,
) -> DecayTable:
    """Mean over samples of ``sup_E (W W_L)^s`` at ``L = 2^k``, with a log-log fitted exponent."""
    scales = [2**k for k in ks]
    host = host_factor * max(scales)
    acc = np.zeros(len(scales))
    for i in range(samples):
        _, sys = host_system(field.for_sample(i), x0, host)
        table = ModeTable(sys, tuple(x0), nu)
        acc += [product_sup(table, interval, L, s, delta) for L in scales]
    means = (acc / samples).tolist()
    slope = loglog_slope(scales, means) if len(scales) > 1 and all(v > 0 for v in means) else math.nan
    return DecayTable(scales, means, slope, samples, s)
