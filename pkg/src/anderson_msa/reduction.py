"""Constants of the two spectral reductions, the reduced spectrum, notsobad annuli and probes.

Every probe takes an optional exponent ``theta`` that replaces ``30 M / K``;
the ledger always carries both values so reports show which one was used.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .disorder import DisorderField
from .lattice import Annulus, Box, coarse_nodes
from .modes import DELTA_E, HOST_FACTOR, ModeTable, host_system
from .operator import assemble
from .percolation import extract_shell, label_nodes
from .resolvent import PAIR_FRACTION, NearSingular, classify_box
from .stats import standard_error, wilson_interval

N2_CAP = 64


class InfeasibleConstants(ValueError):
    def __init__(self, message: str, best_gap: float | None = None):
        super().__init__(message)
        self.best_gap = best_gap


@dataclass(frozen=True)
class ConstantsLedger:
    m0: float
    eta0: float
    p0: float
    p: float
    b: float
    d: int
    J: float
    rho: float
    N1: int
    M: float
    r: float
    K: float
    N2: int
    beta: float
    c: float
    mu: float
    theta: float | None = None

    @property
    def paper_rate(self) -> float:
        """``30 M / K``."""
        return 30.0 * self.M / self.K

    @property
    def rate(self) -> float:
        return self.paper_rate if self.theta is None else self.theta

    @property
    def c_used(self) -> float:
        return self.rate / 2.0

    @property
    def j_paper(self) -> float:
        return 3 ** (self.d + 3) * self.b

    @property
    def j_override(self) -> bool:
        return self.J < self.j_paper

    @property
    def count_exponent(self) -> float:
        """``(N2 + 1) beta d``."""
        return (self.N2 + 1) * self.beta * self.d

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(paper_rate=self.paper_rate, rate=self.rate, c_used=self.c_used, j_paper=self.j_paper, j_override=self.j_override)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def smallest_n1(p0: float) -> int:
    n = 1
    while not 2.0 ** (1.0 / n) - 1.0 < p0:
        n += 1
    return n


def derive_constants(
    m0: float,
    eta0: float,
    p0: float,
    p: float,
    b: float = 1.0,
    d: int = 1,
    rho: float = 0.75,
    J: float | None = None,
    N2: int | None = None,
    theta: float | None = None,
) -> ConstantsLedger:
    if not 0 < p < p0:
        raise ValueError("need 0 < p < p0")
    if not 0 < eta0 < 1:
        raise ValueError("need 0 < eta0 < 1")
    if not m0 > 0:
        raise ValueError("need m0 > 0")
    if not b >= 1:
        raise ValueError("need b >= 1")
    if not 1.0 / (1.0 + p0) < rho < 1.0:
        raise InfeasibleConstants(f"rho={rho} must lie in ((1+p0)^-1, 1) = ({1 / (1 + p0):.6g}, 1)")
    if theta is not None and not theta > 0:
        raise ValueError("override theta must be positive")
    N1 = smallest_n1(p0)
    M = m0 / 30.0 ** (N1 + 2)
    r = 2.0 ** (1.0 / N1) - 1.0
    if J is None:
        J = 3 ** (d + 3) * b
    K = 1.0 + 2.0 * J * N1
    gap = p0 - p
    if N2 is None:
        vals = {n: (n + 1) * rho**n for n in range(1, N2_CAP + 1)}
        ok = [n for n, v in vals.items() if v < gap]
        if not ok:
            best = min(vals.values())
            raise InfeasibleConstants(
                f"no N2 <= {N2_CAP} gives (N2+1) rho^N2 < p0 - p = {gap:.6g}; best achievable {best:.6g}", best
            )
        N2 = ok[0]
    elif not (N2 >= 1 and (N2 + 1) * rho**N2 < gap):
        raise InfeasibleConstants(f"(N2+1) rho^N2 = {(N2 + 1) * rho**N2:.6g} is not below p0 - p = {gap:.6g}", (N2 + 1) * rho**N2)
    beta = rho**N2
    return ConstantsLedger(m0, eta0, p0, p, b, d, J, rho, N1, M, r, K, N2, beta, 15.0 * M / K, beta / 2.0, theta)


# --- reduced spectrum -----------------------------------------------------------


def nearest_distance(sorted_values: np.ndarray, energies) -> np.ndarray:
    """Distance from each energy to the nearest sorted value (``inf`` if none)."""
    energies = np.asarray(energies, dtype=float)
    if len(sorted_values) == 0:
        return np.full(energies.shape, np.inf)
    k = np.searchsorted(sorted_values, energies)
    left = sorted_values[np.clip(k - 1, 0, len(sorted_values) - 1)]
    right = sorted_values[np.clip(k, 0, len(sorted_values) - 1)]
    return np.minimum(np.abs(energies - left), np.abs(energies - right))


def spectrum_in(values, interval) -> np.ndarray:
    lo, hi = interval
    values = np.asarray(values)
    return values[(values >= lo) & (values <= hi)]


@dataclass
class ReducedSpectrum:
    base: np.ndarray
    survivors: np.ndarray
    audit: np.ndarray
    scales: list
    thresholds: list
    keep: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "base": self.base.tolist(),
            "survivors": self.survivors.tolist(),
            "audit": [[None if not math.isfinite(v) else v for v in row] for row in self.audit.tolist()],
            "scales": self.scales,
            "thresholds": self.thresholds,
        }


def reduced_scales(L: float, ledger: ConstantsLedger) -> list[float]:
    return [L ** (ledger.rho**n) for n in range(1, ledger.N2 + 1)]


def reduced_spectrum(field: DisorderField, x0, L: float, interval, ledger: ConstantsLedger, thresholds=None) -> ReducedSpectrum:
    """Energies of ``sigma^(I)(H_L)`` within ``2 exp(-rate L_n)`` of ``sigma^(I)(H_{L_n})`` for ``n = 1..N2``."""
    scales = reduced_scales(L, ledger)
    if scales[-1] < 2:
        raise ValueError(f"innermost scale L^beta = {scales[-1]:.3g} is below 2")
    if thresholds is None:
        thresholds = [2.0 * math.exp(-ledger.rate * Ln) for Ln in scales]
    x0 = tuple(x0)
    base = spectrum_in(assemble(Box(x0, L), field).eigensystem.values, interval)
    audit = np.empty((len(base), len(scales)))
    for n, Ln in enumerate(scales):
        inner = spectrum_in(assemble(Box(x0, Ln), field).eigensystem.values, interval)
        audit[:, n] = nearest_distance(inner, base)
    keep = np.all(audit <= np.asarray(thresholds)[None, :], axis=1) if len(base) else np.zeros(0, bool)
    return ReducedSpectrum(base, base[keep], audit, scales, list(thresholds), keep)


def count_bound_check(reduced: ReducedSpectrum, ledger: ConstantsLedger, C: float, L: float) -> tuple[int, float, bool]:
    """``#survivors <= C L^((N2+1) beta d)``."""
    count = len(reduced.survivors)
    bound = C * L**ledger.count_exponent
    return count, bound, bool(count <= bound)


# --- notsobad annuli --------------------------------------------------------------


@dataclass
class SingularSet:
    centers: np.ndarray
    side: float
    uncovered: np.ndarray

    def __len__(self) -> int:
        return len(self.centers)

    def covers(self, sites) -> np.ndarray:
        sites = np.atleast_2d(sites)
        out = np.zeros(len(sites), dtype=bool)
        for c in self.centers:
            out |= Box(tuple(c), self.side).contains(sites)
        return out


@dataclass
class Level:
    """Boxes ``Lambda_scale(r)`` for the listed nodes, with their goodness."""

    scale: float
    nodes: np.ndarray
    good: np.ndarray


def covered_points(annulus: Annulus, levels: list[Level]) -> np.ndarray:
    """Mask over annulus sites: some level has a good box containing ``Lambda_{L_n/5}(x)`` cut to the annulus."""
    pts = annulus.sites
    covered = np.zeros(len(pts), dtype=bool)
    for lev in levels:
        good_nodes = lev.nodes[np.asarray(lev.good, dtype=bool)]
        if len(good_nodes) == 0:
            continue
        probe = Box(annulus.center, lev.scale / 5.0)
        offs = probe.sites - np.asarray(probe.center)
        big = lev.scale / 2.0
        for i in np.flatnonzero(~covered):
            nb = pts[i] + offs
            nb = nb[np.asarray(annulus.contains(nb), dtype=bool)]
            lo, hi = nb.min(axis=0), nb.max(axis=0)
            # sup-norm box contains the set iff it contains its bounding corners
            reach = np.maximum(np.abs(good_nodes - lo), np.abs(good_nodes - hi)).max(axis=1)
            if np.any(reach < big):
                covered[i] = True
    return covered


def greedy_singular_set(points: np.ndarray, node_scale: float, cluster_side: float) -> SingularSet:
    """Scan points lexicographically; open a center at the coarse node nearest the first uncovered one."""
    from .lattice import CoarseLattice

    lat = CoarseLattice(node_scale, strict=False)
    remaining = np.asarray(points)
    centers = []
    while len(remaining):
        c = lat.nearest_node(remaining[0])
        centers.append(c)
        remaining = remaining[~Box(tuple(c), cluster_side).contains(remaining)]
    dim = points.shape[1] if np.ndim(points) == 2 else 1
    return SingularSet(np.asarray(centers, dtype=np.int64).reshape(-1, dim), cluster_side, np.asarray(points))


def notsobad_from_levels(annulus: Annulus, levels: list[Level], K2: int) -> tuple[bool, SingularSet]:
    covered = covered_points(annulus, levels)
    innermost = levels[-1].scale
    sing = greedy_singular_set(annulus.sites[~covered], innermost, 3.0 * innermost)
    ok = len(sing) <= K2
    return ok, sing


def notsobad_check(
    field: DisorderField,
    annulus: Annulus,
    energy: float,
    K2: int,
    ledger: ConstantsLedger,
    fraction: float = PAIR_FRACTION,
) -> tuple[bool, SingularSet]:
    L, Lp = annulus.outer, annulus.inner
    if not L**ledger.rho < (L - Lp) / 7.0:
        raise ValueError(f"need L^rho < (L - L')/7; got {L**ledger.rho:.4g} >= {(L - Lp) / 7:.4g}")
    outer = annulus.outer_box
    levels = []
    for Ln in reduced_scales(L, ledger):
        nodes = coarse_nodes(Ln, outer, strict=False)
        good = np.zeros(len(nodes), dtype=bool)
        for i, r in enumerate(nodes):
            try:
                good[i] = classify_box(assemble(Box(tuple(r), Ln), field), energy, ledger.m0, ledger.eta0, fraction).good
            except NearSingular:
                good[i] = False
        levels.append(Level(Ln, nodes, good))
    return notsobad_from_levels(annulus, levels, K2)


# --- first reduction ------------------------------------------------------------


def layer_scales(L0: float, ledger: ConstantsLedger) -> tuple[list[float], list[float]]:
    """``l_k = sqrt(L0)^((1+r)^k)`` and ``L_k = L_{k-1} + 2 J l_k`` for ``k = 0..N1``."""
    l0 = math.sqrt(L0)
    ls = [l0 ** ((1 + ledger.r) ** k) for k in range(ledger.N1 + 1)]
    Ls = [float(L0)]
    for k in range(1, ledger.N1 + 1):
        Ls.append(Ls[-1] + 2 * ledger.J * ls[k])
    return ls, Ls


def energy_grid(interval, spacing: float) -> np.ndarray:
    """Centers ``E_{0,i}`` with gaps ``<= spacing`` whose ``spacing/2``-windows cover ``interval``."""
    lo, hi = interval
    n = max(1, math.ceil((hi - lo) / spacing))
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


@dataclass
class FirstReductionReport:
    member: bool
    failed_layer: int | None
    failed_energy: float | None
    layer_scales: list
    layer_sides: list
    grid_size: int
    distances: list
    w: float | None
    w_gate: float
    final_distance: float | None
    threshold: float
    paper_threshold: float
    holds: bool | None

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, list):
                return [clean(u) for u in v]
            return v

        return {k: clean(v) for k, v in asdict(self).items()}


def first_reduction_probe(
    field: DisorderField,
    x0,
    L0: float,
    ledger: ConstantsLedger,
    energy: float,
    interval,
    w: float | None = None,
    grid_spacing: float | None = None,
    fraction: float = PAIR_FRACTION,
) -> FirstReductionReport:
    """Layered shell event and the chain ``dist(E, sigma^(I)(H_{L_k}))``, ``k = 0..N1``."""
    x0 = tuple(x0)
    m0, eta0 = ledger.m0, ledger.eta0
    ls, Ls = layer_scales(L0, ledger)
    if grid_spacing is None:
        grid_spacing = 2.0 * math.exp(-m0 * ls[0])
    grid = energy_grid(interval, grid_spacing)
    spectra = [spectrum_in(assemble(Box(x0, Lk), field).eigensystem.values, interval) for Lk in Ls]
    distances = [float(nearest_distance(s, [energy])[0]) for s in spectra]
    L = Ls[-1]
    paper_thr = math.exp(-ledger.paper_rate * L)
    thr = math.exp(-ledger.rate * L)
    # 30 M sqrt(L/K) = (30 M / K) sqrt(L K)
    gate = math.exp(-ledger.rate * math.sqrt(L * ledger.K))

    def shell_ok(scale, inner, outer, E):
        nf = label_nodes(field, Annulus(x0, outer, inner), scale, E, m0, eta0, fraction=fraction, strict=False)
        return extract_shell(nf) is not None

    layers = [(0, ls[0], math.sqrt(L0), L0, grid)]
    layers += [(k, ls[k], Ls[k - 1], Ls[k], spectra[k - 1]) for k in range(1, ledger.N1 + 1)]
    for k, scale, inner, outer, energies in layers:
        for E in energies:
            if not shell_ok(scale, inner, outer, float(E)):
                return FirstReductionReport(
                    False, k, float(E), ls, Ls, len(grid), distances, w, gate, None, thr, paper_thr, None
                )
    if w is not None and w < gate:
        return FirstReductionReport(True, None, None, ls, Ls, len(grid), distances, w, gate, distances[-1], thr, paper_thr, None)
    return FirstReductionReport(
        True, None, None, ls, Ls, len(grid), distances, w, gate, distances[-1], thr, paper_thr, bool(distances[-1] <= thr)
    )


def strongest_mode(field: DisorderField, x0, side: float, interval, nu: float, delta: float = DELTA_E) -> tuple[float, float] | None:
    """Host eigenvalue in ``interval`` with the largest ``W(x0; E)``, and that value."""
    _, sys = host_system(field, x0, side)
    grid = spectrum_in(sys.values, interval)
    if len(grid) == 0:
        return None
    w = ModeTable(sys, tuple(x0), nu).w_point(grid, delta)
    k = int(np.argmax(w))
    return float(grid[k]), float(w[k])


def first_reduction_sample(field, x0, L0, ledger, interval, nu, host_factor=HOST_FACTOR, **kw) -> FirstReductionReport | None:
    """Run the probe at the host energy most concentrated at ``x0`` (``None`` if ``interval`` holds no host level)."""
    _, Ls = layer_scales(L0, ledger)
    pick = strongest_mode(field, x0, host_factor * Ls[-1], interval, nu)
    if pick is None:
        return None
    E, w = pick
    return first_reduction_probe(field, x0, L0, ledger, E, interval, w=w, **kw)


# --- key theorem -----------------------------------------------------------------


@dataclass
class KeyTheoremReport:
    L: float
    energies: int
    implication_violations: int
    product_violations: int
    max_product: float
    w_gate: float
    wl_bound: float
    product_bound: float
    boundary_mass: float

    @property
    def violated(self) -> bool:
        return self.product_violations > 0

    def to_dict(self) -> dict:
        return asdict(self)


def key_theorem_probe(
    field: DisorderField,
    x0,
    L: float,
    interval,
    ledger: ConstantsLedger,
    nu: float,
    delta: float = DELTA_E,
    host_factor: float = HOST_FACTOR,
) -> KeyTheoremReport:
    """Evaluate ``W > e^{-c L^mu} => W_L <= e^{-c L}`` and ``W W_L < e^{-c L^mu / 2}`` on host eigenvalues in ``interval``.

    ``c`` is ``rate / 2`` (``15 M / K`` without override); energies closer than
    ``e^{-c L^mu}`` to the ends of ``interval`` are skipped.
    """
    c, mu = ledger.c_used, ledger.mu
    gate = math.exp(-c * L**mu)
    wl_bound = math.exp(-c * L)
    prod_bound = math.exp(-0.5 * c * L**mu)
    _, sys = host_system(field, x0, host_factor * L)
    lo, hi = interval
    ev = sys.values
    grid = ev[(ev >= lo + gate) & (ev <= hi - gate)]
    table = ModeTable(sys, tuple(x0), nu)
    if len(grid) == 0:
        return KeyTheoremReport(L, 0, 0, 0, 0.0, gate, wl_bound, prod_bound, 0.0)
    wp = table.w_point(grid, delta)
    wl = table.w_annulus(grid, L, delta)
    prod = wp * wl
    impl = int(np.sum((wp > gate) & (wl > wl_bound)))
    pv = int(np.sum(prod >= prod_bound))
    core = Box(sys.box.center, 0.8 * sys.box.side)
    outside = ~core.contains(sys.box.sites)
    mask = (ev >= lo + gate) & (ev <= hi - gate)
    bmass = float(np.max(np.sum(sys.vectors[outside][:, mask] ** 2, axis=0)))
    return KeyTheoremReport(L, len(grid), impl, pv, float(prod.max()), gate, wl_bound, prod_bound, bmass)


@dataclass
class ViolationSummary:
    rate: float
    interval: tuple[float, float]
    stderr: float
    target: float
    samples: int


def key_theorem_rate(field, x0, L, interval, ledger, nu, samples, **kw) -> tuple[ViolationSummary, list[KeyTheoremReport]]:
    reports = [key_theorem_probe(field.for_sample(i), x0, L, interval, ledger, nu, **kw) for i in range(samples)]
    k = sum(r.violated for r in reports)
    rate = k / samples
    return (
        ViolationSummary(rate, wilson_interval(k, samples), standard_error(rate, samples), L ** (-ledger.p * ledger.d), samples),
        reports,
    )
