"""Green functions, box goodness, and the deterministic resolvent identities."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .lattice import Box, boundary_pairs
from .operator import FiniteHamiltonian

#: Default minimum pair distance as a fraction of the box side.
PAIR_FRACTION = 0.01
#: ``E`` closer than this times ``||H||`` to the spectrum is treated as an eigenvalue.
SINGULAR_RTOL = 1e-12


class NearSingular(ArithmeticError):
    """The energy sits (numerically) on the spectrum of the finite box."""

    def __init__(self, energy: float, distance: float):
        super().__init__(f"E={energy!r} is within {distance:.3g} of the box spectrum")
        self.energy = energy
        self.distance = distance


@dataclass(eq=False)
class GreenFunction:
    box: Box
    energy: float
    matrix: np.ndarray
    dist_to_spectrum: float

    @property
    def norm(self) -> float:
        return 1.0 / self.dist_to_spectrum

    def entry(self, x, y) -> float:
        idx = self.box.index
        return float(self.matrix[idx[tuple(x)], idx[tuple(y)]])


def spectral_distance(H: FiniteHamiltonian, E: float) -> float:
    ev = H.eigensystem.values
    k = np.searchsorted(ev, E)
    cand = [abs(ev[j] - E) for j in (k - 1, k) if 0 <= j < len(ev)]
    return float(min(cand))


def green(H: FiniteHamiltonian, E: float) -> GreenFunction:
    dist = spectral_distance(H, E)
    if dist == 0.0 or dist < SINGULAR_RTOL * H.norm:
        raise NearSingular(E, dist)
    n = len(H)
    A = H.matrix - E * np.eye(n)
    G = scipy.linalg.solve(A, np.eye(n), assume_a="sym")
    G = 0.5 * (G + G.T)
    return GreenFunction(H.box, float(E), G, dist)


@dataclass
class GoodnessReport:
    regular: bool
    good: bool
    jgood: bool
    margin: float
    norm: float
    m: float
    eta: float
    fraction: float
    side: float

    def to_json(self) -> str:
        d = asdict(self)
        d = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}
        return json.dumps(d, sort_keys=True)


def pair_distances(sites: np.ndarray) -> np.ndarray:
    diff = sites[:, None, :] - sites[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1, dtype=float))


def classify_green(G: GreenFunction, m: float, eta: float, fraction: float = PAIR_FRACTION) -> GoodnessReport:
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if not m > 0:
        raise ValueError("m must be positive")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("pair fraction must lie in (0, 1]")
    L = G.box.side
    r = pair_distances(G.box.sites)
    mask = (r >= fraction * L) & (r > 0)
    if np.any(mask):
        with np.errstate(divide="ignore"):
            logg = np.log(np.abs(G.matrix[mask]))
        # -log|G|/r - m >= 0  <=>  |G| <= exp(-m r)
        margin = float(np.min(-logg / r[mask] - m))
        regular = bool(np.all(logg <= -m * r[mask]))
    else:
        margin, regular = math.inf, True
    lognorm = -math.log(G.dist_to_spectrum)
    cap = L ** (1.0 - eta)
    good = regular and lognorm <= cap
    jgood = regular and lognorm <= cap + math.log(2.0)
    return GoodnessReport(regular, good, jgood, margin, G.norm, m, eta, fraction, float(L))


def classify_box(H: FiniteHamiltonian, E: float, m: float, eta: float, fraction: float = PAIR_FRACTION) -> GoodnessReport:
    return classify_green(green(H, E), m, eta, fraction)


def check_resolvent_identity(H: FiniteHamiltonian, E: float, E0: float) -> tuple[float, float]:
    """Max-entry residual of ``G_E - G_E0 - (E - E0) G_E G_E0`` and the scale ``||G_E|| ||G_E0||``."""
    G = green(H, E)
    G0 = green(H, E0)
    res = G.matrix - G0.matrix - (E - E0) * (G.matrix @ G0.matrix)
    return float(np.max(np.abs(res))), G.norm * G0.norm


def check_geometric_resolvent(
    H: FiniteHamiltonian, H_sub: FiniteHamiltonian, E: float, x=None, y=None
) -> tuple[float, float]:
    """Residual of the geometric resolvent identity for ``Lambda' = H_sub.box`` inside ``H.box``.

    ``G(x,y) = G'(x,y)[y in Lambda'] - sum_{u in Lambda', v not, |u-v|=1} G'(x,u) H(u,v) G(v,y)``;
    the minus sign comes from the positive hopping. With ``x``/``y`` omitted all
    pairs are checked. Returns ``(residual, scale)`` with scale ``max(1, ||G|| ||G'||)``.
    """
    big, sub = H.box, H_sub.box
    sub_sites = sub.sites
    big_idx = big.index
    pos = [big_idx.get(tuple(map(int, s))) for s in sub_sites]
    if any(p is None for p in pos):
        raise ValueError("sub-box is not contained in the big box")
    G = green(H, E)
    Gs = green(H_sub, E)
    pos = np.asarray(pos)

    # boundary coupling B[u, v] = H(u, v) for u in Lambda', v in Lambda \ Lambda'
    B = np.zeros((len(sub_sites), len(big.sites)))
    sub_idx = sub.index
    for u, v in boundary_pairs(sub):
        j = big_idx.get(v)
        if j is not None:
            B[sub_idx[u], j] = H.matrix[pos[sub_idx[u]], j]
    lhs = G.matrix[pos, :]
    first = np.zeros_like(lhs)
    first[:, pos] = Gs.matrix
    rhs = first - Gs.matrix @ B @ G.matrix
    res = np.abs(lhs - rhs)
    if x is not None:
        res = res[sub_idx[tuple(x)]]
    if y is not None:
        res = res[..., big_idx[tuple(y)]]
    return float(np.max(res)), max(1.0, G.norm * Gs.norm)


def check_poisson(H: FiniteHamiltonian, energy: float, psi, sub: Box) -> tuple[float, float]:
    """Residual of ``psi(x) = -sum_{(y,y') in dLambda} G_Lambda(x,y) H(y,y') psi(y')`` over ``x`` in ``sub``.

    ``(energy, psi)`` must solve ``H psi = energy psi`` on the host; every outer
    boundary site of ``sub`` must lie in the host. Returns ``(residual, scale)``
    with scale ``max(1, ||G_Lambda||)``.
    """
    host = H.box
    idx = host.index
    psi = np.asarray(psi)
    H_sub = H.restrict(sub)
    G = green(H_sub, energy)
    sub_idx = sub.index
    src = np.zeros(len(sub.sites), dtype=psi.dtype)
    for y, yp in boundary_pairs(sub):
        j = idx.get(yp)
        if j is None:
            raise ValueError(f"outer boundary site {yp} is outside the host box")
        src[sub_idx[y]] += H.matrix[idx[y], j] * psi[j]
    pos = np.asarray([idx[tuple(map(int, s))] for s in sub.sites])
    res = np.abs(psi[pos] + G.matrix @ src)
    return float(np.max(res)), max(1.0, G.norm)


@dataclass
class StabilityRow:
    energy: float
    report: GoodnessReport | None
    error: str | None = None


@dataclass
class StabilityProbe:
    rows: list[StabilityRow]
    window: float
    base: GoodnessReport

    @property
    def all_jgood(self) -> bool:
        return all(r.report is not None and r.report.jgood for r in self.rows)


def stability_probe(
    H: FiniteHamiltonian,
    E0: float,
    m: float,
    m_prime: float,
    eta: float,
    m0: float | None = None,
    points: int = 21,
    window: float | None = None,
    fraction: float = PAIR_FRACTION,
) -> StabilityProbe:
    """Classify the box at energies ``|E - E0| <= exp(-m' L)`` with the weaker rate ``m``.

    ``m0`` (default ``m'``) is the rate at which the base energy is classified.
    The probe reports; callers decide whether to assert.
    """
    if not m < m_prime:
        raise ValueError("need m < m'")
    L = H.box.side
    base = classify_box(H, E0, m0 if m0 is not None else m_prime, eta, fraction)
    if window is None:
        window = math.exp(-m_prime * L)
    grid = np.unique(E0 + np.linspace(-window, window, points)) if points > 1 else np.array([E0])
    rows = []
    for E in grid:
        try:
            rows.append(StabilityRow(float(E), classify_box(H, float(E), m, eta, fraction)))
        except NearSingular as exc:
            rows.append(StabilityRow(float(E), None, str(exc)))
    return StabilityProbe(rows, window, base)
