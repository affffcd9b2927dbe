"""Good/bad coarse-node fields on annuli, bad *-paths, and good shells.

Nodes of the coarse lattice in a window around the annulus fall in three
classes. *Eligible* nodes have their fattened box ``Lambda_{l+2}(r)`` inside
the annulus and carry a good/bad label. *Hole* nodes have a fattened box that
meets the inner box; *exterior* nodes have one that leaves the outer box. A bad
path is a *-connected chain (all ``3^d - 1`` neighbours) of bad eligible nodes
linking the hole side to the exterior side. A shell is a set of good eligible
nodes whose removal leaves no *-connected route from hole to exterior.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .disorder import DisorderField
from .lattice import Annulus, Box, CoarseLattice, coarse_nodes
from .operator import assemble
from .resolvent import PAIR_FRACTION, NearSingular, classify_box
from .stats import wilson_interval

ELIGIBLE, HOLE, EXTERIOR = 0, 1, 2
KINDS = ("good", "pgood")
#: Default ratio ``r`` for pgood boxes (sub-scale ``l' = l^(1/(1+r))``).
R_RATIO = 0.2


class ShellInvariantViolated(AssertionError):
    """An extracted shell failed its post-hoc check; indicates a geometry bug."""


@dataclass(frozen=True)
class Provenance:
    energy: float
    m: float
    eta: float
    fraction: float
    kind: str
    r_ratio: float = R_RATIO


@dataclass(eq=False)
class NodeField:
    """Labelled coarse window around an annulus.

    ``nodes`` lists window nodes lexicographically, which is C order on
    ``grid_shape``. ``good`` is meaningful on eligible nodes only.
    """

    annulus: Annulus
    scale: float
    spacing: int
    nodes: np.ndarray
    grid_shape: tuple[int, ...]
    node_class: np.ndarray
    good: np.ndarray
    provenance: Provenance | None = None
    incidents: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.annulus.dim

    @property
    def eligible(self) -> np.ndarray:
        return self.node_class == ELIGIBLE

    @property
    def eligible_nodes(self) -> np.ndarray:
        return self.nodes[self.eligible]

    @property
    def bad(self) -> np.ndarray:
        return self.eligible & ~self.good

    def with_labels(self, good) -> "NodeField":
        """Copy with eligible-node labels replaced (one bool per eligible node)."""
        good = np.asarray(good, dtype=bool)
        n_el = int(self.eligible.sum())
        if good.shape != (n_el,):
            raise ValueError(f"expected {n_el} labels, got shape {good.shape}")
        full = np.zeros(len(self.nodes), dtype=bool)
        full[self.eligible] = good
        return replace(self, good=full, incidents=[])

    def grid(self, mask) -> np.ndarray:
        return np.asarray(mask).reshape(self.grid_shape)

    def to_text(self) -> str:
        """One char per window node: ``G``/``B`` eligible, ``o`` hole side, ``.`` exterior side."""
        chars = np.where(self.node_class == HOLE, "o", ".")
        chars = np.where(self.eligible, np.where(self.good, "G", "B"), chars)
        grid = chars.reshape(self.grid_shape)
        if self.dim == 1:
            return "".join(grid) + "\n"
        if self.dim == 2:
            return "\n".join("".join(row) for row in grid) + "\n"
        return "\n\n".join("\n".join("".join(r) for r in sl) for sl in grid.reshape(-1, *self.grid_shape[-2:])) + "\n"


def _fat_box(node, scale) -> Box:
    return Box(tuple(int(c) for c in node), scale + 2)


def coarse_annulus(annulus: Annulus, scale: float, strict: bool = True) -> NodeField:
    """Unlabelled (all-good) node field for ``annulus`` at coarse scale ``scale``."""
    if annulus.norm != "sup":
        raise ValueError("shells are built on cubic annuli")
    lat = CoarseLattice(scale, strict=strict)
    a = lat.spacing
    radius = annulus.outer / 2.0 + (scale + 2) / 2.0 + a
    nodes = lat.nodes_in_window(annulus.center, radius)
    c = np.asarray(annulus.center)
    shape = tuple(
        math.floor((ci + radius) / a) - math.ceil((ci - radius) / a) + 1 for ci in c
    )
    # per-axis reach of the fattened cube around each node
    h = Box(annulus.center, scale + 2).half
    off = np.abs(nodes - c)
    meets_hole = np.all(np.maximum(off - h, 0) < annulus.inner / 2.0, axis=1)
    leaves = np.any(off + h >= annulus.outer / 2.0, axis=1)
    if np.any(meets_hole & leaves):
        r = nodes[np.argmax(meets_hole & leaves)]
        raise ValueError(f"annulus too thin: the box at node {tuple(r)} meets the hole and leaves the outer box")
    cls = np.where(meets_hole, HOLE, np.where(leaves, EXTERIOR, ELIGIBLE)).astype(np.int8)
    if not np.any(cls == ELIGIBLE):
        raise ValueError("annulus holds no coarse node with its fattened box inside")
    if not np.any(cls == HOLE):
        raise ValueError("no coarse node on the hole side; enlarge the inner box")
    grid = cls.reshape(shape)
    if np.any(ndimage.binary_dilation(grid == HOLE, _star_structure(len(shape))) & (grid == EXTERIOR)):
        raise ValueError("annulus too thin: hole-side and exterior nodes are adjacent")
    border = np.ones(shape, dtype=bool)
    border[tuple(slice(1, -1) for _ in shape)] = False
    if np.any(grid[border] != EXTERIOR):
        raise AssertionError("coarse window does not enclose the annulus")
    return NodeField(annulus, float(scale), a, nodes, shape, cls, cls == ELIGIBLE)


def _box_good(field, box: Box, energy, m, eta, fraction):
    H = assemble(box, field)
    try:
        return classify_box(H, energy, m, eta, fraction).good, None
    except NearSingular as exc:
        return False, {"center": list(box.center), "side": box.side, "error": str(exc)}


def pgood_box(field, box: Box, energy, m, eta, fraction=PAIR_FRACTION, r_ratio=R_RATIO, strict=False):
    """Whether every sub-box ``Lambda_{l'}(s)``, ``s`` in ``C_{l'}`` inside ``box``, is good."""
    sub = box.side ** (1.0 / (1.0 + r_ratio))
    incidents = []
    for s in coarse_nodes(sub, box, strict=strict):
        ok, inc = _box_good(field, Box(tuple(s), sub), energy, m, eta, fraction)
        if inc:
            incidents.append(inc)
        if not ok:
            return False, incidents
    return True, incidents


def label_nodes(
    field: DisorderField,
    annulus: Annulus,
    scale: float,
    energy: float,
    m: float,
    eta: float,
    kind: str = "good",
    fraction: float = PAIR_FRACTION,
    r_ratio: float = R_RATIO,
    strict: bool = True,
) -> NodeField:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    nf = coarse_annulus(annulus, scale, strict=strict)
    good = np.zeros(len(nf.nodes), dtype=bool)
    incidents = []
    for i in np.flatnonzero(nf.eligible):
        box = Box(tuple(int(c) for c in nf.nodes[i]), scale)
        if kind == "good":
            ok, inc = _box_good(field, box, energy, m, eta, fraction)
            inc = [inc] if inc else []
        else:
            ok, inc = pgood_box(field, box, energy, m, eta, fraction, r_ratio)
        good[i] = ok
        incidents.extend(inc)
    nf.good = good
    nf.incidents = incidents
    nf.provenance = Provenance(float(energy), m, eta, fraction, kind, r_ratio)
    return nf


def _star_structure(dim):
    return np.ones((3,) * dim, dtype=bool)


def _star_offsets(dim):
    return [o for o in itertools.product((-1, 0, 1), repeat=dim) if any(o)]


def bad_path_exists(nf: NodeField) -> tuple[bool, np.ndarray | None]:
    """Shortest *-chain of bad eligible nodes from the hole side to the exterior side."""
    shape = nf.grid_shape
    cls = nf.grid(nf.node_class)
    bad = nf.grid(nf.bad)
    star = _star_offsets(nf.dim)
    hole = cls == HOLE
    ext = cls == EXTERIOR

    def nbrs(p):
        for o in star:
            q = tuple(pi + oi for pi, oi in zip(p, o))
            if all(0 <= qi < si for qi, si in zip(q, shape)):
                yield q

    dilated_hole = ndimage.binary_dilation(hole, _star_structure(nf.dim))
    starts = np.argwhere(bad & dilated_hole)
    prev = {}
    queue = deque()
    for s in map(tuple, starts):
        prev[s] = None
        queue.append(s)
    while queue:
        p = queue.popleft()
        if any(ext[q] for q in nbrs(p)):
            chain = []
            while p is not None:
                chain.append(p)
                p = prev[p]
            flat = [np.ravel_multi_index(c, shape) for c in reversed(chain)]
            return True, nf.nodes[flat]
        for q in nbrs(p):
            if bad[q] and q not in prev:
                prev[q] = p
                queue.append(q)
    return False, None


@dataclass(eq=False)
class Shell:
    nodes: np.ndarray
    inner: np.ndarray
    outer: np.ndarray
    annulus: Annulus
    scale: float
    separation: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "nodes": self.nodes.tolist(),
                "inner": self.inner.tolist(),
                "scale": self.scale,
                "annulus": {"center": list(self.annulus.center), "outer": self.annulus.outer, "inner": self.annulus.inner},
                "separation": self.separation,
            },
            sort_keys=True,
        )


def split_by_shell(nf: NodeField, members) -> tuple[np.ndarray, np.ndarray] | None:
    """Inner/outer masks of the window minus ``members``, or ``None`` if it does not separate.

    Components of the complement are taken with *-adjacency; those touching an
    exterior node are outer, the rest inner. Separation fails when an inner
    component is empty of hole nodes on every side, i.e. some hole node shares
    a component with an exterior node.
    """
    members = np.asarray(members, dtype=bool)
    rest = nf.grid(~members)
    labels, _ = ndimage.label(rest, _star_structure(nf.dim))
    cls = nf.grid(nf.node_class)
    outer_ids = np.unique(labels[(cls == EXTERIOR) & rest])
    outer_ids = outer_ids[outer_ids > 0]
    outer = np.isin(labels, outer_ids) & rest
    if np.any(outer & (cls == HOLE)):
        return None
    inner = rest & ~outer
    return inner.ravel(), outer.ravel()


def _euclidean_gap(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 or len(b) == 0:
        return math.inf
    from scipy.spatial import cKDTree

    d, _ = cKDTree(b).query(a, k=1)
    return float(np.min(d))


def extract_shell(nf: NodeField) -> Shell | None:
    """Outer contour of the bad cluster grown from the hole side, or ``None`` when a bad path exists."""
    cls = nf.grid(nf.node_class)
    bad = nf.grid(nf.bad)
    core = (cls == HOLE) | bad
    labels, _ = ndimage.label(core, _star_structure(nf.dim))
    ids = np.unique(labels[cls == HOLE])
    cluster = np.isin(labels, ids[ids > 0])
    ring = ndimage.binary_dilation(cluster, _star_structure(nf.dim)) & ~cluster
    if np.any(ring & (cls == EXTERIOR)):
        return None
    members = ring.ravel()
    if not np.all(nf.eligible[members] & nf.good[members]):
        raise ShellInvariantViolated("contour contains a node that is not a good eligible node")
    split = split_by_shell(nf, members)
    if split is None:
        raise ShellInvariantViolated("contour does not separate the hole side from the exterior")
    inner, outer = split
    if not np.all(inner[nf.node_class == HOLE]):
        raise ShellInvariantViolated("a hole node escaped the inner side")
    for r in nf.nodes[members]:
        if not np.all(nf.annulus.contains(_fat_box(r, nf.scale).sites)):
            raise ShellInvariantViolated(f"fattened box at {tuple(r)} leaves the annulus")
    return Shell(
        nf.nodes[members],
        nf.nodes[inner],
        nf.nodes[outer],
        nf.annulus,
        nf.scale,
        _euclidean_gap(nf.nodes[inner], nf.nodes[outer]),
    )


@dataclass
class ShellBound:
    lhs: float
    rhs: float
    holds: bool
    distance: float
    w: float


def shell_distance_bound(shell: Shell | None, H, energy: float, w: float, m: float, nu: float, interval=None) -> ShellBound:
    """``dist(E, sigma^(I)(H_{L2})) * W(x0; E)`` against ``L2^(2 nu) exp(-m l / 3)``.

    ``H`` is the Hamiltonian on the outer box of the shell's annulus and ``w``
    the proxy value of ``W(x0; E)``.
    """
    if shell is None:
        raise ValueError("no shell: the bound needs a good shell")
    if H.box != shell.annulus.outer_box:
        raise ValueError("H must live on the outer box of the shell's annulus")
    ev = H.eigensystem.values
    if interval is not None:
        ev = ev[(ev >= interval[0]) & (ev <= interval[1])]
    dist = float(np.min(np.abs(ev - energy))) if len(ev) else math.inf
    lhs = 0.0 if w == 0.0 else dist * w
    rhs = shell.annulus.outer ** (2.0 * nu) * math.exp(-m * shell.scale / 3.0)
    return ShellBound(lhs, rhs, bool(lhs <= rhs), dist, float(w))


def shell_probability_bound(dim: int, scale: float, inner: float, outer: float, q: float) -> float:
    """Lower bound ``1 - 2d ((L1+3l)/l)^(d-1) (2^d)^((L2-L1-l)/l) q^((L2-L1-l)/((3^d-1) l))``, ``q = l^(-pd)``."""
    steps = (outer - inner - scale) / scale
    term = 2 * dim * ((inner + 3 * scale) / scale) ** (dim - 1) * (2.0**dim) ** steps
    if q <= 0.0:
        return 1.0
    return 1.0 - term * q ** (steps / (3**dim - 1))


@dataclass
class ShellEstimate:
    estimate: float
    interval: tuple[float, float]
    samples: int
    bad_fraction: float
    bad_interval: tuple[float, float]
    p_measured: float
    paper_bound: float
    incidents: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "ci_low": self.interval[0],
            "ci_high": self.interval[1],
            "samples": self.samples,
            "bad_fraction": self.bad_fraction,
            "bad_ci_low": self.bad_interval[0],
            "bad_ci_high": self.bad_interval[1],
            "p_measured": self.p_measured if math.isfinite(self.p_measured) else None,
            "paper_bound": self.paper_bound,
            "incidents": self.incidents,
        }


def shell_probability(
    field: DisorderField,
    annulus: Annulus,
    scale: float,
    energy: float,
    m: float,
    eta: float,
    samples: int,
    kind: str = "good",
    fraction: float = PAIR_FRACTION,
    r_ratio: float = R_RATIO,
    strict: bool = True,
) -> ShellEstimate:
    """Monte Carlo frequency of a good shell inside ``annulus``, with the measured per-node bad rate."""
    hits = bad = total = incidents = 0
    for i in range(samples):
        nf = label_nodes(field.for_sample(i), annulus, scale, energy, m, eta, kind, fraction, r_ratio, strict)
        hits += extract_shell(nf) is not None
        bad += int(nf.bad.sum())
        total += int(nf.eligible.sum())
        incidents += len(nf.incidents)
    q = bad / total if total else 0.0
    p = -math.log(q) / (annulus.dim * math.log(scale)) if q > 0 else math.inf
    return ShellEstimate(
        hits / samples,
        wilson_interval(hits, samples),
        samples,
        q,
        wilson_interval(bad, total),
        p,
        shell_probability_bound(annulus.dim, scale, annulus.inner, annulus.outer, q),
        incidents,
    )
