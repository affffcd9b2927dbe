"""Integer-lattice geometry: boxes, annuli, boundaries, coarse lattices and weights.

Sites are plain tuples of ints. Site collections are ``(n, d)`` integer arrays in
lexicographic order; that order is the matrix index order everywhere else in the
package.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

#: Coarse lattices are only defined above this scale unless ``strict=False``.
MIN_COARSE_SCALE = 10.0

NORMS = ("sup", "euclidean")


def as_site(coords, dim: int | None = None) -> tuple[int, ...]:
    site = tuple(int(c) for c in np.atleast_1d(coords))
    if not site:
        raise ValueError("a site needs at least one coordinate")
    if dim is not None and len(site) != dim:
        raise ValueError(f"site {site} has dimension {len(site)}, expected {dim}")
    return site


def bracket(x) -> np.ndarray:
    """Japanese bracket <x> = sqrt(1 + |x|^2), Euclidean, along the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(1.0 + np.sum(x * x, axis=-1))


def _half_extent(side: float) -> int:
    # largest integer k with k < side / 2
    return math.ceil(side / 2.0) - 1


@dataclass(frozen=True)
class Box:
    """Lattice cube ``{y : |y - center| < side/2}``.

    ``norm="sup"`` (default) gives cubes; ``norm="euclidean"`` gives lattice balls.
    """

    center: tuple[int, ...]
    side: float
    norm: str = "sup"

    def __post_init__(self):
        object.__setattr__(self, "center", as_site(self.center))
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if not self.side > 0:
            raise ValueError("box side must be positive")

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def half(self) -> int:
        return _half_extent(self.side)

    def contains(self, sites) -> np.ndarray | bool:
        pts = np.asarray(sites)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: sites are {pts.shape[1]}-d, box is {self.dim}-d")
        off = pts - np.asarray(self.center)
        if self.norm == "sup":
            inside = np.max(np.abs(off), axis=1) < self.side / 2.0
        else:
            inside = np.sum(off * off, axis=1) < (self.side / 2.0) ** 2
        return bool(inside[0]) if single else inside

    @cached_property
    def sites(self) -> np.ndarray:
        h = self.half
        if h < 0:
            return np.empty((0, self.dim), dtype=np.int64)
        rng = range(-h, h + 1)
        offs = np.array(list(itertools.product(rng, repeat=self.dim)), dtype=np.int64)
        pts = offs + np.asarray(self.center, dtype=np.int64)
        if self.norm == "euclidean":
            pts = pts[self.contains(pts)]
        return pts

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {tuple(map(int, s)): i for i, s in enumerate(self.sites)}

    def __len__(self) -> int:
        return len(self.sites)

    def is_subset_of(self, other: "Box") -> bool:
        return bool(np.all(other.contains(self.sites)))


@dataclass(frozen=True)
class Annulus:
    """Sites of the outer box minus those of the inner box."""

    center: tuple[int, ...]
    outer: float
    inner: float
    norm: str = "sup"

    def __post_init__(self):
        object.__setattr__(self, "center", as_site(self.center))
        if not self.inner < self.outer:
            raise ValueError("annulus needs inner < outer")

    @property
    def dim(self) -> int:
        return len(self.center)

    @cached_property
    def outer_box(self) -> Box:
        return Box(self.center, self.outer, self.norm)

    @cached_property
    def inner_box(self) -> Box:
        return Box(self.center, self.inner, self.norm)

    def contains(self, sites):
        res = np.logical_and(self.outer_box.contains(sites), np.logical_not(self.inner_box.contains(sites)))
        return bool(res) if np.ndim(res) == 0 else res

    @cached_property
    def sites(self) -> np.ndarray:
        pts = self.outer_box.sites
        return pts[~self.inner_box.contains(pts)] if len(pts) else pts

    def __len__(self) -> int:
        return len(self.sites)


def box_sites(box: Box, dim: int | None = None) -> np.ndarray:
    if dim is not None and dim != box.dim:
        raise ValueError(f"box center is {box.dim}-d but ambient dimension is {dim}")
    return box.sites


def unit_vectors(dim: int) -> np.ndarray:
    eye = np.eye(dim, dtype=np.int64)
    return np.concatenate([eye, -eye])


def boundary_pairs(region: Box | Annulus) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All nearest-neighbour pairs ``(inner, outer)`` with inner in the region, outer not."""
    sites = region.sites
    pairs = []
    for e in unit_vectors(region.dim):
        nb = sites + e
        out = ~np.asarray(region.contains(nb), dtype=bool) if len(nb) else np.zeros(0, bool)
        for y, yp in zip(sites[out], nb[out]):
            pairs.append((tuple(map(int, y)), tuple(map(int, yp))))
    return pairs


@dataclass(frozen=True)
class CoarseLattice:
    """The sublattice ``(floor(3l/5) Z)^d`` used to tile space with ``l``-boxes."""

    scale: float
    strict: bool = True

    def __post_init__(self):
        if self.strict and not self.scale > MIN_COARSE_SCALE:
            raise ValueError(f"coarse lattice needs scale l > {MIN_COARSE_SCALE:g}, got {self.scale}")
        if self.spacing < 1:
            raise ValueError(f"scale {self.scale} gives an empty coarse spacing")

    @property
    def spacing(self) -> int:
        return int(math.floor(3.0 * self.scale / 5.0))

    def nodes_in_window(self, center: Sequence[int], radius: float) -> np.ndarray:
        """Nodes ``r`` with ``|r - center|_inf <= radius``, lexicographic."""
        a = self.spacing
        c = np.asarray(center)
        ranges = [range(math.ceil((ci - radius) / a), math.floor((ci + radius) / a) + 1) for ci in c]
        ks = np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, len(c))
        return ks * a

    def nearest_node(self, site) -> np.ndarray:
        a = self.spacing
        return np.rint(np.asarray(site, dtype=float) / a).astype(np.int64) * a


def coarse_nodes(scale: float, region: Box | Annulus, strict: bool = True) -> np.ndarray:
    """Coarse-lattice nodes lying in ``region``."""
    lat = CoarseLattice(scale, strict=strict)
    box = region if isinstance(region, Box) else region.outer_box
    cand = lat.nodes_in_window(box.center, box.side / 2.0)
    if len(cand) == 0:
        return cand
    return cand[np.asarray(region.contains(cand), dtype=bool)]


def covers(scale: float, box: Box, nodes: np.ndarray | None = None, strict: bool = True) -> bool:
    """Whether the ``scale``-boxes centered at ``nodes`` cover every site of ``box``."""
    if nodes is None:
        nodes = coarse_nodes(scale, box, strict=strict)
    sites = box.sites
    covered = np.zeros(len(sites), dtype=bool)
    for r in nodes:
        covered |= Box(tuple(r), scale, box.norm).contains(sites)
    return bool(covered.all())


@dataclass(frozen=True)
class Weight:
    """Polynomial weight ``y -> <y - anchor>^nu``."""

    nu: float
    anchor: tuple[int, ...] = field(default=(0,))

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_site(self.anchor))

    def values(self, sites) -> np.ndarray:
        off = np.asarray(sites, dtype=float) - np.asarray(self.anchor)
        # (1 + |x|^2)^(nu/2) keeps integer weights exact for even nu
        return (1.0 + np.sum(off * off, axis=-1)) ** (self.nu / 2.0)


def apply_weight(w: Weight, vector, sites, inverted: bool = False) -> np.ndarray:
    vals = w.values(sites)
    vector = np.asarray(vector)
    return vector / vals if inverted else vector * vals
