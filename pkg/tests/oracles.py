"""Brute-force reference implementations, used only by the tests.

Nothing here reuses the fast paths; only lattice primitives are shared.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from anderson_msa.lattice import Annulus, Box, CoarseLattice


@dataclass
class OracleResult:
    value: object
    method: str
    instance: str


# --- shells ----------------------------------------------------------------


def brute_shell_search(nf, max_nodes: int = 25) -> OracleResult:
    """Try every subset of good annulus nodes against the shell definition.

    A subset qualifies when all its nodes are good, their ``(l+2)``-boxes sit
    inside the annulus, and no *-connected route through the remaining nodes
    joins a node whose ``(l+2)``-box meets the hole to one whose box leaves the
    outer box (which is how the infinite remainder is reached).
    """
    ann: Annulus = nf.annulus
    l = nf.scale
    lat = CoarseLattice(l, strict=False)
    a = lat.spacing
    labels = {tuple(map(int, r)): bool(g) for r, g in zip(nf.nodes, nf.good)}
    radius = ann.outer / 2 + l + 3 * a
    nodes = [tuple(map(int, r)) for r in lat.nodes_in_window(ann.center, radius)]

    def fat(r):
        return Box(r, l + 2).sites

    inside, hole, far = [], set(), set()
    for r in nodes:
        s = fat(r)
        if np.all(ann.contains(s)):
            inside.append(r)
        elif np.any(ann.inner_box.contains(s)):
            hole.add(r)
        else:
            far.add(r)
    if len(inside) > max_nodes:
        raise ValueError(f"{len(inside)} annulus nodes exceed the brute-force limit {max_nodes}")
    good = [r for r in inside if labels.get(r, False)]
    pos = {r: k for k, r in enumerate(nodes)}
    star = [o for o in itertools.product((-1, 0, 1), repeat=ann.dim) if any(o)]
    adj = [[pos[q] for q in (tuple(ri + a * oi for ri, oi in zip(r, o)) for o in star) if q in pos] for r in nodes]
    starts = [pos[r] for r in hole]
    far_idx = {pos[r] for r in far}
    good_idx = [pos[r] for r in good]

    def separates(subset):
        blocked = bytearray(len(nodes))
        for k in subset:
            blocked[k] = 1
        for k in starts:
            blocked[k] = 1
        queue = deque(starts)
        while queue:
            p = queue.popleft()
            if p in far_idx:
                return False
            for q in adj[p]:
                if not blocked[q]:
                    blocked[q] = 1
                    queue.append(q)
        return True

    for k in range(len(good_idx), -1, -1):
        for subset in itertools.combinations(good_idx, k):
            if separates(subset):
                return OracleResult(True, "subset-enumeration", f"{len(inside)} nodes")
    return OracleResult(False, "subset-enumeration", f"{len(inside)} nodes")


# --- Green functions -------------------------------------------------------


def brute_green_entry(matrix, E: float, i: int, j: int) -> OracleResult:
    """``(H - E)^{-1}[i, j]`` by Cramer's rule (cofactor over determinant)."""
    A = np.asarray(matrix, dtype=float) - E * np.eye(len(matrix))
    n = len(A)
    if n > 12:
        raise ValueError("brute Green entry is limited to dimension 12")
    det = np.linalg.det(A)
    if det == 0.0:
        raise ZeroDivisionError("singular matrix")
    if n == 1:
        return OracleResult(1.0 / A[0, 0], "cramer", "1x1")
    minor = np.delete(np.delete(A, j, axis=0), i, axis=1)
    cof = (-1) ** (i + j) * np.linalg.det(minor)
    return OracleResult(cof / det, "cramer", f"{n}x{n}")


# --- reduced spectrum ------------------------------------------------------


def _naive_hamiltonian(center, side, field):
    d = len(center)
    h = int(np.ceil(side / 2.0)) - 1
    sites = [tuple(c + o for c, o in zip(center, off)) for off in itertools.product(range(-h, h + 1), repeat=d)]
    pot = field.potential(np.array(sites))
    n = len(sites)
    H = np.zeros((n, n))
    pos = {s: k for k, s in enumerate(sites)}
    for k, s in enumerate(sites):
        H[k, k] = -2 * d + pot[k]
        for axis in range(d):
            for step in (-1, 1):
                t = list(s)
                t[axis] += step
                q = pos.get(tuple(t))
                if q is not None:
                    H[k, q] = 1.0
    return H


def brute_reduced_spectrum(field, center, L, interval, scales, thresholds) -> OracleResult:
    """Energies of ``sigma^(I)(H_L)`` within ``thresholds[n]`` of ``sigma^(I)(H_{L_n})`` for every ``n``.

    ``scales`` and ``thresholds`` are the nested sides and survival radii.
    """
    lo, hi = interval
    base = [e for e in np.linalg.eigvalsh(_naive_hamiltonian(center, L, field)) if lo <= e <= hi]
    inner = [[e for e in np.linalg.eigvalsh(_naive_hamiltonian(center, Ln, field)) if lo <= e <= hi] for Ln in scales]
    kept = []
    for E in base:
        ok = True
        for spec, thr in zip(inner, thresholds):
            best = np.inf
            for e in spec:
                best = min(best, abs(E - e))
            if not best <= thr:
                ok = False
                break
        if ok:
            kept.append(float(E))
    return OracleResult(kept, "naive-double-loop", f"L={L}")
