"""Finite-volume Anderson Hamiltonians and their eigensystems."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import IO

import numpy as np
import scipy.fft
import scipy.linalg

from .disorder import DisorderField
from .lattice import Box, unit_vectors

#: Off-diagonal entry between nearest neighbours.
HOPPING = 1.0


class EigensolverError(RuntimeError):
    """The symmetric eigensolver failed to converge."""


def neighbour_pairs(sites: np.ndarray, index: dict) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(i, j)``, ``i < j``, of nearest neighbours inside a site list."""
    rows, cols = [], []
    dim = sites.shape[1]
    for e in unit_vectors(dim)[:dim]:
        for i, s in enumerate(sites + e):
            j = index.get(tuple(map(int, s)))
            if j is not None:
                rows.append(i)
                cols.append(j)
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


@dataclass(eq=False)
class FiniteHamiltonian:
    """``H = Laplacian + V`` restricted to ``box``.

    The diagonal is ``-2d + V(n)`` at every site, boundary included (plain
    restriction of the infinite operator).
    """

    box: Box
    matrix: np.ndarray
    field: DisorderField | None = None
    potential: np.ndarray | None = None

    @property
    def sites(self) -> np.ndarray:
        return self.box.sites

    @property
    def dim(self) -> int:
        return self.box.dim

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def eigensystem(self) -> "EigenSystem":
        return diagonalize(self)

    @cached_property
    def norm(self) -> float:
        ev = self.eigensystem.values
        return float(max(abs(ev[0]), abs(ev[-1]))) if len(ev) else 0.0

    def restrict(self, sub: Box) -> "FiniteHamiltonian":
        """Principal submatrix on the sites of ``sub`` (must lie inside ``self.box``)."""
        idx = [self.box.index.get(tuple(map(int, s))) for s in sub.sites]
        if any(i is None for i in idx):
            raise ValueError("sub-box is not contained in the host box")
        idx = np.asarray(idx, dtype=np.int64)
        pot = None if self.potential is None else self.potential[idx]
        return FiniteHamiltonian(sub, self.matrix[np.ix_(idx, idx)].copy(), self.field, pot)


def assemble(box: Box, field: DisorderField) -> FiniteHamiltonian:
    sites = box.sites
    if len(sites) == 0:
        raise ValueError("cannot assemble a Hamiltonian on an empty box")
    pot = field.potential(sites)
    return assemble_from_potential(box, pot, field)


def assemble_from_potential(box: Box, potential, field: DisorderField | None = None) -> FiniteHamiltonian:
    sites = box.sites
    pot = np.asarray(potential, dtype=float)
    if pot.shape != (len(sites),):
        raise ValueError("potential must have one value per box site")
    n = len(sites)
    mat = np.zeros((n, n))
    mat[np.diag_indices(n)] = -2.0 * box.dim + pot
    i, j = neighbour_pairs(sites, box.index)
    mat[i, j] = HOPPING
    mat[j, i] = HOPPING
    return FiniteHamiltonian(box, mat, field, pot)


@dataclass(eq=False)
class EigenSystem:
    """Ascending eigenvalues and orthonormal eigenvectors (columns, site order)."""

    values: np.ndarray
    vectors: np.ndarray
    sites: np.ndarray | None = None
    box: Box | None = None

    def __len__(self) -> int:
        return len(self.values)

    def row(self, i: int) -> np.ndarray:
        """Amplitudes ``phi_k(site_i)`` of every eigenvector at one site."""
        return self.vectors[i]

    def synthesize(self, coeffs) -> np.ndarray:
        """Site vector ``sum_k coeffs[k] phi_k``."""
        return self.vectors @ coeffs

    def analyze(self, vector) -> np.ndarray:
        """Coefficients ``<phi_k, vector>``."""
        return self.vectors.T @ vector

    def mask(self, interval) -> np.ndarray:
        lo, hi = interval
        return (self.values >= lo) & (self.values <= hi)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each has its largest-magnitude entry positive."""
    if vectors.size == 0:
        return vectors
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def diagonalize(H: FiniteHamiltonian) -> EigenSystem:
    if len(H) < 1:
        raise ValueError("empty Hamiltonian")
    try:
        vals, vecs = scipy.linalg.eigh(H.matrix)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EigensolverError(str(exc)) from exc
    return EigenSystem(vals, fix_signs(vecs), H.sites, H.box)


def spectrum_in_interval(sys: EigenSystem, interval) -> list[tuple[float, np.ndarray]]:
    lo, hi = interval
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("interval must be bounded")
    keep = np.flatnonzero(sys.mask(interval))
    return [(float(sys.values[k]), sys.vectors[:, k]) for k in keep]


def weighted_trace(sys: EigenSystem, interval, nu: float, anchor=None) -> float:
    """``sum_x <x - anchor>^(-2 nu) sum_{E_k in I} |phi_k(x)|^2``."""
    sites = sys.sites
    if anchor is None:
        anchor = np.zeros(sites.shape[1], dtype=np.int64)
    w = (1.0 + np.sum((sites - np.asarray(anchor)) ** 2, axis=1)) ** (-nu)
    keep = sys.mask(interval)
    return float(np.sum(w * np.sum(sys.vectors[:, keep] ** 2, axis=1)))


def dump_coo(H: FiniteHamiltonian, out: IO[str]) -> None:
    """Write nonzero entries as ``row col value`` lines."""
    rows, cols = np.nonzero(H.matrix)
    for r, c in zip(rows, cols):
        out.write(f"{r} {c} {H.matrix[r, c]!r}\n")


@dataclass(eq=False)
class SineEigenSystem:
    """Exact eigensystem of the free (``V = 0``) Dirichlet box, applied by fast sine transforms.

    Never forms the eigenvector matrix, so it handles hosts far beyond dense
    diagonalization. Mode ``k = (k_1..k_d)`` has amplitude
    ``prod_j sqrt(2/(n+1)) sin(pi k_j m_j / (n+1))`` at local offset ``m``.
    """

    box: Box
    values: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.box.norm != "sup":
            raise ValueError("sine basis needs a cubic box")
        n = self.n
        k = np.arange(1, n + 1)
        one = -2.0 + 2.0 * HOPPING * np.cos(np.pi * k / (n + 1))
        grids = np.meshgrid(*([one] * self.box.dim), indexing="ij")
        self._raw = sum(grids).ravel()
        self._order = np.argsort(self._raw, kind="stable")
        self.values = self._raw[self._order]

    @property
    def n(self) -> int:
        return 2 * self.box.half + 1

    @property
    def sites(self) -> np.ndarray:
        return self.box.sites

    def __len__(self) -> int:
        return len(self.values)

    def _shape(self):
        return (self.n,) * self.box.dim

    def _dst(self, arr):
        norm = (2.0 / (self.n + 1)) ** (self.box.dim / 2.0) / 2.0**self.box.dim
        if np.iscomplexobj(arr):
            re = scipy.fft.dstn(arr.real, type=1)
            im = scipy.fft.dstn(arr.imag, type=1)
            return (re + 1j * im) * norm
        return scipy.fft.dstn(arr, type=1) * norm

    def row(self, i: int) -> np.ndarray:
        site = self.box.sites[i] - np.asarray(self.box.center) + self.box.half + 1
        k = np.arange(1, self.n + 1)
        fac = [np.sqrt(2.0 / (self.n + 1)) * np.sin(np.pi * k * m / (self.n + 1)) for m in site]
        out = fac[0]
        for f in fac[1:]:
            out = np.multiply.outer(out, f)
        return np.ravel(out)[self._order]

    def synthesize(self, coeffs) -> np.ndarray:
        raw = np.zeros(len(self.values), dtype=np.result_type(coeffs, float))
        raw[self._order] = coeffs
        return np.ravel(self._dst(raw.reshape(self._shape())))

    def analyze(self, vector) -> np.ndarray:
        # the sine transform is its own inverse up to the normalization used above
        return np.ravel(self._dst(np.asarray(vector).reshape(self._shape())))[self._order]

    def mask(self, interval) -> np.ndarray:
        lo, hi = interval
        return (self.values >= lo) & (self.values <= hi)
