"""Spectrally filtered time evolution and the strong-dynamical-localization statistic."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import IO, Callable, Sequence

import numpy as np

from .disorder import DisorderField
from .lattice import Box, Weight
from .operator import EigenSystem, SineEigenSystem, assemble
from .stats import bootstrap_mean_ci

#: Fraction of the host side (per face) treated as the boundary shell.
SHELL = 0.1
#: Trajectories leaking more than this much mass into the shell are flagged.
LEAK_LIMIT = 0.01


def time_grid(t_max: float, points: int = 400, t_min: float = 1e-2) -> np.ndarray:
    """``0`` followed by ``points - 1`` log-spaced times up to ``t_max``."""
    if points < 2:
        return np.array([0.0])
    return np.concatenate([[0.0], np.logspace(math.log10(t_min), math.log10(t_max), points - 1)])


def is_free(field: DisorderField) -> bool:
    dist = field.distribution
    return dist.lam == 0 or (dist.kind == "point" and dist.v0 == 0)


def host_eigensystem(field: DisorderField, side: float, dim: int = 1):
    """Eigensystem of ``H`` on ``Lambda_side(0)``; the free case uses the exact sine basis."""
    box = Box((0,) * dim, side)
    if is_free(field):
        return SineEigenSystem(box)
    return assemble(box, field).eigensystem


@dataclass(eq=False)
class EvolutionPlan:
    system: EigenSystem | SineEigenSystem
    interval: tuple[float, float]
    times: np.ndarray
    orders: Sequence[float] = (1.0,)
    initial: np.ndarray | None = None
    coeffs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) < 0):
            raise ValueError("time grid must be sorted")
        box = self.system.box
        if self.initial is None:
            origin = box.index.get((0,) * box.dim)
            if origin is None:
                raise ValueError("host box does not contain the origin")
            self.initial = np.zeros(len(box.sites))
            self.initial[origin] = 1.0
        self.coeffs = self.system.analyze(self.initial) * self.system.mask(self.interval)

    @property
    def sites(self) -> np.ndarray:
        return self.system.box.sites

    def projected(self) -> np.ndarray:
        """``P_I psi_0``."""
        return self.system.synthesize(self.coeffs)

    def projector(self) -> np.ndarray:
        """Dense ``P_I`` (eigenvector hosts only)."""
        V = self.system.vectors[:, self.system.mask(self.interval)]
        return V @ V.T


def evolve(plan: EvolutionPlan, t: float) -> np.ndarray:
    """``sum_k exp(-i E_k t) <phi_k, P_I psi_0> phi_k``."""
    return plan.system.synthesize(plan.coeffs * np.exp(-1j * plan.system.values * t))


def evolve_many(plan: EvolutionPlan, times) -> np.ndarray:
    """States as columns, one per time (dense hosts use a single product)."""
    times = np.asarray(times, dtype=float)
    if isinstance(plan.system, EigenSystem):
        keep = plan.coeffs != 0
        phases = np.exp(-1j * np.outer(plan.system.values[keep], times)) * plan.coeffs[keep, None]
        return plan.system.vectors[:, keep] @ phases
    return np.stack([evolve(plan, t) for t in times], axis=1)


def moment(state, p: float, sites, anchor=None) -> float:
    """``|| <X - anchor>^p state ||``."""
    sites = np.asarray(sites)
    if anchor is None:
        anchor = (0,) * sites.shape[1]
    w = Weight(p, tuple(anchor)).values(sites)
    return float(np.linalg.norm(w * np.asarray(state)))


def shell_mask(box: Box, shell: float = SHELL) -> np.ndarray:
    core = Box(box.center, (1.0 - 2.0 * shell) * box.side)
    return ~core.contains(box.sites)


@dataclass
class Trajectory:
    times: np.ndarray
    moments: dict
    leaked: bool
    leak_time: float | None
    max_shell_mass: float

    def sup(self, p: float) -> float:
        return float(np.max(self.moments[p])) if len(self.moments[p]) else 0.0


def trajectory(plan: EvolutionPlan, chunk: int = 64) -> Trajectory:
    """Moments of every order on the time grid; stops at the first time the shell holds > LEAK_LIMIT."""
    sites = plan.sites
    weights = {p: Weight(p, (0,) * sites.shape[1]).values(sites) for p in plan.orders}
    outer = shell_mask(plan.system.box)
    moments = {p: [] for p in plan.orders}
    leak_time, worst = None, 0.0
    done = []
    for start in range(0, len(plan.times), chunk):
        ts = plan.times[start : start + chunk]
        states = evolve_many(plan, ts)
        dens = np.abs(states) ** 2
        shell_mass = dens[outer].sum(axis=0)
        for j, t in enumerate(ts):
            worst = max(worst, float(shell_mass[j]))
            if shell_mass[j] > LEAK_LIMIT:
                leak_time = float(t)
                break
            for p in plan.orders:
                moments[p].append(math.sqrt(float(np.dot(weights[p] ** 2, dens[:, j]))))
            done.append(t)
        if leak_time is not None:
            break
    return Trajectory(np.asarray(done), {p: np.asarray(v) for p, v in moments.items()}, leak_time is not None, leak_time, worst)


@dataclass
class SDLResult:
    mean: float
    ci: tuple[float, float]
    sups: list
    flagged: list
    seeds: int
    t_max: float
    p: float
    s: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "ci_low": self.ci[0],
            "ci_high": self.ci[1],
            "seeds": self.seeds,
            "flagged": self.flagged,
            "t_max": self.t_max,
            "p": self.p,
            "s": self.s,
        }


def sdl_statistic(
    systems: Callable[[int], EigenSystem | SineEigenSystem],
    seeds: int,
    interval,
    p: float = 1.0,
    s: float = 1.0,
    t_max: float = 1e4,
    points: int = 400,
    bootstrap_seed: int = 0,
    trajectories: list | None = None,
) -> SDLResult:
    """Mean over seeds of ``sup_t moment(evolve(t), p)^s`` with a bootstrap CI.

    ``systems(i)`` builds the host eigensystem of seed ``i``. Flagged seeds
    (mass reached the boundary shell) are listed and left out of the mean.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    if seeds < 2:
        raise ValueError("need at least two seeds")
    times = time_grid(t_max, points)
    sups, flagged = [], []
    last = traj = None
    for i in range(seeds):
        sys = systems(i)
        # a family may hand back one shared host (deterministic potential)
        if sys is not last:
            traj = trajectory(EvolutionPlan(sys, tuple(interval), times, orders=(p,)))
            last = sys
        if trajectories is not None:
            trajectories.append((i, traj))
        if traj.leaked:
            flagged.append(i)
            continue
        sups.append(traj.sup(p) ** s)
    if not sups:
        return SDLResult(math.nan, (math.nan, math.nan), [], flagged, seeds, t_max, p, s)
    return SDLResult(float(np.mean(sups)), bootstrap_mean_ci(sups, bootstrap_seed), sups, flagged, seeds, t_max, p, s)


def field_family(field: DisorderField, side: float, dim: int = 1) -> Callable[[int], EigenSystem | SineEigenSystem]:
    if is_free(field):
        sys = host_eigensystem(field, side, dim)
        return lambda i: sys
    return lambda i: host_eigensystem(field.for_sample(i), side, dim)


def write_trajectories(rows, out: IO[str]) -> None:
    """CSV ``seed,t,p,moment`` for ``(seed, Trajectory)`` pairs."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["seed", "t", "p", "moment"])
    for seed, traj in rows:
        for p, vals in traj.moments.items():
            for t, v in zip(traj.times, vals):
                writer.writerow([seed, repr(float(t)), repr(float(p)), repr(float(v))])
