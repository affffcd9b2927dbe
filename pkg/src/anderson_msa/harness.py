"""Experiment configuration, good-scale certification and the probe runner.

All randomness flows from ``(master seed, probe key, sample index, site)``;
probes run serially so artifacts are byte-reproducible.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .disorder import DisorderField, Distribution, derive_seed
from .dynamics import field_family, sdl_statistic, write_trajectories
from .lattice import Annulus, Box
from .modes import trap_check
from .operator import assemble
from .percolation import shell_probability
from .reduction import (
    InfeasibleConstants,
    count_bound_check,
    derive_constants,
    key_theorem_rate,
    reduced_spectrum,
)
from .resolvent import NearSingular, classify_box
from .stats import loglog_slope, wilson_interval

SCHEMA_VERSION = 1
PROBES = ("certify", "shell", "reduce", "trap", "keythm", "dynamics")
PROBE_KEYS = {name: k + 1 for k, name in enumerate(PROBES)}

#: Values the asymptotic theory would use; anything else is a desk-scale override.
PAPER_DEFAULTS = {
    "overrides.theta": None,
    "overrides.gamma": 0.01,
    "overrides.r_ratio": 0.2,
    "fraction": 0.01,
    "ledger.J": None,
}

DEFAULT_CONFIG = {
    "schema": SCHEMA_VERSION,
    "dim": 1,
    "distribution": {"kind": "bernoulli", "lam": 8.0, "v0": 0.0, "v1": 1.0, "q": 0.5},
    "nu": 1.0,
    "interval": [-5.0, 9.0],
    "m": 0.1,
    "eta": 0.5,
    "fraction": 0.01,
    "p": 0.5,
    "scales": [20, 30, 40],
    "energies": [2.0],
    "ledger": {"m0": 1.0, "eta0": 0.5, "p0": 1.8, "p": 0.05, "b": 1.0, "rho": 0.75, "J": None, "N2": 2},
    "seed": 1,
    "samples": 50,
    "probes": [],
    "overrides": {"theta": 0.2, "gamma": 0.2, "delta_E": 1e-6, "host_factor": 3, "r_ratio": 0.2, "time_points": 400},
    "shell": {"l": 8, "L1": 24, "L2": 48, "E0": 2.0, "kind": "good", "points": [{"m": 0.1, "eta": 0.5}]},
    "reduce": {"scales": [32, 64, 128], "C": 1.0},
    "trap": {"L": 20, "E0": 2.0, "m": 0.05, "m_prime": 0.08, "m0": 0.1},
    "keythm": {"L": 60},
    "dynamics": {"side": 200, "t_max": [1000.0, 10000.0], "p": 1.0, "s": 1.0},
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _merge(base: dict, extra: dict, path="") -> dict:
    out = copy.deepcopy(base)
    errors = []
    for k, v in extra.items():
        key = f"{path}{k}"
        if k not in base:
            errors.append(f"{key}: unknown field")
        elif isinstance(base[k], dict) and k != "distribution":
            if not isinstance(v, dict):
                errors.append(f"{key}: expected an object")
            else:
                try:
                    out[k] = _merge(base[k], v, key + ".")
                except ConfigError as exc:
                    errors.extend(exc.errors)
        else:
            out[k] = copy.deepcopy(v)
    if errors:
        raise ConfigError(errors)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError([f"{text}: override must look like key=value"])
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(raw: dict, overrides) -> dict:
    out = copy.deepcopy(raw)
    for text in overrides or []:
        path, value = parse_override(text)
        node = out
        for k in path[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError([f"{'.'.join(path)}: not an object path"])
        node[path[-1]] = value
    return out


@dataclass
class ExperimentConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        cfg = cls(_merge(DEFAULT_CONFIG, raw))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides=None) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config: {exc}"]) from exc
        return cls.from_dict(apply_overrides(raw, overrides))

    def __getitem__(self, key):
        return self.data[key]

    def validate(self) -> None:
        d = self.data
        errors = []

        def num(key, value, cond, msg):
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not cond(value):
                errors.append(f"{key}: {msg} (got {value!r})")

        if d["schema"] != SCHEMA_VERSION:
            errors.append(f"schema: unsupported version {d['schema']!r}")
        num("dim", d["dim"], lambda v: int(v) == v and v >= 1, "must be a positive integer")
        if not errors:
            num("nu", d["nu"], lambda v: v > d["dim"] / 2.0, "must exceed d/2")
        num("eta", d["eta"], lambda v: 0 < v < 1, "must lie in (0, 1)")
        num("m", d["m"], lambda v: v > 0, "must be positive")
        num("fraction", d["fraction"], lambda v: 0 < v <= 1, "must lie in (0, 1]")
        num("p", d["p"], lambda v: v > 0, "must be positive")
        num("samples", d["samples"], lambda v: int(v) == v and v >= 1, "must be an integer >= 1")
        num("seed", d["seed"], lambda v: int(v) == v and v >= 0, "must be a non-negative integer")
        iv = d["interval"]
        if not (isinstance(iv, list) and len(iv) == 2 and all(isinstance(x, (int, float)) for x in iv) and iv[0] < iv[1]):
            errors.append(f"interval: must be [lo, hi] with lo < hi (got {iv!r})")
        unknown = [p for p in d["probes"] if p not in PROBES]
        if unknown:
            errors.append(f"probes: unknown probe(s) {unknown}; choose from {list(PROBES)}")
        try:
            Distribution(**d["distribution"])
        except (TypeError, ValueError) as exc:
            errors.append(f"distribution: {exc}")
        led = d["ledger"]
        try:
            self.ledger()
        except (InfeasibleConstants, ValueError, TypeError) as exc:
            errors.append(f"ledger: {exc}")
        for key in ("scales",):
            if not all(isinstance(v, (int, float)) and v > 0 for v in d[key]):
                errors.append(f"{key}: every scale must be positive")
        if not isinstance(led, dict):
            errors.append("ledger: expected an object")
        if errors:
            raise ConfigError(errors)

    def distribution(self) -> Distribution:
        return Distribution(**self.data["distribution"])

    def field(self, probe: str) -> DisorderField:
        return DisorderField(derive_seed(int(self.data["seed"]), PROBE_KEYS[probe]), self.distribution())

    def ledger(self):
        led = self.data["ledger"]
        return derive_constants(
            led["m0"], led["eta0"], led["p0"], led["p"], led["b"], self.data["dim"], led["rho"], led["J"], led["N2"],
            self.data["overrides"]["theta"],
        )

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def overrides(self) -> dict:
        """Every parameter whose value differs from the paper default."""
        out = {}
        for dotted, paper in PAPER_DEFAULTS.items():
            node = self.data
            for k in dotted.split("."):
                node = node[k]
            if node != paper:
                out[dotted] = {"value": node, "paper": paper}
        return out


# --- certification -------------------------------------------------------------------


@dataclass
class GoodScaleCertificate:
    L: float
    energy: float
    samples: int
    good: int
    estimate: float
    ci: tuple[float, float]
    target: float
    verdict: str
    incidents: int = 0

    def row(self) -> list:
        return [self.L, self.energy, self.samples, self.good, self.estimate, self.ci[0], self.ci[1], self.target, self.verdict]


CERT_HEADER = ["L", "E", "samples", "good", "estimate", "ci_low", "ci_high", "target", "verdict"]


def verdict(successes: int, trials: int, target: float) -> tuple[str, tuple[float, float]]:
    lo, hi = wilson_interval(successes, trials)
    if lo >= target:
        return "pass", (lo, hi)
    if hi < target:
        return "fail", (lo, hi)
    return "inconclusive", (lo, hi)


def certify_good_scale(config: ExperimentConfig, L: float, E: float) -> GoodScaleCertificate:
    """Monte Carlo estimate of ``P{Lambda_L(0) good at E}`` against ``1 - L^(-p d)``.

    The disorder is i.i.d., so one center stands in for every ``x``.
    """
    d = config.data
    base = config.field("certify")
    box = Box((0,) * d["dim"], L)
    n = int(d["samples"])
    good = incidents = 0
    for i in range(n):
        H = assemble(box, base.for_sample(i))
        try:
            good += classify_box(H, E, d["m"], d["eta"], d["fraction"]).good
        except NearSingular:
            incidents += 1
    target = 1.0 - L ** (-d["p"] * d["dim"])
    v, ci = verdict(good, n, target)
    return GoodScaleCertificate(L, E, n, good, good / n, ci, target, v, incidents)


def certify_interval(config: ExperimentConfig, L: float, energies) -> tuple[list[GoodScaleCertificate], dict]:
    certs = [certify_good_scale(config, L, float(E)) for E in energies]
    if not certs:
        return [], {}
    worst = min(certs, key=lambda c: c.estimate)
    return certs, {"worst_energy": worst.energy, "worst_estimate": worst.estimate, "worst_verdict": worst.verdict}


# --- probes ----------------------------------------------------------------------------


@dataclass
class ProbeResult:
    header: list
    rows: list
    summary: dict


def _probe_certify(cfg: ExperimentConfig) -> ProbeResult:
    rows, worst = [], []
    for L in cfg["scales"]:
        certs, summ = certify_interval(cfg, L, cfg["energies"])
        rows += [c.row() for c in certs]
        if summ:
            worst.append({"L": L, **summ})
    return ProbeResult(CERT_HEADER, rows, {"worst_by_scale": worst, "translation_invariance": "one center per (L, E); i.i.d. disorder"})


def _probe_shell(cfg: ExperimentConfig) -> ProbeResult:
    sh = cfg["shell"]
    ann = Annulus((0,) * cfg["dim"], sh["L2"], sh["L1"])
    rows = []
    for pt in sh["points"]:
        est = shell_probability(
            cfg.field("shell"), ann, sh["l"], sh["E0"], pt["m"], pt["eta"], int(cfg["samples"]), sh["kind"],
            cfg["fraction"], cfg["overrides"]["r_ratio"], strict=False,
        )
        e = est.to_dict()
        rows.append([pt["m"], pt["eta"], e["samples"], e["estimate"], e["ci_low"], e["ci_high"], e["bad_fraction"], e["paper_bound"]])
    header = ["m", "eta", "samples", "estimate", "ci_low", "ci_high", "bad_fraction", "paper_bound"]
    return ProbeResult(header, rows, {"l": sh["l"], "L1": sh["L1"], "L2": sh["L2"], "E0": sh["E0"]})


def _probe_reduce(cfg: ExperimentConfig) -> ProbeResult:
    led = cfg.ledger()
    base = cfg.field("reduce")
    x0 = (0,) * cfg["dim"]
    rows, means = [], []
    for L in cfg["reduce"]["scales"]:
        counts = []
        for i in range(int(cfg["samples"])):
            rs = reduced_spectrum(base.for_sample(i), x0, L, tuple(cfg["interval"]), led)
            count, bound, holds = count_bound_check(rs, led, cfg["reduce"]["C"], L)
            counts.append(count)
            rows.append([L, i, len(rs.base), count, bound, holds])
        means.append(float(np.mean(counts)))
    scales = cfg["reduce"]["scales"]
    slope = loglog_slope(scales, means) if len(scales) > 1 and all(v > 0 for v in means) else None
    summary = {"mean_counts": means, "fitted_exponent": slope, "bound_exponent": led.count_exponent, "ledger": led.to_dict()}
    return ProbeResult(["L", "sample", "base", "reduced", "bound", "holds"], rows, summary)


def _probe_trap(cfg: ExperimentConfig) -> ProbeResult:
    tr, ov = cfg["trap"], cfg["overrides"]
    base = cfg.field("trap")
    rows = []
    for i in range(int(cfg["samples"])):
        rep = trap_check(
            base.for_sample(i), (0,) * cfg["dim"], tr["L"], tr["E0"], tr["m"], tr["m_prime"], tr["m0"], cfg["eta"],
            cfg["nu"], ov["gamma"], delta=ov["delta_E"], host_factor=ov["host_factor"], fraction=cfg["fraction"],
        ).to_dict()
        rows.append([i, rep["in_event"], rep["holds"], rep["max_w"], rep["bound"], rep["proxies_used"]])
    hits = sum(r[1] for r in rows)
    lo, hi = wilson_interval(hits, len(rows))
    summary = {"event_rate": hits / len(rows), "ci_low": lo, "ci_high": hi, "violations": sum(r[2] is False for r in rows)}
    return ProbeResult(["sample", "in_event", "holds", "max_w", "bound", "proxies"], rows, summary)


def _probe_keythm(cfg: ExperimentConfig) -> ProbeResult:
    led, ov = cfg.ledger(), cfg["overrides"]
    summ, reps = key_theorem_rate(
        cfg.field("keythm"), (0,) * cfg["dim"], cfg["keythm"]["L"], tuple(cfg["interval"]), led, cfg["nu"],
        int(cfg["samples"]), delta=ov["delta_E"], host_factor=ov["host_factor"],
    )
    rows = [[i, r.energies, r.implication_violations, r.product_violations, r.max_product] for i, r in enumerate(reps)]
    summary = {**asdict(summ), "ledger": led.to_dict()}
    return ProbeResult(["sample", "energies", "implication_violations", "product_violations", "max_product"], rows, summary)


def _probe_dynamics(cfg: ExperimentConfig) -> ProbeResult:
    dy = cfg["dynamics"]
    fam = field_family(cfg.field("dynamics"), dy["side"], cfg["dim"])
    rows, results = [], []
    for t_max in dy["t_max"]:
        trajs = []
        res = sdl_statistic(
            fam, int(cfg["samples"]), tuple(cfg["interval"]), dy["p"], dy["s"], t_max,
            int(cfg["overrides"]["time_points"]), bootstrap_seed=int(cfg["seed"]), trajectories=trajs,
        )
        results.append(res.to_dict())
        buf = io.StringIO()
        write_trajectories(trajs, buf)
        for line in buf.getvalue().splitlines()[1:]:
            rows.append([t_max] + line.split(","))
    return ProbeResult(["t_max", "seed", "t", "p", "moment"], rows, {"statistics": results})


RUNNERS = {
    "certify": _probe_certify,
    "shell": _probe_shell,
    "reduce": _probe_reduce,
    "trap": _probe_trap,
    "keythm": _probe_keythm,
    "dynamics": _probe_dynamics,
}


def _fmt(v) -> str:
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


@dataclass
class RunReport:
    out: Path
    status: dict
    manifest: dict

    @property
    def ok(self) -> bool:
        return all(s == "ok" for s in self.status.values())


def run_experiment(config: ExperimentConfig, out) -> RunReport:
    """Run the selected probes, writing ``<probe>.csv``, ``<probe>.summary.json`` and ``manifest.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    status = {}
    for name in config["probes"]:
        try:
            res = RUNNERS[name](config)
        except Exception as exc:  # recorded per probe; others still run
            status[name] = f"error: {type(exc).__name__}: {exc}"
            continue
        write_csv(out / f"{name}.csv", res.header, res.rows)
        (out / f"{name}.summary.json").write_text(json.dumps(_json_safe(res.summary), sort_keys=True, indent=2) + "\n")
        status[name] = "ok"
    try:
        ledger = config.ledger().to_dict()
    except (InfeasibleConstants, ValueError):
        ledger = None
    manifest = {
        "master_seed": config["seed"],
        "config": config.data,
        "config_sha256": config.digest(),
        "ledger": ledger,
        "overrides": config.overrides(),
        "software": {"package": "anderson_msa", "version": __version__, "numpy": np.__version__},
        "probes": status,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out / "manifest.json").write_text(json.dumps(_json_safe(manifest), sort_keys=True, indent=2) + "\n")
    return RunReport(out, status, manifest)
