import json
from pathlib import Path

import numpy as np
import pytest

from anderson_msa import cli
from anderson_msa.harness import (
    DEFAULT_CONFIG,
    PAPER_DEFAULTS,
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    certify_good_scale,
    certify_interval,
    run_experiment,
    verdict,
)

RECIPE = Path(__file__).resolve().parents[1] / "src" / "anderson_msa" / "recipes" / "d1-strong-disorder.json"


def cfg(**kw):
    raw = {"samples": 30}
    raw.update(kw)
    return ExperimentConfig.from_dict(raw)


def test_defaults_validate():
    assert cfg()["nu"] == 1.0


@pytest.mark.parametrize(
    "raw,field",
    [
        ({"nu": 0.5}, "nu"),
        ({"eta": 1.0}, "eta"),
        ({"samples": 0}, "samples"),
        ({"probes": ["nope"]}, "probes"),
        ({"interval": [1, 0]}, "interval"),
        ({"distribution": {"kind": "cauchy"}}, "distribution"),
        ({"ledger": {"rho": 0.2}}, "ledger"),
        ({"shell": {"bogus": 1}}, "shell.bogus"),
        ({"schema": 2}, "schema"),
    ],
)
def test_field_level_errors(raw, field):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(raw)
    assert any(e.startswith(field) for e in exc.value.errors)


def test_nu_must_exceed_half_dimension():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"dim": 2, "nu": 1.0})
    assert ExperimentConfig.from_dict({"dim": 2, "nu": 1.01})["nu"] == 1.01


def test_overrides_parse():
    raw = apply_overrides({}, ["shell.l=10", "seed=4", "distribution.kind=uniform"])
    assert raw == {"shell": {"l": 10}, "seed": 4, "distribution": {"kind": "uniform"}}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_certificate_deterministic_pass():
    c = cfg(distribution={"kind": "point", "lam": 0.0, "v0": 0.0}, m=0.5)
    for L in (10, 20, 40):
        cert = certify_good_scale(c, L, -10.0)
        assert cert.estimate == 1.0 and cert.verdict == "pass"
        assert cert.ci[0] == pytest.approx(0.886, abs=5e-4)


def test_certificate_band_center_fails():
    c = cfg(distribution={"kind": "bernoulli", "lam": 0.1}, m=2.0)
    cert = certify_good_scale(c, 20, -2.0)
    assert cert.estimate < 0.1 and cert.verdict == "fail"


def test_certify_interval_shapes():
    c = cfg(distribution={"kind": "point", "lam": 0.0, "v0": 0.0}, m=0.5)
    assert certify_interval(c, 20, []) == ([], {})
    certs, summary = certify_interval(c, 20, [-10.0])
    assert len(certs) == 1 and certs[0] == certify_good_scale(c, 20, -10.0)
    assert summary["worst_energy"] == -10.0


def test_verdict_rule():
    assert verdict(30, 30, 0.8)[0] == "pass"
    assert verdict(0, 30, 0.8)[0] == "fail"
    assert verdict(25, 30, 0.8)[0] == "inconclusive"


@pytest.mark.parametrize("truth,target", [(0.9, 0.9), (0.95, 0.9), (0.85, 0.9), (0.99, 0.97), (0.5, 0.5)])
def test_verdict_calibration(truth, target):
    rng = np.random.default_rng(2024)
    n, reps = 200, 1000
    wrong = 0
    for _ in range(reps):
        k = int(np.sum(rng.random(n) < truth))
        v, _ = verdict(k, n, target)
        wrong += (v == "pass" and truth < target) or (v == "fail" and truth >= target)
    assert wrong / reps <= 0.05


def test_d2_worst_case_sweep_is_reported():
    c = cfg(dim=2, nu=1.5, distribution={"kind": "bernoulli", "lam": 8.0}, m=0.3)
    worst = [certify_interval(c, L, np.linspace(-8.5, -7.5, 3))[1]["worst_estimate"] for L in (12, 18, 26)]
    assert all(0.0 <= w <= 1.0 for w in worst)


def test_empty_probe_list_writes_manifest_only(tmp_path):
    rep = run_experiment(cfg(), tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["probes"] == {} and m["master_seed"] == 1 and len(m["config_sha256"]) == 64
    assert rep.ok


def leaves(d, prefix=""):
    for k, v in d.items():
        if isinstance(v, dict) and k != "distribution":
            yield from leaves(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", v


def test_manifest_lists_every_non_default_override(tmp_path):
    raw = json.loads(RECIPE.read_text())
    raw["probes"] = []
    raw["ledger"]["J"] = 2
    c = ExperimentConfig.from_dict(raw)
    manifest = run_experiment(c, tmp_path).manifest
    flat = dict(leaves(c.data))
    for key, paper in PAPER_DEFAULTS.items():
        if flat[key] != paper:
            assert manifest["overrides"][key]["value"] == flat[key]
        else:
            assert key not in manifest["overrides"]
    assert {"overrides.theta", "overrides.gamma", "ledger.J"} <= set(manifest["overrides"])
    # every desk knob, paper-backed or not, is echoed through the stored config
    stored = dict(leaves(json.loads((tmp_path / "manifest.json").read_text())["config"]))
    assert all(stored[k] == v for k, v in leaves(c.data) if k.startswith("overrides."))


def test_probe_failure_is_isolated(tmp_path):
    c = cfg(probes=["reduce", "certify"], reduce={"scales": [3], "C": 1.0})
    rep = run_experiment(c, tmp_path)
    assert rep.status["reduce"].startswith("error")
    assert rep.status["certify"] == "ok"
    assert (tmp_path / "certify.csv").exists() and not (tmp_path / "reduce.csv").exists()


def test_cli_exit_codes(tmp_path):
    out = str(tmp_path / "a")
    assert cli.main(["certify", "--samples", "5", "--out", out]) == 0
    assert (Path(out) / "certify.csv").read_text().startswith("L,E,samples,good")
    assert cli.main(["certify", "--override", "eta=3", "--out", out]) == 2
    assert cli.main(["run", str(tmp_path / "missing.json"), "--out", out]) == 2
    assert cli.main(["reduce", "--samples", "2", "--override", "reduce.scales=[3]", "--out", out]) == 3


def test_recipe_runs_and_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(RECIPE), "--samples", "4", "--out", str(a)]) == 0
    assert cli.main(["run", str(RECIPE), "--samples", "4", "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert "manifest.json" in names and "dynamics.summary.json" in names
    for name in names:
        if name != "manifest.json":
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
