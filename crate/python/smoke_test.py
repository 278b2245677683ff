"""Smoke test for the skewfit Python bindings.

Build and install first:

    pip install --no-build-isolation -e crates/python

then run `python python/smoke_test.py` (or `pytest python/smoke_test.py`).
"""

import json
import math
import tempfile
from pathlib import Path

import numpy as np

import skewfit


def test_factor_saturates_exactly():
    assert skewfit.factor_from_log_pair(0.0, -800.0) == 1.0
    assert skewfit.factor_from_log_pair(-800.0, 0.0) == 0.0
    assert skewfit.factor_from_log_pair(-math.inf, -math.inf) == 0.5


def test_skewed_density_is_normalized_and_reflects():
    model = skewfit.Model.battery("poisson-1d")
    la = model.fit("la")
    skew = model.skew(la)
    (c,) = la.center
    sd = math.sqrt(la.covariance[0][0])
    grid = np.linspace(c - 12 * sd, c + 12 * sd, 4001)
    dens = np.exp([skew.log_pdf([t]) for t in grid])
    assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-6
    for t in (c - sd, c + 0.3 * sd, c + 2 * sd):
        w, w_mirror = skew.factor([t]), skew.factor([2 * c - t])
        assert abs(w + w_mirror - 1.0) < 1e-12

    draws = np.array(skew.sample(200_000, seed=3))[:, 0]
    mean = np.trapezoid(grid * dens, grid)
    assert abs(draws.mean() - mean) < 5 * draws.std() / math.sqrt(len(draws))
    assert skew.sample(10, seed=3) == skew.sample(10, seed=3)


def test_conjugate_model_degenerates_to_the_base():
    model = skewfit.Model.battery("conjugate-1d")
    la = model.fit("la")
    skew = model.skew(la)
    for t in np.linspace(-2, 2, 9):
        assert abs(skew.factor([t]) - 0.5) < 1e-12
        assert abs(skew.log_pdf([t]) - la.log_pdf([t])) < 1e-12
    for label, d in model.divergences("la").items():
        assert abs(d["skew"]) <= 1e-8, label


def test_skewing_never_increases_divergence():
    model = skewfit.Model.battery("poisson-2d")
    for label, d in model.divergences("la").items():
        assert d["skew"] <= d["base"] + 1e-8, label


def test_glm_constructor_and_approximation_round_trip():
    x = [[1.0, v] for v in (-1.0, -0.5, 0.0, 0.5, 1.0, 1.5)]
    y = [0, 1, 1, 2, 4, 6]
    model = skewfit.Model.glm(x, y, family="poisson", prior_var=4.0)
    assert model.dim == 2 and "gep" in model.supported_kinds()
    ep = model.fit("gep")
    again = skewfit.Approximation.from_json(ep.to_json())
    assert again.center == ep.center
    try:
        model.fit("nope")
    except skewfit.ConfigError:
        pass
    else:
        raise AssertionError("unknown kinds must raise ConfigError")


def test_rates_order_the_variants():
    exp = skewfit.rates(sample_sizes=[50, 100, 200, 400, 800], replicates=5, seed=1)
    slopes = {c["label"]: c["fitted_slope"] for c in exp["curves"]}
    assert slopes["q2"] < slopes["q1"] < slopes["f1"] < 0, slopes


def test_cli_equivalent_run_writes_reports():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "run.toml"
        cfg.write_text(
            "seed = 2\n[[approximations]]\nkind = \"la\"\n"
            "[mcmc]\nn_warmup = 300\nn_keep = 1000\n[compare]\nn_draws = 2000\n"
        )
        (report,) = skewfit.run("compare", str(cfg), str(Path(tmp) / "out"))
        doc = json.loads(Path(report).read_text())
        assert doc["command"] == "compare"
        assert [r["name"] for r in doc["tables"][0]["table"]["rows"]] == ["la", "skew-la"]


if __name__ == "__main__":
    tests = [(k, v) for k, v in dict(globals()).items() if k.startswith("test_")]
    for name, fn in tests:
        fn()
        print(f"ok  {name}")
    print(f"{len(tests)} smoke tests passed")
