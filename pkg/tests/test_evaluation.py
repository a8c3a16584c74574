import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laser.data import GenConfig
from laser.errors import ConfigError, DimensionError, UndefinedMetricError
from laser.evaluation import (
    SweepSpec,
    align_latents,
    export_scatter,
    mape,
    run_sweep,
)
from laser.model import TrainConfig

BASE = GenConfig(n_obs=60, n_exp=60, d_x=4)


def fast_spec(**kw):
    args = dict(axis="ratio", values=(0.0, 1.0), base=BASE, seeds=(0, 1, 2), methods=("sind-linear", "bd-linear"))
    args.update(kw)
    return SweepSpec(**args)


# --- metric ---------------------------------------------------------------------


def test_mape_cases():
    assert mape(2.0, 2.0) == 0.0
    assert mape(1.0, 1.1) == pytest.approx(0.1)
    assert mape(-2.0, -1.0) == 0.5
    with pytest.raises(UndefinedMetricError):
        mape(0.0, 1.0)


@given(st.floats(-1e6, 1e6).filter(lambda v: abs(v) > 1e-3), st.floats(-1e6, 1e6),
       st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3))
def test_mape_scale_invariant(tau, tau_hat, c):
    assert mape(c * tau, c * tau_hat) == pytest.approx(mape(tau, tau_hat), rel=1e-9, abs=1e-12)


# --- spec -----------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec(values=(0.3,))
    with pytest.raises(ConfigError):
        SweepSpec(values=(1.2,))
    with pytest.raises(ConfigError):
        SweepSpec(axis="proxy_count", values=(0,))
    with pytest.raises(ConfigError):
        SweepSpec(methods=("eete",))
    with pytest.raises(ConfigError):
        SweepSpec(seeds=(1, 1))
    with pytest.raises(ConfigError):
        SweepSpec(axis="noise")


def test_protocol_worlds():
    spec = SweepSpec()
    assert spec.values == (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    w = spec.world(0.6, 3)
    assert (w.n_latent, w.n_obs_surr, w.n_proxies, w.seed) == (3, 2, 3, 3)
    assert spec.train_config(w).latent_dim == 5 and spec.train_config(w).seed == 3
    w = SweepSpec(axis="proxy_count", values=(10, 15, 20, 25, 30)).world(20, 0)
    assert (w.n_latent, w.n_obs_surr, w.n_proxies) == (5, 0, 20)
    w = SweepSpec(base=GenConfig(n_latent=0, n_proxies=0, graph_variant="all-observed"), values=(0.0,)).world(0.0, 0)
    assert w.graph_variant == "all-observed"


# --- sweeps ---------------------------------------------------------------------


def test_six_rows_per_method():
    table = run_sweep(fast_spec(values=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0), seeds=(0,), methods=("sind-linear",)))
    assert len(table.rows) == 6
    assert [r.value for r in table.rows] == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]


def test_single_cell_std_zero():
    table = run_sweep(fast_spec(values=(0.4,), seeds=(5,), methods=("sind-linear",)))
    (row,) = table.rows
    assert row.std == 0.0 and len(row.per_seed) == 1 and row.mean == row.per_seed[0]


def test_aggregation_sample_std_and_seed_permutation():
    a = run_sweep(fast_spec(seeds=(0, 1, 2)))
    b = run_sweep(fast_spec(seeds=(2, 0, 1)))
    for ra in a.rows:
        rb = b.row(ra.method, ra.value)
        assert len(ra.per_seed) == 3
        assert ra.mean == pytest.approx(rb.mean, rel=1e-14)
        assert ra.std == pytest.approx(rb.std, rel=1e-12)
        assert ra.std == pytest.approx(np.std(ra.per_seed, ddof=1), rel=1e-14)


def test_resume_reuses_persisted_cells(tmp_path):
    spec = fast_spec()
    first = run_sweep(spec, cell_dir=tmp_path)
    cells = sorted(tmp_path.glob("*.json"))
    assert len(cells) == 6
    # tamper with one cell: a resumed sweep must read it instead of recomputing
    doc = json.loads(cells[0].read_text())
    doc["results"]["sind-linear"]["mape"] = 123.0
    cells[0].write_text(json.dumps(doc))
    second = run_sweep(spec, cell_dir=tmp_path)
    assert 123.0 in second.row("sind-linear", doc["value"]).per_seed
    # a different configuration ignores stale cells
    third = run_sweep(fast_spec(base=GenConfig(n_obs=61, n_exp=60, d_x=4)), cell_dir=tmp_path)
    assert 123.0 not in third.row("sind-linear", doc["value"]).per_seed
    assert first.row("bd-linear", 1.0).per_seed == second.row("bd-linear", 1.0).per_seed


def test_interrupted_sweep_keeps_finished_cells(tmp_path):
    spec = fast_spec()
    seen = []

    def boom(cell):
        seen.append(cell)
        if len(seen) == 2:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_sweep(spec, cell_dir=tmp_path, progress=boom)
    assert len(list(tmp_path.glob("*.json"))) == 2
    resumed = run_sweep(spec, cell_dir=tmp_path)
    fresh = run_sweep(spec)
    assert resumed.rows == fresh.rows


def test_failed_cells_are_marked(tmp_path):
    # three experimental units at p = 0.01: nearly always a single arm, so the propensity fit fails
    spec = fast_spec(base=GenConfig(n_obs=60, n_exp=3, d_x=4, exp_treatment_p=0.01), values=(0.0,), methods=("sind-linear",))
    table = run_sweep(spec)
    row = table.rows[0]
    assert row.per_seed.count(None) >= 2 and row.partial
    table.to_csv(tmp_path / "t.csv")
    assert "failed" in (tmp_path / "t.csv").read_text()


def test_parallel_matches_serial():
    spec = fast_spec(seeds=(0, 1))
    assert run_sweep(spec, jobs=2).rows == run_sweep(spec, jobs=1).rows


def test_laser_cell_runs():
    spec = fast_spec(values=(0.4,), seeds=(0,), methods=("laser",), train=TrainConfig(epochs=2))
    (row,) = run_sweep(spec).rows
    assert row.n_ok == 1


def test_table_outputs(tmp_path):
    table = run_sweep(fast_spec())
    table.to_csv(tmp_path / "t.csv")
    table.to_json(tmp_path / "t.json")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0][:6] == ["method", "axis", "value", "mean", "std", "n_ok"]
    assert rows[0][6:] == ["seed_0", "seed_1", "seed_2"]
    assert len(rows) == 1 + 4
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["config_digest"] == fast_spec().digest() and len(doc["rows"]) == 4
    assert "sind-linear" in table.format()


# --- alignment ------------------------------------------------------------------


def test_affine_copy_aligns_perfectly():
    s = np.random.default_rng(0).normal(size=(500, 2))
    fit = align_latents(s, 2 * s + 3)
    np.testing.assert_allclose(fit.r2_per_dim, 1.0, atol=1e-12)
    np.testing.assert_allclose(fit.aligned, s, atol=1e-10)
    assert not fit.degenerate


def test_independent_noise_does_not_align():
    rng = np.random.default_rng(1)
    fit = align_latents(rng.normal(size=(10_000, 2)), rng.normal(size=(10_000, 2)))
    assert np.all(fit.r2_per_dim < 0.05)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_r2_invariant_to_invertible_affine_maps(vals):
    a = np.array(vals[:4]).reshape(2, 2)
    if abs(np.linalg.det(a)) < 0.1:
        a = a + 2 * np.eye(2)
    if abs(np.linalg.det(a)) < 0.1:
        return
    rng = np.random.default_rng(2)
    s_true = rng.normal(size=(300, 2))
    s_hat = np.tanh(s_true) + 0.3 * rng.normal(size=(300, 2))
    base = align_latents(s_true, s_hat).r2_per_dim
    moved = align_latents(s_true, s_hat @ a + np.array(vals[4:])).r2_per_dim
    assert np.max(np.abs(base - moved)) <= 1e-8


def test_rank_deficient_is_flagged():
    s = np.random.default_rng(3).normal(size=(100, 2))
    s_hat = np.column_stack([s[:, 0], 2 * s[:, 0]])
    fit = align_latents(s, s_hat)
    assert fit.degenerate and fit.r2_per_dim[0] == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        align_latents(s, s_hat[:50])


def test_export_scatter(tmp_path):
    rng = np.random.default_rng(4)
    s, t = rng.normal(size=(30, 2)), rng.integers(0, 2, 30)
    fit = align_latents(s, s + 0.1 * rng.normal(size=(30, 2)))
    export_scatter(s, fit.aligned, t, tmp_path / "a.csv")
    export_scatter(s, fit.aligned, t, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["true0", "true1", "aligned0", "aligned1", "t"]
    assert len(rows) == 31 and all(len(r) == 5 for r in rows)
    back = np.array(rows[1:], dtype=float)
    np.testing.assert_array_equal(back[:, :2], s)
    with pytest.raises(DimensionError):
        export_scatter(s, fit.aligned[:, :1], t, tmp_path / "c.csv")
