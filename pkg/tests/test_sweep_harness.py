import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from outer_restart.mode_dynamics import OuterHyperparams
from outer_restart.sweep_harness import (
    SweepConfig,
    clip_log_loss,
    default_sweep_config,
    robustness_metric,
    run_sweep,
)
from outer_restart.trajectory_sim import (
    Block,
    GlobalRestart,
    NoRestart,
    SoftRestart,
    Spectrum,
    simulate_blocks,
    simulate_modes,
)

SMALL = dict(beta_grid=(0.5, 0.9, 0.99), nu_grid=(0.5, 1.0), k_grid=(2, 3, 5, 8, 16, 24), horizon=80)


def small(**kw):
    params = dict(SMALL, spectrum=Spectrum.direct([0.95]))
    params.update(kw)
    return SweepConfig(**params)


class TestConfig:
    def test_rejects_empty_grids_and_bad_clip(self):
        with pytest.raises(ValueError):
            small(beta_grid=())
        with pytest.raises(ValueError):
            small(loss_clip=(2.0, -12.0))
        with pytest.raises(ValueError):
            small(k_grid=(0,))
        with pytest.raises(ValueError):
            small(schedule="per_mode")

    def test_needs_exactly_one_model(self):
        with pytest.raises(ValueError):
            SweepConfig(**SMALL)


class TestRunSweep:
    def test_single_cell_matches_direct_simulation(self):
        spec = Spectrum.direct([0.95, 0.4], [1.0, 2.0])
        cfg = SweepConfig(beta_grid=(0.9,), nu_grid=(1.0,), k_grid=(5,), spectrum=spec, horizon=80)
        res = run_sweep(cfg)
        h = OuterHyperparams(1.0, 0.9)
        for sched, k, key in ((NoRestart(), 0, "none"), (GlobalRestart(5), 5, "global")):
            for kind in ("HB", "NAG"):
                ref = simulate_modes(spec, h, kind, sched, 80).final_loss
                assert res.cells[(kind, key, k, 0.9, 1.0)] == clip_log_loss(ref, -12, 2)

    def test_soft_cells_match_direct_simulation(self):
        spec = Spectrum.direct([0.7])
        cfg = SweepConfig(beta_grid=(0.95,), nu_grid=(0.5,), k_grid=(7,), spectrum=spec,
                          horizon=50, schedule="soft", retain=0.3, inject=0.2)
        res = run_sweep(cfg)
        ref = simulate_modes(spec, OuterHyperparams(0.5, 0.95), "HB", SoftRestart(7, 0.3, 0.2), 50).final_loss
        assert res.cells[("HB", "soft", 7, 0.95, 0.5)] == clip_log_loss(ref, -12, 2)

    def test_blocks_match_direct_simulation(self):
        blocks = (Block("a", Spectrum.direct([0.9, 0.95])), Block("b", Spectrum.direct([0.2])))
        cfg = SweepConfig(beta_grid=(0.9,), nu_grid=(1.0,), k_grid=(6,), blocks=blocks, horizon=60)
        res = run_sweep(cfg)
        ref = simulate_blocks(blocks, "NAG", GlobalRestart(6), 60, hyper=OuterHyperparams(1.0, 0.9)).final_loss
        assert res.cells[("NAG", "global", 6, 0.9, 1.0)] == clip_log_loss(ref, -12, 2)

    def test_every_cell_present_and_clipped(self):
        cfg = small()
        res = run_sweep(cfg)
        assert len(res.cells) == 2 * (len(cfg.k_grid) + 1) * 3 * 2
        assert all(-12.0 <= v <= 2.0 for v in res.cells.values())

    def test_best_restart_not_worse_than_none(self):
        res = run_sweep(small())
        for (kind, beta, nu), (v, _k) in res.best_restart().items():
            assert v <= res.cells[(kind, "none", 0, beta, nu)] + 1e-9

    def test_best_restart_is_reproduced_by_resimulation(self):
        cfg = small()
        res = run_sweep(cfg)
        for (kind, beta, nu), (v, k) in res.best_restart().items():
            assert k in cfg.k_grid
            traj = simulate_modes(cfg.spectrum, OuterHyperparams(nu, beta), kind, GlobalRestart(k), cfg.horizon)
            assert clip_log_loss(traj.final_loss, -12, 2) == v

    def test_divergence_maps_to_upper_clip(self):
        cfg = small(beta_grid=(0.5,), nu_grid=(30.0,), k_grid=(2,), spectrum=Spectrum.direct([1.0]), horizon=400)
        res = run_sweep(cfg)
        assert res.cells[("HB", "none", 0, 0.5, 30.0)] == 2.0

    def test_deterministic(self):
        assert run_sweep(small()).to_csv() == run_sweep(small()).to_csv()

    def test_grid_order_does_not_change_cells(self):
        a = run_sweep(small())
        b = run_sweep(small(beta_grid=(0.99, 0.5, 0.9), nu_grid=(1.0, 0.5), k_grid=(24, 3, 16, 2, 8, 5),
                            kinds=("NAG", "HB")))
        assert a.cells == b.cells
        assert a.to_csv() == b.to_csv()

    def test_batch_composition_does_not_change_cells(self):
        full = run_sweep(small())
        one = run_sweep(small(beta_grid=(0.9,), nu_grid=(1.0,)))
        for key, v in one.cells.items():
            assert full.cells[key] == v

    def test_csv_layout(self):
        lines = run_sweep(small(beta_grid=(0.9,), nu_grid=(1.0,), k_grid=(5,), kinds=("HB",))).to_csv().splitlines()
        assert lines[0] == "kind,schedule,K,beta_out,nu,clipped_log10_loss"
        assert lines[1].startswith("HB,global,5,0.9,1.0,")
        assert lines[2].startswith("HB,none,,0.9,1.0,")


class TestClip:
    @given(st.floats(allow_nan=True, allow_infinity=True))
    def test_idempotent(self, loss):
        once = clip_log_loss(loss, -12, 2)
        assert -12 <= once <= 2
        assert clip_log_loss(10.0**once, -12, 2) == pytest.approx(once, abs=1e-12)

    def test_special_values(self):
        assert clip_log_loss(math.inf, -12, 2) == 2.0
        assert clip_log_loss(math.nan, -12, 2) == 2.0
        assert clip_log_loss(0.0, -12, 2) == -12.0
        assert clip_log_loss(1.0, -12, 2) == 0.0

    def test_vectorised(self):
        out = clip_log_loss(np.array([1e-20, 1.0, 1e5]), -12, 2)
        assert list(out) == [-12.0, 0.0, 2.0]


class TestRobustness:
    def test_all_below_threshold(self):
        cfg = small(beta_grid=(0.5,), nu_grid=(1.0,), k_grid=(2,), kinds=("HB",))
        res = run_sweep(cfg)
        assert res.cells[("HB", "none", 0, 0.5, 1.0)] == -12.0
        metric = robustness_metric(res, -5.0)
        assert metric[("HB", "none")] == 1.0 and metric[("HB", "best")] == 1.0

    def test_threshold_at_lower_clip_counts_only_saturated_cells(self):
        res = run_sweep(small())
        metric = robustness_metric(res, -12.0)
        vals = [v for (k, s, _K, _b, _n), v in res.cells.items() if k == "HB" and s == "none"]
        assert metric[("HB", "none")] == sum(v == -12.0 for v in vals) / len(vals)

    def test_threshold_outside_clip(self):
        res = run_sweep(small(beta_grid=(0.5,), nu_grid=(1.0,), k_grid=(2,)))
        with pytest.raises(ValueError):
            robustness_metric(res, 3.0)

    def test_per_period_groups(self):
        res = run_sweep(small())
        metric = robustness_metric(res, -5.0)
        assert ("NAG", "global:16") in metric
        for kind in ("HB", "NAG"):
            assert metric[(kind, "best")] >= max(v for (k, s), v in metric.items() if k == kind and s != "best")

    def test_default_config_uses_six_modes(self):
        cfg = default_sweep_config()
        assert len(cfg.spectrum) == 6 and cfg.horizon == 80 and cfg.loss_clip == (-12.0, 2.0)
