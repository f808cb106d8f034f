import math

import numpy as np
import pytest

from npnslab.attractor import (
    AttractorCloud,
    assemble_cloud,
    build_cloud,
    hausdorff,
    invariance_defect,
    load_cloud,
    loglog_slope,
    pairwise_distances,
    save_cloud,
    semi_distance,
    sweep_verdict,
)
from npnslab.initial import sample_ball
from npnslab.integrator import IntegratorConfig
from npnslab.npns import Gauge, NpnsState, PhysicalParams
from npnslab.spectral import AREA, Grid
from npnslab.stochastic import sample_path


def point_cloud(grid, offsets):
    """States whose only nonzero coefficient is the sigma mean, so distances are |a - b| * 2 pi."""
    data = np.zeros((len(offsets), 4) + grid.spectral_shape, dtype=complex)
    data[:, 2, 0, 0] = offsets
    return NpnsState(grid, data, 0.0, Gauge.PHYSICAL)


class TestDistances:
    def test_semi_distance_of_nested_clouds(self, grid16):
        a = point_cloud(grid16, [0.0, 1.0])
        b = point_cloud(grid16, [0.0, 1.0, 3.0])
        scale = math.sqrt(AREA)
        assert semi_distance(a, b).value == 0.0
        res = semi_distance(b, a)
        assert res.value == pytest.approx(2.0 * scale)
        assert res.witness == (2, 1)
        assert hausdorff(a, b) == pytest.approx(2.0 * scale)

    def test_pairwise_metrics(self, grid16):
        a = point_cloud(grid16, [0.0, 2.0]).data
        d = pairwise_distances(a, a, grid16, "H")
        assert d[0, 1] == pytest.approx(2 * math.sqrt(AREA))
        assert np.all(pairwise_distances(a, a, grid16, "V") == 0)  # constants are invisible in V
        with pytest.raises(ValueError):
            pairwise_distances(a, a, grid16, "L7")

    def test_rejects_mismatched_grids(self, grid16):
        with pytest.raises(ValueError, match="different grids"):
            semi_distance(point_cloud(grid16, [0.0]), point_cloud(Grid(8), [0.0]))


class TestCloudAssembly:
    def test_converged_when_displacements_shrink(self, grid16):
        finals = [point_cloud(grid16, [v]).data for v in (1.0, 0.5, 0.4, 0.39)]
        c = assemble_cloud(0.1, 0, [-1, -2, -4, -8], finals, grid16)
        assert c.converged and c.gauge == pytest.approx(0.01 * math.sqrt(AREA))
        assert c.t0 == -8

    def test_not_converged_when_displacements_grow(self, grid16):
        finals = [point_cloud(grid16, [v]).data for v in (1.0, 0.9, 0.5)]
        assert not assemble_cloud(0.1, 0, [-1, -2, -4], finals, grid16).converged

    def test_save_load_round_trip(self, tmp_path, grid16):
        finals = [point_cloud(grid16, [0.5, 1.5]).data] * 2
        c = assemble_cloud(0.2, 7, [-1, -2], finals, grid16, {"members": 2})
        save_cloud(tmp_path / "c", c)
        back = load_cloud(tmp_path / "c")
        assert back.seed == 7 and back.levels == (-1.0, -2.0) and len(back) == 2
        np.testing.assert_allclose(back.points.data, c.points.data)


class TestVerdicts:
    def test_sweep_verdict(self):
        assert sweep_verdict([0.5, 0.05], [1.0, 0.2], [0.01, 0.01], [True, True]) == (True, "pass")
        assert sweep_verdict([0.5, 0.05], [1.0, 0.3], [0.01, 0.01], [True, True]) == (False, "fail")
        assert sweep_verdict([0.5, 0.05], [1.0, 0.2], [0.01, 0.01], [True, False])[1] == "indicative"

    def test_single_epsilon_sweep(self):
        assert sweep_verdict([0.1], [0.01], [0.02], [True]) == (True, "pass")

    def test_loglog_slope(self):
        x = np.array([0.4, 0.2, 0.1])
        assert loglog_slope(x, 3 * x**1.5) == pytest.approx(1.5)
        assert math.isnan(loglog_slope(x[:1], x[:1]))


class TestUnforcedAttractor:
    def test_unforced_cloud_collapses_to_rest(self, grid16):
        p = PhysicalParams.unforced(grid16)
        ens = sample_ball(grid16, np.random.default_rng(0), 1.0, 3, mass=0.5)
        cloud = build_cloud(0.0, None, p, [-2.0, -4.0], ens, IntegratorConfig(0.01))
        fluct = cloud.points.data.copy()
        fluct[:, 2, 0, 0] = 0
        assert np.max(np.abs(fluct)) < 1e-3
        # the gauge is the shallower level's residual decay, so it bounds the deeper one
        assert np.max(np.abs(fluct)) < cloud.gauge < 0.05

    def test_invariance_defect_small(self, grid16):
        p = PhysicalParams.kolmogorov(grid16, 0.5)
        ens = sample_ball(grid16, np.random.default_rng(1), 1.0, 2, mass=0.5)
        path = sample_path(2, -10, 2, 0.01)
        cfg = IntegratorConfig(0.01)
        cloud = build_cloud(0.1, path, p, [-2.0, -4.0], ens, cfg)
        d, gauge = invariance_defect(cloud, path, p, 0.5, ens, cfg)
        assert d <= gauge + 1e-6
