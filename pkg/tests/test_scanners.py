import itertools
import math
import warnings

import numpy as np
import pytest

from scanstat import (
    GridField,
    Rect,
    RegimeWarning,
    ScanFamily,
    ShapeRange,
    SignalSpec,
    adaptive_scan,
    alpha_from_tau,
    centering,
    inject_signal,
    modified_adaptive_stat,
    multiscale_scan,
    oracle_centering,
    oracle_scan,
    pvalue,
    tau_hat,
    white_noise,
)
from scanstat.scanners import modified_outcome, shape_maxima

from conftest import brute_zscores

quiet = pytest.mark.filterwarnings("ignore::scanstat.scanners.RegimeWarning")


def exhaustive(data, shapes):
    """(shape, anchor, z) for every rectangle, by explicit loops."""
    out = []
    for shape in itertools.product(shapes.sides(), repeat=data.ndim):
        zs = brute_zscores(data, shape)
        for t in np.ndindex(zs.shape):
            out.append((shape, t, float(zs[t])))
    return out


def pulse(n, rect, mu=10.0, d=2):
    return inject_signal(GridField(np.zeros((n,) * d)), SignalSpec(rect, mu))


@quiet
class TestBruteForce:
    shapes = ShapeRange(2, 5)

    @pytest.fixture
    def rects(self, small_field):
        return exhaustive(small_field.data, self.shapes)

    def test_multiscale(self, small_field, rects):
        out = multiscale_scan(small_field, self.shapes)
        best = max(r[2] for r in rects)
        assert out.stat == pytest.approx(best, rel=1e-9)
        assert out.pvalue == alpha_from_tau(out.tau_hat)

    def test_adaptive(self, small_field, rects):
        fam = ScanFamily.adaptive(16, 2, 2, 5)
        taus = [(tau_hat(centering(fam, s), z), s, t) for s, t, z in rects]
        best_tau, shape, anchor = max(taus, key=lambda x: x[0])
        out = adaptive_scan(small_field, self.shapes)
        assert out.tau_hat == pytest.approx(best_tau, rel=1e-9)
        assert out.best_rect == Rect(anchor, shape)

    def test_adaptive_is_min_pvalue(self, small_field, rects):
        fam = ScanFamily.adaptive(16, 2, 2, 5)
        least = min(pvalue(centering(fam, s), z) for s, t, z in rects)
        out = adaptive_scan(small_field, self.shapes)
        assert out.pvalue == pytest.approx(least, rel=1e-9)

    def test_modified(self, small_field, rects):
        best = max((z - oracle_centering(16, s)) * oracle_centering(16, s) for s, t, z in rects)
        stat, rect = modified_adaptive_stat(small_field, self.shapes)
        assert stat == pytest.approx(best, rel=1e-9)

    def test_oracle(self, small_field, rects):
        best = max(z for s, t, z in rects if s == (3, 4))
        assert oracle_scan(small_field, (3, 4)).stat == pytest.approx(best, rel=1e-9)

    def test_per_shape_records(self, small_field):
        out = adaptive_scan(small_field, self.shapes, per_shape=True)
        assert len(out.per_shape) == 16
        maxima = shape_maxima(small_field, self.shapes)
        for rec in out.per_shape:
            zs = brute_zscores(small_field.data, rec.shape)
            assert rec.max_z == pytest.approx(zs.max(), rel=1e-9)
        assert max(r.tau_hat for r in out.per_shape) == out.tau_hat
        assert maxima.max_z.shape == (4, 4)


@quiet
class TestUniqueMaximizer:
    def test_oracle(self):
        rect = Rect((5, 9), (34, 38))
        out = oracle_scan(pulse(128, rect), (34, 38), alpha=0.05)
        assert out.best_rect == rect
        assert out.stat == pytest.approx(10.0, rel=1e-12)
        assert out.reject

    def test_multiscale(self):
        rect = Rect((3, 7), (4, 6))
        out = multiscale_scan(pulse(32, rect), ShapeRange(2, 8))
        assert out.best_rect == rect
        assert out.stat == pytest.approx(10.0, rel=1e-12)

    def test_adaptive(self):
        rect = Rect((3, 7), (4, 6))
        out = adaptive_scan(pulse(32, rect), ShapeRange(2, 8))
        assert out.best_rect == rect

    def test_all_ones_picks_largest(self):
        out = multiscale_scan(GridField(np.ones((32, 32))), ShapeRange(2, 11))
        assert out.stat == pytest.approx(11.0, rel=1e-12)
        assert out.best_rect == Rect((0, 0), (11, 11))


@quiet
class TestProperties:
    def test_multiscale_covers_oracle(self, small_field):
        multi = multiscale_scan(small_field, ShapeRange(2, 5))
        for shape in [(2, 2), (3, 5), (5, 4)]:
            assert multi.stat >= oracle_scan(small_field, shape).stat

    def test_superset_monotone(self, small_field):
        narrow = ShapeRange(3, 4)
        wide = ShapeRange(2, 5)
        assert multiscale_scan(small_field, wide).stat >= multiscale_scan(small_field, narrow).stat
        # adaptive centering depends on h_lo, so widen only h_hi
        upper = ShapeRange(3, 5)
        assert adaptive_scan(small_field, upper).tau_hat >= adaptive_scan(small_field, narrow).tau_hat

    def test_single_scale_adaptive_equals_multiscale(self, small_field):
        r = ShapeRange(4, 4)
        a = adaptive_scan(small_field, r)
        m = multiscale_scan(small_field, r)
        assert a.pvalue == m.pvalue
        assert a.best_rect == m.best_rect

    def test_single_shape_modified(self, small_field):
        stat, rect = modified_adaptive_stat(small_field, ShapeRange(3, 3))
        v = oracle_centering(16, (3, 3))
        assert stat == pytest.approx((oracle_scan(small_field, (3, 3)).stat - v) * v, rel=1e-12)
        assert v == pytest.approx(math.sqrt(2 * 2 * math.log(16 / 3)), rel=1e-15)

    def test_modified_centering_value(self):
        assert oracle_centering(256, (32, 64)) == pytest.approx(2.6327688477341593, rel=1e-14)

    def test_pointwise_larger_field(self, small_field, rng):
        bigger = GridField(small_field.data + rng.uniform(0, 0.5, small_field.dims))
        r = ShapeRange(2, 5)
        assert oracle_scan(bigger, (3, 3)).stat >= oracle_scan(small_field, (3, 3)).stat
        assert multiscale_scan(bigger, r).stat >= multiscale_scan(small_field, r).stat
        assert adaptive_scan(bigger, r).tau_hat >= adaptive_scan(small_field, r).tau_hat
        assert modified_adaptive_stat(bigger, r)[0] >= modified_adaptive_stat(small_field, r)[0]

    def test_specific_rect_bound(self, small_field):
        out = adaptive_scan(small_field, ShapeRange(2, 5))
        fam = ScanFamily.adaptive(16, 2, 2, 5)
        from scanstat import prefix_sums, zscore

        table = prefix_sums(small_field)
        for rect in [Rect((0, 0), (2, 2)), Rect((4, 7), (5, 3)), Rect((11, 11), (5, 5))]:
            assert out.pvalue <= pvalue(centering(fam, rect.shape), zscore(table, rect)) + 1e-15

    def test_axis_permutation(self):
        y = white_noise((32, 32), 4)
        a = oracle_scan(y, (3, 7))
        b = oracle_scan(GridField(y.data.T), (7, 3))
        # summation order differs, so equality holds up to rounding
        assert a.stat == pytest.approx(b.stat, rel=1e-12)
        assert b.best_rect == Rect(a.best_rect.anchor[::-1], (7, 3))

    def test_deterministic(self, small_field):
        r = ShapeRange(2, 5)
        assert adaptive_scan(small_field, r).best_rect == adaptive_scan(small_field, r).best_rect

    def test_tie_breaks_to_smallest(self):
        # every 2x2 window of a constant field ties; the first anchor wins
        out = oracle_scan(GridField(np.full((8, 8), 2.0)), (2, 2))
        assert out.best_rect.anchor == (0, 0)

    def test_3d(self, rng):
        data = rng.standard_normal((8, 8, 8))
        out = multiscale_scan(GridField(data), ShapeRange(2, 2))
        assert out.stat == pytest.approx(brute_zscores(data, (2, 2, 2)).max(), rel=1e-9)


class TestErrors:
    def test_regime_warning(self, small_field):
        with pytest.warns(RegimeWarning):
            multiscale_scan(small_field, ShapeRange(2, 5))

    def test_no_warning_in_regime(self):
        y = white_noise((64, 64), 1)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            multiscale_scan(y, ShapeRange(5, 6))

    def test_upper_scale_too_large(self, small_field):
        with pytest.raises(ValueError):
            adaptive_scan(small_field, ShapeRange(2, 6))

    def test_oracle_shape_too_large(self, small_field):
        with pytest.raises(ValueError):
            oracle_scan(small_field, (17, 2))

    def test_non_square(self):
        with pytest.raises(ValueError):
            multiscale_scan(GridField(np.zeros((16, 8))), ShapeRange(2, 3))

    def test_bad_range(self):
        with pytest.raises(ValueError):
            ShapeRange(4, 3)


@quiet
def test_outcome_dict(small_field):
    out = adaptive_scan(small_field, ShapeRange(2, 5), alpha=0.05, per_shape=True)
    d = out.to_dict()
    assert set(d) >= {"kind", "stat", "tau_hat", "pvalue", "best_rect", "reject", "alpha", "per_shape"}
    assert d["reject"] == (out.pvalue <= 0.05)
    assert "per_shape" not in out.to_dict(include_per_shape=False)
    mod = modified_outcome(small_field, ShapeRange(2, 5)).to_dict()
    assert mod["pvalue"] is None and mod["reject"] is None
