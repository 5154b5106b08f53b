import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from scanstat import GridField, prefix_sums
from scanstat.harness import (
    ExperimentConfig,
    auc,
    bench_epsilon,
    calibrate_mc,
    dkw_band,
    empirical_threshold,
    parse_scanner,
    permutation_pvalue,
    qq_conservative_fraction,
    qq_pvalues,
    replicate_field,
    replicate_seed,
    roc_area,
    roc_curve,
    run_experiment,
    run_null,
    run_power,
    signal_anchor,
    summary,
    write_bench_csv,
    write_power_csv,
    write_qq_csv,
    write_roc_csv,
    write_size_csv,
)

SMALL = dict(n=32, h_lo=4, h_hi=11, signal_shape=(6, 6))


def binomial_sd(p, m):
    return math.sqrt(p * (1 - p) / m)


class TestSeeds:
    def test_deterministic_and_distinct(self):
        assert replicate_seed(7, 3, 0) == replicate_seed(7, 3, 0)
        seeds = {replicate_seed(7, r, s) for r in range(50) for s in range(3)}
        assert len(seeds) == 150

    def test_scanner_choice_leaves_noise_alone(self):
        a = ExperimentConfig(scanners=("oracle",), seed=5, **SMALL)
        b = replace(a, scanners=("adaptive", "multiscale"))
        for r in range(3):
            for alt in (False, True):
                assert np.array_equal(replicate_field(a, r, alt).data, replicate_field(b, r, alt).data)

    def test_anchor_uniform_range(self):
        cfg = ExperimentConfig(scanners=("oracle",), seed=1, mu=1.0, **SMALL)
        anchors = np.array([signal_anchor(cfg, r) for r in range(500)])
        assert anchors.min() == 0 and anchors.max() == 32 - 6


class TestConfig:
    def test_default_upper_scale(self):
        assert ExperimentConfig(n=256).h_hi == 94

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n=32, reps=0),
            dict(n=32, scanners=("oracle",)),
            dict(n=32, h_hi=20),
            dict(n=32, alpha_grid=(0.0,)),
            dict(n=32, signal_shape=(40, 4)),
            dict(n=32, scanners=("bogus",)),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig(**kwargs)

    @pytest.mark.parametrize(
        "text, parsed",
        [
            ("adaptive", ("adaptive", None)),
            ("multi", ("multiscale", None)),
            ("mod", ("modified", None)),
            ("epsilon:1.5", ("epsilon", 1.5)),
            ("eps=2", ("epsilon", 2.0)),
            ("epsilon(1.0)", ("epsilon", 1.0)),
        ],
    )
    def test_parse_scanner(self, text, parsed):
        assert parse_scanner(text) == parsed


@pytest.mark.filterwarnings("ignore::scanstat.scanners.RegimeWarning")
class TestRuns:
    def test_reproducible(self):
        cfg = ExperimentConfig(scanners=("multiscale", "adaptive", "modified"), reps=6, seed=3, **SMALL)
        a, b = run_null(cfg), run_null(cfg)
        for name in cfg.scanners:
            assert a.null[name].scores.tobytes() == b.null[name].scores.tobytes()
            assert a.null[name].pvalues.tobytes() == b.null[name].pvalues.tobytes()

    def test_doubling_reps_keeps_prefix(self):
        cfg = ExperimentConfig(scanners=("adaptive",), reps=5, seed=11, **SMALL)
        short = run_null(cfg).null["adaptive"].pvalues
        long = run_null(replace(cfg, reps=10)).null["adaptive"].pvalues
        assert np.array_equal(long[:5], short)

    def test_threads_agree(self):
        cfg = ExperimentConfig(scanners=("oracle", "adaptive"), reps=4, seed=2, mu=3.0, **SMALL)
        serial = run_power(cfg)
        parallel = run_power(replace(cfg, threads=2))
        for name in cfg.scanners:
            assert np.array_equal(serial.alt[name].pvalues, parallel.alt[name].pvalues)

    def test_size_at_one(self):
        cfg = ExperimentConfig(scanners=("adaptive",), reps=5, alpha_grid=(1.0,), **SMALL)
        assert run_null(cfg).size("adaptive", 1.0) == 1.0

    def test_modified_has_no_pvalues(self):
        cfg = ExperimentConfig(scanners=("modified",), reps=3, **SMALL)
        res = run_null(cfg)
        assert not res.has_pvalues("modified")
        assert np.isnan(res.null["modified"].pvalues).all()

    def test_epsilon_scanner(self):
        cfg = ExperimentConfig(n=64, h_lo=16, h_hi=23, scanners=("epsilon:1.0",), reps=2)
        res = run_null(cfg)
        assert ((res.null["epsilon:1.0"].pvalues > 0) & (res.null["epsilon:1.0"].pvalues <= 1)).all()

    def test_power_needs_shape(self):
        with pytest.raises(ValueError):
            run_power(ExperimentConfig(n=32, h_lo=4, h_hi=11, scanners=("adaptive",), reps=2))

    def test_zero_signal_power_matches_size(self):
        m, alpha = 400, 0.5
        cfg = ExperimentConfig(
            scanners=("oracle",), reps=m, seed=17, mu=0.0, alpha_grid=(alpha,), **SMALL
        )
        res = run_experiment(cfg)
        p1, p2 = res.size("oracle", alpha), res.power("oracle", alpha)
        pooled = (p1 + p2) / 2
        z = (p2 - p1) / math.sqrt(pooled * (1 - pooled) * 2 / m)
        assert abs(z) < 3

    def test_power_monotone_in_mu(self):
        m = 200
        powers = []
        for mu in (2.0, 4.0, 6.0):
            cfg = ExperimentConfig(scanners=("oracle",), reps=m, seed=23, mu=mu, **SMALL)
            powers.append(run_power(cfg).power("oracle", 0.05))
        for lo, hi in zip(powers, powers[1:]):
            slack = 2 * math.sqrt(binomial_sd(lo, m) ** 2 + binomial_sd(hi, m) ** 2)
            assert hi >= lo - slack
        assert powers[-1] > powers[0]

    def test_summary_and_files(self, tmp_path):
        cfg = ExperimentConfig(scanners=("oracle", "adaptive", "modified"), reps=5, mu=4.0, **SMALL)
        res = run_experiment(cfg)
        write_size_csv(res, tmp_path / "size.csv")
        write_power_csv(res, tmp_path / "power.csv")
        write_roc_csv(res, tmp_path / "roc.csv")
        write_qq_csv(res, tmp_path / "qq.csv")
        rows = lambda name: list(csv.reader(open(tmp_path / name)))
        assert rows("size.csv")[0] == ["scanner", "alpha", "size", "reps"]
        assert len(rows("size.csv")) == 3  # modified has no P-values
        assert rows("power.csv")[0] == ["scanner", "alpha", "power", "reps"]
        assert rows("roc.csv")[0] == ["scanner", "tau", "fpr", "tpr"]
        assert {r[0] for r in rows("roc.csv")[1:]} == {"oracle", "adaptive", "modified"}
        assert rows("qq.csv")[0] == ["scanner", "u_quantile", "p_quantile"]
        assert len(rows("qq.csv")) == 1 + 2 * 5
        info = json.loads(json.dumps(summary(res)))
        assert set(info["scanners"]["modified"]) == {"auc"}
        assert 0 <= info["scanners"]["adaptive"]["auc"] <= 1


class TestRoc:
    def test_identical_samples(self, rng):
        x = rng.standard_normal(300)
        assert auc(x, x) == 0.5
        assert roc_area(roc_curve(x, x)) == pytest.approx(0.5, abs=1e-12)

    def test_separated(self, rng):
        x = rng.standard_normal(300)
        assert auc(x, x + 10) == 1.0
        assert roc_area(roc_curve(x, x + 10)) == 1.0

    def test_area_matches_midrank(self, rng):
        null = np.round(rng.standard_normal(200), 1)
        alt = np.round(rng.standard_normal(150) + 0.7, 1)
        assert roc_area(roc_curve(null, alt)) == pytest.approx(auc(null, alt), abs=1e-12)

    def test_monotone(self, rng):
        rows = roc_curve(rng.standard_normal(50), rng.standard_normal(60) + 1)
        fpr = [r[1] for r in rows]
        tpr = [r[2] for r in rows]
        assert fpr == sorted(fpr) and tpr == sorted(tpr)
        assert rows[0][1:] == (0.0, 0.0) and rows[-1][1:] == (1.0, 1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            roc_curve([], [1.0])
        with pytest.raises(ValueError):
            auc([1.0], [])


class TestQQ:
    def test_uniform_grid_on_diagonal(self):
        m = 200
        u = (np.arange(1, m + 1) - 0.5) / m
        pts = qq_pvalues(u[::-1])
        assert all(a == pytest.approx(b, abs=1e-15) for a, b in pts)

    def test_all_ones(self):
        pts = qq_pvalues(np.ones(50))
        assert all(p == 1.0 for _, p in pts)
        assert qq_conservative_fraction(pts) == 1.0

    def test_anticonservative_detected(self):
        pts = qq_pvalues(np.full(100, 1e-3))
        assert qq_conservative_fraction(pts) < 0.1

    def test_empty(self):
        with pytest.raises(ValueError):
            qq_pvalues([])

    def test_dkw(self):
        assert dkw_band(400) == pytest.approx(math.sqrt(math.log(200) / 800), rel=1e-15)


class TestCalibration:
    def test_median(self):
        x = np.arange(-50, 51, dtype=float)
        assert empirical_threshold(x, 0.5) == pytest.approx(0.0, abs=1.0)

    def test_too_few(self):
        with pytest.raises(ValueError):
            empirical_threshold(np.arange(10.0), 0.05)

    def test_recalibrated_size(self):
        cfg = ExperimentConfig(scanners=("oracle",), reps=400, seed=101, **SMALL)
        thr = calibrate_mc("oracle", cfg, 0.05)
        fresh = run_null(replace(cfg, seed=202)).null["oracle"].scores
        size = float(np.mean(fresh > thr))
        assert abs(size - 0.05) <= 3 * binomial_sd(0.05, 400)

    def test_calibrate_needs_reps(self):
        cfg = ExperimentConfig(scanners=("oracle",), reps=10, **SMALL)
        with pytest.raises(ValueError):
            calibrate_mc("oracle", cfg, 0.05)

    def test_permutation_super_uniform(self):
        def stat(f):
            cum = prefix_sums(f).cum
            return float((cum[3:, 3:] - cum[:-3, 3:] - cum[3:, :-3] + cum[:-3, :-3]).max())

        m = 60
        ps = np.array(
            [
                permutation_pvalue(GridField(np.random.default_rng(s).standard_normal((8, 8))), stat, 49, s)
                for s in range(m)
            ]
        )
        assert ((ps > 0) & (ps <= 1)).all()
        band = dkw_band(m)
        for u in (0.1, 0.25, 0.5):
            assert np.mean(ps <= u) <= u + band


class TestBench:
    def test_records(self, tmp_path):
        cfg = ExperimentConfig(n=64, h_lo=16, h_hi=23, scanners=("adaptive",), reps=2)
        recs = bench_epsilon(cfg, [2.0, 1.5, 1.0])
        assert [r.eps for r in recs] == [2.0, 1.5, 1.0]
        ops = [r.op_count for r in recs]
        assert ops[0] < ops[1] < ops[2]
        assert all(r.min_s <= r.median_s <= r.max_s for r in recs)
        write_bench_csv(recs, tmp_path / "bench.csv")
        rows = list(csv.reader(open(tmp_path / "bench.csv")))
        assert rows[0] == ["eps", "median_s", "p5_s", "p95_s", "op_count"]
        assert len(rows) == 4

    def test_illegal_eps(self):
        cfg = ExperimentConfig(n=64, h_lo=16, h_hi=23, scanners=("adaptive",), reps=1)
        with pytest.raises(ValueError):
            bench_epsilon(cfg, [0.5])
