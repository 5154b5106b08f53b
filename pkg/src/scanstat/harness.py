"""Monte Carlo experiments: size, power, ROC curves, P-value QQ data, timings.

Replicate ``r`` of an experiment with master seed ``s`` draws its noise from
``SeedSequence(s, spawn_key=(stream, r))`` where ``stream`` separates null
noise, alternative noise and the signal anchor.  The scanner does not enter
the key, so every scanner sees the same field within a replicate, and a
replicate's field does not depend on how many replicates run or in what order.
"""
from __future__ import annotations

import csv
import math
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .epsscan import epsilon_adaptive_scan
from .field import GridField, Rect, SignalSpec, inject_signal, white_noise
from .scanners import (
    RegimeWarning,
    ShapeRange,
    adaptive_from,
    modified_from,
    multiscale_from,
    oracle_scan,
    shape_maxima,
)
from .thresholds import ScanFamily, max_scale

NULL_STREAM, ALT_STREAM, ANCHOR_STREAM = 0, 1, 2
CLOSED_FORM = ("oracle", "multiscale", "adaptive")


def replicate_seed(master: int, replicate: int, stream: int) -> int:
    seq = np.random.SeedSequence(int(master) % 2**64, spawn_key=(stream, replicate))
    return int(seq.generate_state(1, np.uint64)[0])


def parse_scanner(name: str) -> tuple[str, Optional[float]]:
    """``"adaptive"`` -> ``("adaptive", None)``; ``"epsilon:1.5"`` -> ``("epsilon", 1.5)``."""
    name = name.strip()
    for sep in (":", "="):
        if sep in name:
            kind, value = name.split(sep, 1)
            if kind in ("eps", "epsilon"):
                return "epsilon", float(value)
            break
    if name.startswith("epsilon(") and name.endswith(")"):
        return "epsilon", float(name[len("epsilon(") : -1])
    aliases = {"multi": "multiscale", "mod": "modified"}
    name = aliases.get(name, name)
    if name not in CLOSED_FORM + ("modified",):
        raise ValueError(f"unknown scanner {name!r}")
    return name, None


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    d: int = 2
    h_lo: int = 6
    h_hi: Optional[int] = None
    mu: float = 0.0
    signal_shape: Optional[tuple[int, ...]] = None
    reps: int = 400
    seed: int = 0
    scanners: tuple[str, ...] = ("multiscale", "adaptive")
    alpha_grid: tuple[float, ...] = (0.05,)
    threads: int = 1
    eps_in_range_only: bool = False

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.h_hi is None:
            object.__setattr__(self, "h_hi", max_scale(self.n))
        if self.signal_shape is not None:
            shape = tuple(int(h) for h in self.signal_shape)
            if len(shape) != self.d or any(not 1 <= h <= self.n for h in shape):
                raise ValueError(f"signal shape {shape} does not fit [{self.n}]^{self.d}")
            object.__setattr__(self, "signal_shape", shape)
        parsed = [parse_scanner(s) for s in self.scanners]
        if any(kind == "oracle" for kind, _ in parsed) and self.signal_shape is None:
            raise ValueError("the oracle scanner needs signal_shape")
        if any(kind in ("multiscale", "adaptive", "modified", "epsilon") for kind, _ in parsed):
            ScanFamily.multiscale(self.n, self.d, self.h_lo, self.h_hi)
        if any(not 0 < a <= 1 for a in self.alpha_grid):
            raise ValueError("levels must lie in (0, 1]")

    @property
    def shapes(self) -> ShapeRange:
        return ShapeRange(self.h_lo, self.h_hi)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["signal_shape"] = list(self.signal_shape) if self.signal_shape else None
        out["scanners"] = list(self.scanners)
        out["alpha_grid"] = list(self.alpha_grid)
        return out


@dataclass
class Samples:
    """Per-replicate scores (``tau_hat``, or the raw statistic for ``modified``) and P-values."""

    scores: np.ndarray
    pvalues: np.ndarray


@dataclass
class MCResult:
    config: ExperimentConfig
    null: dict[str, Samples] = dc_field(default_factory=dict)
    alt: dict[str, Samples] = dc_field(default_factory=dict)
    anchors: Optional[np.ndarray] = None

    def size(self, scanner: str, alpha: float) -> float:
        return float(np.mean(self.null[scanner].pvalues <= alpha))

    def power(self, scanner: str, alpha: float) -> float:
        return float(np.mean(self.alt[scanner].pvalues <= alpha))

    def roc(self, scanner: str) -> list[tuple[float, float, float]]:
        return roc_curve(self.null[scanner].scores, self.alt[scanner].scores)

    def auc(self, scanner: str) -> float:
        return auc(self.null[scanner].scores, self.alt[scanner].scores)

    def has_pvalues(self, scanner: str) -> bool:
        samples = self.null.get(scanner) or self.alt.get(scanner)
        return samples is not None and not np.isnan(samples.pvalues).all()


# -- replicates --------------------------------------------------------------


def signal_anchor(config: ExperimentConfig, replicate: int) -> tuple[int, ...]:
    rng = np.random.default_rng(replicate_seed(config.seed, replicate, ANCHOR_STREAM))
    return tuple(int(rng.integers(0, config.n - h + 1)) for h in config.signal_shape)


def replicate_field(config: ExperimentConfig, replicate: int, alternative: bool) -> GridField:
    dims = (config.n,) * config.d
    stream = ALT_STREAM if alternative else NULL_STREAM
    noise = white_noise(dims, replicate_seed(config.seed, replicate, stream))
    if not alternative:
        return noise
    rect = Rect(signal_anchor(config, replicate), config.signal_shape)
    return inject_signal(noise, SignalSpec(rect, config.mu))


def score_field(field: GridField, config: ExperimentConfig) -> dict[str, tuple[float, float]]:
    """``{scanner: (score, pvalue)}`` for every configured scanner."""
    out = {}
    maxima = None
    for name in config.scanners:
        kind, eps = parse_scanner(name)
        if kind in ("multiscale", "adaptive", "modified") and maxima is None:
            maxima = shape_maxima(field, config.shapes)
        if kind == "oracle":
            res = oracle_scan(field, config.signal_shape)
        elif kind == "multiscale":
            res = multiscale_from(maxima)
        elif kind == "adaptive":
            res = adaptive_from(maxima)
        elif kind == "modified":
            stat, _ = modified_from(maxima)
            out[name] = (stat, math.nan)
            continue
        else:
            res = epsilon_adaptive_scan(field, config.shapes, eps, in_range_only=config.eps_in_range_only)
        out[name] = (res.tau_hat, res.pvalue)
    return out


def _replicate_job(args) -> dict[str, tuple[float, float]]:
    config, replicate, alternative = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RegimeWarning)
        return score_field(replicate_field(config, replicate, alternative), config)


def _run_map(fn: Callable, jobs: list, threads: int) -> list:
    if threads <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def _collect(config: ExperimentConfig, alternative: bool) -> dict[str, Samples]:
    jobs = [(config, r, alternative) for r in range(config.reps)]
    results = _run_map(_replicate_job, jobs, config.threads)
    return {
        name: Samples(
            np.array([res[name][0] for res in results]),
            np.array([res[name][1] for res in results]),
        )
        for name in config.scanners
    }


def _check_regime(config: ExperimentConfig) -> None:
    if any(parse_scanner(s)[0] != "oracle" for s in config.scanners):
        config.shapes.check_regime(config.n)


def run_null(config: ExperimentConfig) -> MCResult:
    _check_regime(config)
    return MCResult(config, null=_collect(config, False))


def run_power(config: ExperimentConfig) -> MCResult:
    if config.signal_shape is None:
        raise ValueError("power runs need signal_shape")
    if config.mu < 0:
        raise ValueError("signal size must be nonnegative")
    _check_regime(config)
    anchors = np.array([signal_anchor(config, r) for r in range(config.reps)])
    return MCResult(config, alt=_collect(config, True), anchors=anchors)


def run_experiment(config: ExperimentConfig) -> MCResult:
    null = run_null(config)
    alt = run_power(config)
    return MCResult(config, null=null.null, alt=alt.alt, anchors=alt.anchors)


# -- summaries ----------------------------------------------------------------


def roc_curve(null_scores: Sequence[float], alt_scores: Sequence[float]) -> list[tuple[float, float, float]]:
    """``(threshold, FPR, TPR)`` rows, rejecting when ``score >= threshold``.

    Thresholds sweep the pooled scores from high to low; the first row is
    ``(inf, 0, 0)`` and the last is ``(min score, 1, 1)``.
    """
    null = np.sort(np.asarray(null_scores, dtype=float))
    alt = np.sort(np.asarray(alt_scores, dtype=float))
    if null.size == 0 or alt.size == 0:
        raise ValueError("ROC needs nonempty null and alternative samples")
    thresholds = np.unique(np.concatenate([null, alt]))[::-1]
    fpr = 1.0 - np.searchsorted(null, thresholds, side="left") / null.size
    tpr = 1.0 - np.searchsorted(alt, thresholds, side="left") / alt.size
    rows = [(math.inf, 0.0, 0.0)]
    rows += [(float(c), float(f), float(t)) for c, f, t in zip(thresholds, fpr, tpr)]
    return rows


def auc(null_scores: Sequence[float], alt_scores: Sequence[float]) -> float:
    """Area under the ROC curve, ties counted one half (Mann-Whitney with midranks)."""
    null = np.asarray(null_scores, dtype=float)
    alt = np.asarray(alt_scores, dtype=float)
    if null.size == 0 or alt.size == 0:
        raise ValueError("AUC needs nonempty null and alternative samples")
    ranks = rankdata(np.concatenate([alt, null]))
    u = ranks[: alt.size].sum() - alt.size * (alt.size + 1) / 2
    return float(u / (alt.size * null.size))


def roc_area(rows: Sequence[tuple[float, float, float]]) -> float:
    """Trapezoidal area under ``(threshold, FPR, TPR)`` rows."""
    fpr = np.array([r[1] for r in rows])
    tpr = np.array([r[2] for r in rows])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def qq_pvalues(pvalues: Sequence[float]) -> list[tuple[float, float]]:
    """Uniform plotting positions ``(i - 0.5) / m`` against sorted P-values."""
    p = np.sort(np.asarray(pvalues, dtype=float))
    if p.size == 0:
        raise ValueError("QQ data needs at least one P-value")
    u = (np.arange(1, p.size + 1) - 0.5) / p.size
    return list(zip(u.tolist(), p.tolist()))


def qq_band(u: float, m: int, nsigma: float = 3.0) -> float:
    """``nsigma`` binomial standard deviations of an empirical CDF at ``u``."""
    return nsigma * math.sqrt(u * (1 - u) / m)


def dkw_band(m: int, confidence: float = 0.99) -> float:
    """Dvoretzky-Kiefer-Wolfowitz uniform band half-width."""
    return math.sqrt(math.log(2 / (1 - confidence)) / (2 * m))


def qq_conservative_fraction(points: Sequence[tuple[float, float]], nsigma: float = 3.0) -> float:
    """Fraction of QQ points with ``p >= u - band(u)``."""
    m = len(points)
    ok = sum(p >= u - qq_band(u, m, nsigma) for u, p in points)
    return ok / m


# -- calibration ----------------------------------------------------------------


def empirical_threshold(null_scores: Sequence[float], alpha: float) -> float:
    """Order statistic ``k = ceil((1 - alpha)(m + 1))`` of the null scores.

    Rejecting when a fresh score is strictly above it has size at most ``alpha``
    under exchangeability.
    """
    scores = np.sort(np.asarray(null_scores, dtype=float))
    m = scores.size
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = math.ceil((1 - alpha) * (m + 1))
    if m < 1 / alpha or k > m:
        raise ValueError(f"{m} null draws are too few to calibrate at level {alpha}")
    return float(scores[k - 1])


def calibrate_mc(scanner: str, config: ExperimentConfig, target_alpha: float) -> float:
    """Simulated critical value for ``scanner``'s score at ``target_alpha``."""
    if config.reps < 1 / target_alpha:
        raise ValueError(f"need at least {math.ceil(1 / target_alpha)} reps for level {target_alpha}")
    cfg = replace(config, scanners=(scanner,))
    return empirical_threshold(run_null(cfg).null[scanner].scores, target_alpha)


def permutation_pvalue(
    field: GridField, statistic: Callable[[GridField], float], n_perm: int, seed: int
) -> float:
    """``(1 + #{perm >= observed}) / (1 + n_perm)`` over random permutations of the cells."""
    observed = statistic(field)
    rng = np.random.default_rng(seed)
    flat = field.flat
    hits = 0
    for _ in range(n_perm):
        perm = GridField(rng.permutation(flat).reshape(field.dims))
        hits += statistic(perm) >= observed
    return (1 + hits) / (1 + n_perm)


# -- timing ------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingRecord:
    eps: float
    median_s: float
    p5_s: float
    p95_s: float
    min_s: float
    max_s: float
    op_count: int


def bench_epsilon(config: ExperimentConfig, eps_list: Iterable[float]) -> list[TimingRecord]:
    """Wall time of the epsilon scan on ``config.reps`` null fields per ``eps``."""
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("need at least one eps")
    for eps in eps_list:
        if eps <= 0 or eps * eps * config.h_lo < 8 * config.d:
            raise ValueError(f"eps = {eps} violates eps^2 * h_lo >= 8d for h_lo = {config.h_lo}")
    fields = [replicate_field(config, r, False) for r in range(config.reps)]
    records = []
    for eps in eps_list:
        times, ops = [], None
        for field in fields:
            start = time.perf_counter()
            out = epsilon_adaptive_scan(field, config.shapes, eps)
            times.append(time.perf_counter() - start)
            ops = out.op_count
        t = np.array(times)
        records.append(
            TimingRecord(
                eps,
                float(np.median(t)),
                float(np.percentile(t, 5)),
                float(np.percentile(t, 95)),
                float(t.min()),
                float(t.max()),
                int(ops),
            )
        )
    return records


# -- output files --------------------------------------------------------------------


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def write_size_csv(result: MCResult, path: Path) -> None:
    rows = [
        (name, alpha, result.size(name, alpha), result.config.reps)
        for name in result.config.scanners
        if name in result.null and result.has_pvalues(name)
        for alpha in result.config.alpha_grid
    ]
    _write_rows(path, ("scanner", "alpha", "size", "reps"), rows)


def write_power_csv(result: MCResult, path: Path) -> None:
    rows = [
        (name, alpha, result.power(name, alpha), result.config.reps)
        for name in result.config.scanners
        if name in result.alt and result.has_pvalues(name)
        for alpha in result.config.alpha_grid
    ]
    _write_rows(path, ("scanner", "alpha", "power", "reps"), rows)


def write_roc_csv(result: MCResult, path: Path) -> None:
    rows = [
        (name, tau, fpr, tpr)
        for name in result.config.scanners
        for tau, fpr, tpr in result.roc(name)
    ]
    _write_rows(path, ("scanner", "tau", "fpr", "tpr"), rows)


def write_qq_csv(result: MCResult, path: Path) -> None:
    rows = [
        (name, u, p)
        for name in result.config.scanners
        if name in result.null and result.has_pvalues(name)
        for u, p in qq_pvalues(result.null[name].pvalues)
    ]
    _write_rows(path, ("scanner", "u_quantile", "p_quantile"), rows)


def write_bench_csv(records: Sequence[TimingRecord], path: Path) -> None:
    rows = [(r.eps, r.median_s, r.p5_s, r.p95_s, r.op_count) for r in records]
    _write_rows(path, ("eps", "median_s", "p5_s", "p95_s", "op_count"), rows)


def run_metadata(argv: Optional[Sequence[str]] = None) -> dict:
    return {
        "package": "scanstat",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "argv": list(argv if argv is not None else sys.argv),
        "pid": os.getpid(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }


def summary(result: MCResult) -> dict:
    cfg = result.config
    out = {"config": cfg.to_dict(), "scanners": {}}
    for name in cfg.scanners:
        entry = {}
        if name in result.null and result.has_pvalues(name):
            entry["size"] = {str(a): result.size(name, a) for a in cfg.alpha_grid}
        if name in result.alt and result.has_pvalues(name):
            entry["power"] = {str(a): result.power(name, a) for a in cfg.alpha_grid}
        if name in result.null and name in result.alt:
            entry["auc"] = result.auc(name)
        out["scanners"][name] = entry
    return out
