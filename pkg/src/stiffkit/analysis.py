"""Rank correlations and the ensemble experiments built on them.

Two experiments run on trained networks: TNS against test accuracy across
an ensemble, and per-block NSI against mean attention inside one model.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .errors import ConstantInputError, EnsembleMemberError, NumericError, ValidationError
from .metrics import nsi_profile, tns
from .network import TrainHyper, extract_trajectories, forward_batch, train

HISTOGRAM_BINS = np.linspace(-1.0, 1.0, 11)


def _pair(xs, ys):
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    y = np.asarray(ys, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValidationError("need at least two observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("observations must be finite")
    return x, y


def kendall_tau(xs, ys, variant="a"):
    """Kendall rank correlation.

    ``variant="a"`` counts tied pairs as neither concordant nor discordant and
    keeps the full ``n(n-1)/2`` denominator. ``variant="b"`` uses the
    tie-corrected denominator and fails on a constant input.
    """
    x, y = _pair(xs, ys)
    conc, disc, tx, ty, tb = kernels.kendall_counts(x, y)
    n0 = x.size * (x.size - 1) // 2
    if variant == "a":
        return (conc - disc) / n0
    if variant == "b":
        nx, ny = n0 - tx - tb, n0 - ty - tb
        if nx == 0 or ny == 0:
            raise ConstantInputError("constant input")
        return (conc - disc) / np.sqrt(float(nx) * float(ny))
    raise ValidationError(f"unknown tau variant {variant!r}")


def spearman_rho(xs, ys):
    """Pearson correlation of average ranks.

    Without ties this is evaluated as ``1 - 6 sum d^2 / (n (n^2 - 1))`` from
    integer ranks, which is exact up to one final rounding.
    """
    x, y = _pair(xs, ys)
    rx, ry = rankdata(x), rankdata(y)
    n = x.size
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise ConstantInputError("constant input")
    if len(np.unique(x)) == n and len(np.unique(y)) == n:
        d = rx.astype(np.int64) - ry.astype(np.int64)
        return 1.0 - 6.0 * int(np.sum(d * d)) / (n * (n * n - 1))
    cx, cy = rx - rx.mean(), ry - ry.mean()
    rho = float(np.sum(cx * cy) / np.sqrt(np.sum(cx * cx) * np.sum(cy * cy)))
    return min(1.0, max(-1.0, rho))


@dataclass(frozen=True)
class CorrelationReport:
    kendall_tau: float
    spearman_rho: float
    n: int
    concordant: int
    discordant: int

    def to_dict(self):
        return {"kendall": self.kendall_tau, "spearman": self.spearman_rho, "n": self.n}


def correlate(xs, ys, variant="a"):
    x, y = _pair(xs, ys)
    conc, disc, _, _, _ = kernels.kendall_counts(x, y)
    return CorrelationReport(kendall_tau(x, y, variant), spearman_rho(x, y), int(x.size), conc, disc)


@dataclass(frozen=True)
class ExperimentRecord:
    model_id: int
    adaptor: str
    seed: int
    test_accuracy: float
    tns_value: float
    dataset: str

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValidationError(f"accuracy {self.test_accuracy} outside [0, 1]")
        if not self.tns_value >= 0.0:
            raise ValidationError(f"tns_value must be >= 0, got {self.tns_value}")


def correlate_records(records, unique=False):
    """Correlate TNS with accuracy over ``records`` sorted by model_id.

    ``unique`` drops records whose ``(accuracy, tns)`` pair repeats an
    earlier one.
    """
    recs = sorted(records, key=lambda r: r.model_id)
    if unique:
        seen, kept = set(), []
        for r in recs:
            key = (r.test_accuracy, r.tns_value)
            if key not in seen:
                seen.add(key)
                kept.append(r)
        recs = kept
    return correlate([r.tns_value for r in recs], [r.test_accuracy for r in recs])


def model_tns(model, inputs, grid=(10.0, 10.0, 64), nsi_mode="recorded_step"):
    trajs = extract_trajectories(model, inputs, nsi_mode)
    return tns([nsi_profile(t, nsi_mode) for t in trajs], grid).value, trajs


def _check_ensemble(configs):
    if len(configs) < 12:
        raise ValidationError(f"ensemble needs >= 12 members, got {len(configs)}")
    seeds = {}
    for c in configs:
        seeds.setdefault(c.adaptor, set()).add(c.seed)
    if len(seeds) < 3:
        raise ValidationError(f"ensemble needs >= 3 adaptor kinds, got {sorted(seeds)}")
    thin = [k for k, s in seeds.items() if len(s) < 2]
    if thin:
        raise ValidationError(f"adaptor kinds with fewer than 2 seeds: {thin}")


def tns_accuracy_experiment(
    configs,
    dataset,
    hyper=TrainHyper(),
    tns_grid=(10.0, 10.0, 64),
    nsi_mode="recorded_step",
    threads=1,
    strict=True,
    return_trajectories=False,
):
    """Train every config, measure test accuracy and test-set TNS, correlate.

    Model ids are the positions in ``configs``. With ``strict`` the ensemble
    must span at least 12 members, 3 adaptor kinds and 2 seeds per kind.
    """
    configs = list(configs)
    if strict:
        _check_ensemble(configs)

    def run(i):
        try:
            model, metrics = train(configs[i], dataset, hyper)
            value, trajs = model_tns(model, dataset.X_test, tns_grid, nsi_mode)
        except NumericError as exc:
            raise EnsembleMemberError(i, exc) from exc
        rec = ExperimentRecord(i, configs[i].adaptor, configs[i].seed, metrics["test_acc"], value, dataset.name)
        return rec, trajs

    threads = max(1, int(threads))
    if threads == 1:
        results = [run(i) for i in range(len(configs))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(configs))))
    records = sorted((r for r, _ in results), key=lambda r: r.model_id)
    report = correlate_records(records)
    if return_trajectories:
        return records, report, {r.model_id: t for r, t in results}
    return records, report


def select_proxy_gt(records, trajectories_by_model):
    """Trajectories of the most accurate model; ties go to the lower model_id."""
    if not records:
        raise ValidationError("no records")
    best = min(records, key=lambda r: (-r.test_accuracy, r.model_id))
    return trajectories_by_model[best.model_id]


@dataclass(frozen=True)
class BlockCorrelation:
    block: int
    tau: float | None
    rho: float | None
    status: str  # "ok" or "undefined"

    def to_dict(self):
        return {"block": self.block, "tau": self.tau, "rho": self.rho, "status": self.status}


@dataclass(frozen=True)
class AttentionCorrelation:
    blocks: tuple
    histogram_edges: tuple
    histogram_counts: tuple

    def to_dict(self):
        return {
            "blocks": [b.to_dict() for b in self.blocks],
            "histogram": {"edges": list(self.histogram_edges), "counts": list(self.histogram_counts)},
        }


def block_correlations(nsi_by_block, attention_by_block):
    """Per-block correlation of NSI against scalar attention across inputs.

    Blocks where either series is constant are reported as ``undefined``.
    The histogram pools the defined per-block tau values.
    """
    if len(nsi_by_block) != len(attention_by_block):
        raise ValidationError("need one attention series per NSI series")
    out = []
    for b, (v, a) in enumerate(zip(nsi_by_block, attention_by_block)):
        v = np.asarray(v, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if v.size < 2 or np.ptp(v) == 0 or np.ptp(a) == 0:
            out.append(BlockCorrelation(b, None, None, "undefined"))
            continue
        r = correlate(v, a)
        out.append(BlockCorrelation(b, r.kendall_tau, r.spearman_rho, "ok"))
    taus = [c.tau for c in out if c.status == "ok"]
    counts, _ = np.histogram(taus, bins=HISTOGRAM_BINS)
    return AttentionCorrelation(tuple(out), tuple(float(e) for e in HISTOGRAM_BINS), tuple(int(c) for c in counts))


def block_nsi_and_attention(model, inputs):
    """Unit-step NSI and coordinate-mean attention, one ``(B,)`` array per block."""
    fb = forward_batch(model, inputs, "eval")
    nsis, atts = [], []
    block = 0
    for t, tr in enumerate(fb.transitions):
        if isinstance(tr, str):
            continue
        x, y = fb.positions[t], fb.positions[t + 1]
        nsis.append(np.linalg.norm(y - x, axis=1) / np.linalg.norm(x, axis=1))
        att = fb.attention[block]
        atts.append(np.ones(x.shape[0]) if att is None else att.mean(axis=1))
        block += 1
    return nsis, atts


def nsi_attention_correlation(model, inputs):
    if model.config.adaptor == "none":
        raise ValidationError("the plain network has no attention to correlate")
    return block_correlations(*block_nsi_and_attention(model, inputs))
