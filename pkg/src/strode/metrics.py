"""Evaluation metrics and independent numerical oracles."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import DimensionError, no_grad


class EvaluationError(ValueError):
    pass


def min_max_normalize(v) -> np.ndarray:
    """Scale to [0, 1]; a constant vector maps to zeros."""
    v = np.asarray(v, dtype=np.float64)
    span = v.max() - v.min()
    if span == 0:
        return np.zeros_like(v)
    return (v - v.min()) / span


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(np.clip(a @ b / denom, -1.0, 1.0))


def timing_cs(inferred, truth) -> float:
    """CS between min-max normalized inferred and true boundary times."""
    return cosine_similarity(min_max_normalize(inferred), min_max_normalize(truth))


def mse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    return float(np.mean((pred - target) ** 2))


def truncated_kl_oracle(q_fn, p_fn, t_lo: float = 1e-4, t_hi: float = 20.0, n: int = 100_000) -> float:
    """Trapezoid KL(q || p) on [t_lo, t_hi] with both densities renormalized there."""
    t = np.linspace(t_lo, t_hi, n)
    q = np.asarray(q_fn(t), dtype=np.float64).reshape(-1)
    p = np.asarray(p_fn(t), dtype=np.float64).reshape(-1)
    if np.any(q < 0) or np.any(p < 0):
        raise EvaluationError("densities must be nonnegative on the grid")
    q = q / np.trapezoid(q, t)
    p = p / np.trapezoid(p, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0)
    return float(np.trapezoid(integrand, t))


@dataclass
class MetricReport:
    cs_mean: float
    cs_std: float
    mse_mean: float
    mse_std: float
    n_sequences: int
    t_window: tuple | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def evaluate_timings(model, sequences, per_sequence: bool = False):
    """Cosine similarity of inferred t_1..t_N against ground truth.

    ``model`` needs ``infer(values) -> (times, reconstructions)`` where
    ``values`` is ``(batch, N + 1, d)`` and ``times`` is ``(batch, N)``.
    """
    if not sequences:
        raise EvaluationError("empty test set")
    if any(s.times is None for s in sequences):
        raise EvaluationError("evaluation needs ground-truth times on every sequence")
    values = np.stack([s.values for s in sequences])
    truth = np.stack([s.times for s in sequences])
    inferred, recon = model.infer(values)
    cs = np.array([timing_cs(inferred[i], truth[i, 1:]) for i in range(len(sequences))])
    errs = np.mean((recon - values[:, 1:, :]) ** 2, axis=(1, 2))
    report = MetricReport(float(cs.mean()), float(cs.std()), float(errs.mean()), float(errs.std()),
                          len(sequences))
    if per_sequence:
        return report, inferred, truth[:, 1:], cs
    return report


def combine_reports(reports) -> MetricReport:
    """Mean and std across seeds of per-seed mean CS / MSE."""
    cs = np.array([r.cs_mean for r in reports])
    err = np.array([r.mse_mean for r in reports])
    return MetricReport(float(cs.mean()), float(cs.std()), float(err.mean()), float(err.std()),
                        int(sum(r.n_sequences for r in reports)))


# -- finite differences and Monte-Carlo oracles --------------------------------
def central_difference(fn, params, h: float = 1e-5) -> list:
    """Central-difference gradient of scalar ``fn()`` w.r.t. each array in ``params``.

    ``params`` are objects with a mutable ``data`` array (perturbed in place
    and restored).
    """
    grads = []
    with no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = float(fn())
                flat[k] = orig - h
                down = float(fn())
                flat[k] = orig
                g.reshape(-1)[k] = (up - down) / (2.0 * h)
            grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.asarray(a), np.asarray(n)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst


def long_run_rate(times, horizon: float) -> float:
    return len(times) / horizon


def binned_intensity_ratios(times, intensity_on_grid, width: float = 0.1, groups: int = 5,
                            sub: int = 20) -> np.ndarray:
    """Observed / expected event counts in ``width``-bins pooled by intensity level.

    Bins are ranked by the intensity at their left edge (known before the
    bin's own events, so the grouping does not bias the comparison) and split
    into ``groups`` quantile groups; each entry is sum(observed) /
    sum(expected) for one group. ``intensity_on_grid(grid)`` evaluates lambda
    at sorted times.
    """
    times = np.asarray(times)
    n_bins = int(times[-1] // width)
    edges = np.arange(n_bins + 1) * width
    fine = np.linspace(0.0, edges[-1], n_bins * sub + 1)
    mids = 0.5 * (fine[1:] + fine[:-1])
    lam = np.asarray(intensity_on_grid(mids))
    start = np.asarray(intensity_on_grid(edges[:-1]))
    expected = (lam * np.diff(fine)).reshape(n_bins, sub).sum(axis=1)
    observed = np.histogram(times, bins=edges)[0].astype(float)
    order = np.argsort(start, kind="stable")
    return np.array([observed[g].sum() / expected[g].sum() for g in np.array_split(order, groups)])
