"""Synthetic datasets: point-process timings, noisy sine observations and
an evenly sampled postdiction task, plus JSONL (de)serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OBS_NOISE_SD = 0.05
SPLITS = {"train": 5000, "val": 100, "test": 100}


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class HawkesParams:
    base: float = 10.0
    alpha: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.base <= 0 or self.beta <= 0:
            raise ValueError("base rate and decay must be positive")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"branching ratio alpha must lie in [0, 1), got {self.alpha}")

    def intensity(self, t: float, history) -> float:
        history = np.asarray(history, dtype=np.float64)
        past = history[history < t]
        return self.base + float(np.sum(self.alpha * self.beta * np.exp(-self.beta * (t - past))))


def hawkes_intensity_on_grid(params: HawkesParams, times, grid) -> np.ndarray:
    """lambda(t) just before each t in the sorted ``grid``, given event ``times``."""
    times = np.asarray(times, dtype=np.float64)
    out = np.empty(len(grid))
    excitation, last, j = 0.0, 0.0, 0
    jump = params.alpha * params.beta
    for k, t in enumerate(grid):
        while j < len(times) and times[j] < t:
            excitation = excitation * math.exp(-params.beta * (times[j] - last)) + jump
            last = times[j]
            j += 1
        out[k] = params.base + excitation * math.exp(-params.beta * (t - last))
    return out


def sample_hawkes(params: HawkesParams, n_events: int | None, rng: np.random.Generator,
                  horizon: float | None = None) -> np.ndarray:
    """Ogata thinning for lambda(t) = base + sum_j alpha*beta*exp(-beta (t - t_j)).

    Stops after ``n_events`` arrivals or at ``horizon``, whichever is given
    (both may be set; the first reached wins).
    """
    if n_events is None and horizon is None:
        raise ValueError("need n_events or horizon")
    times = []
    t, excitation = 0.0, 0.0
    jump = params.alpha * params.beta
    while n_events is None or len(times) < n_events:
        # intensity only decays until the next arrival, so the current value bounds it
        upper = params.base + excitation
        wait = rng.exponential(1.0 / upper)
        t += wait
        if horizon is not None and t > horizon:
            break
        excitation *= math.exp(-params.beta * wait)
        if rng.uniform() * upper <= params.base + excitation:
            times.append(t)
            excitation += jump
    return np.asarray(times, dtype=np.float64)


def sample_poisson(rate: float, n_events: int, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        raise ValueError("rate must be positive")
    return np.cumsum(rng.exponential(1.0 / rate, size=n_events))


def _strictly_increasing(t: np.ndarray) -> np.ndarray:
    t = np.sort(t)
    for k in range(1, len(t)):
        if t[k] <= t[k - 1]:
            t[k] = np.nextafter(t[k - 1], np.inf)
    return t


def sample_exponential_times(n_events: int, noise_sd: float, rng: np.random.Generator,
                             a_range: tuple = (0.0, 2.0)) -> np.ndarray:
    """t_k = exp(a_k) + noise with a_k evenly spaced, shifted to start at 0."""
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    a = np.linspace(a_range[0], a_range[1], n_events)
    t = np.exp(a) + rng.normal(0.0, noise_sd, size=n_events) if noise_sd > 0 else np.exp(a)
    t = np.sort(t)
    return _strictly_increasing(t - t[0])


@dataclass
class TimedSequence:
    """Observations with (evaluation-only) ground-truth times."""

    values: np.ndarray
    times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        if self.times is not None:
            self.times = np.asarray(self.times, dtype=np.float64)
            if len(self.times) != len(self.values):
                raise ValueError("values and times differ in length")

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimedSequence):
            return NotImplemented
        if (self.times is None) != (other.times is None):
            return False
        same_times = self.times is None or np.array_equal(self.times, other.times)
        return np.array_equal(self.values, other.values) and same_times and self.meta == other.meta

    def without_times(self) -> "TimedSequence":
        return TimedSequence(self.values.copy(), None, dict(self.meta))


def _draw_times(process: str, length: int, rng, hawkes: HawkesParams, poisson_rate: float,
                exp_noise_sd: float) -> np.ndarray:
    if process == "hawkes":
        t = sample_hawkes(hawkes, length, rng)
    elif process == "poisson":
        t = sample_poisson(poisson_rate, length, rng)
    elif process == "exponential":
        return sample_exponential_times(length, exp_noise_sd, rng)
    else:
        raise ValueError(f"unknown process {process!r}")
    return t - t[0]


def make_sine_dataset(process: str, n_seq: int, length: int = 10, seed: int = 0,
                      noise_sd: float = OBS_NOISE_SD, hawkes: HawkesParams | None = None,
                      poisson_rate: float = 10.0, exp_noise_sd: float = 0.05,
                      amplitude: float = 1.0, frequency: float = 1.0) -> list:
    """Sequences x_k = A sin(w t_k) + noise with t_k drawn from ``process``.

    Every sequence gets its own RNG stream spawned from ``seed``.
    """
    hawkes = hawkes or HawkesParams()
    streams = np.random.SeedSequence(seed).spawn(n_seq)
    params = {"process": process, "length": length, "noise_sd": noise_sd, "amplitude": amplitude,
              "frequency": frequency}
    if process == "hawkes":
        params.update(base=hawkes.base, alpha=hawkes.alpha, beta=hawkes.beta)
    elif process == "poisson":
        params.update(rate=poisson_rate)
    elif process == "exponential":
        params.update(exp_noise_sd=exp_noise_sd)
    out = []
    for idx, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        t = _draw_times(process, length, rng, hawkes, poisson_rate, exp_noise_sd)
        eta = rng.normal(0.0, noise_sd, size=length) if noise_sd > 0 else np.zeros(length)
        values = amplitude * np.sin(frequency * t) + eta
        out.append(TimedSequence(values.reshape(-1, 1), t, {"generator": f"sine/{process}", "seed": seed,
                                                              "index": idx, **params}))
    return out


def split_dataset(seqs: list, sizes: dict | None = None) -> dict:
    sizes = sizes or SPLITS
    out, start = {}, 0
    for name, n in sizes.items():
        out[name] = seqs[start:start + n]
        start += n
    return out


# -- postdiction task -------------------------------------------------------
@dataclass
class PostdictionSequence:
    """Evenly sampled frames ``x`` with labels ``y`` that depend on a later frame.

    Frame i carries [cos theta_i, sin theta_i, speed cue, lag cue] + noise,
    with theta_i = theta_0 + omega * i. The label is 1 when the clean sine
    component of frame i + lag_i is positive.
    """

    x: np.ndarray
    y: np.ndarray
    lags: np.ndarray
    meta: dict = field(default_factory=dict)


def make_postdiction_dataset(n_seq: int, length: int = 20, lag_range: tuple = (1, 3), seed: int = 0,
                             noise_sd: float = OBS_NOISE_SD, omega_range: tuple = (0.0, math.pi)) -> list:
    lo, hi = lag_range
    if not (0 <= lo <= hi <= 5):
        raise ValueError("lag_range must lie within [0, 5]")
    w_lo, w_hi = omega_range
    w_mid, w_half = 0.5 * (w_lo + w_hi), max(0.5 * (w_hi - w_lo), 1e-12)
    l_mid, l_half = 0.5 * (lo + hi), max(0.5 * (hi - lo), 1.0)
    streams = np.random.SeedSequence(seed).spawn(n_seq)
    out = []
    for idx, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        omega = rng.uniform(w_lo, w_hi)
        theta0 = rng.uniform(0.0, 2.0 * math.pi)
        lags = rng.integers(lo, hi + 1, size=length)
        frames = np.arange(length)
        theta = theta0 + omega * frames
        clean = np.stack([
            np.cos(theta), np.sin(theta),
            np.full(length, (omega - w_mid) / w_half),
            (lags - l_mid) / l_half,
        ], axis=1)
        x = clean + rng.normal(0.0, noise_sd, size=clean.shape)
        y = (np.sin(theta0 + omega * (frames + lags)) > 0).astype(np.int64)
        out.append(PostdictionSequence(x, y, lags, {"generator": "postdiction", "seed": seed, "index": idx,
                                                    "lag_range": [lo, hi], "omega_range": [w_lo, w_hi],
                                                    "noise_sd": noise_sd}))
    return out


# -- serialization ------------------------------------------------------------
def _record(seq) -> dict:
    if isinstance(seq, PostdictionSequence):
        return {"values": seq.x.tolist(), "labels": seq.y.tolist(), "lags": seq.lags.tolist(), "meta": seq.meta}
    rec = {"values": seq.values.tolist()}
    if seq.times is not None:
        rec["times"] = seq.times.tolist()
    rec["meta"] = seq.meta
    return rec


def write_dataset(path, seqs) -> None:
    """One JSON object per line; floats use Python's round-trip repr."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(json.dumps(_record(seq)))
            fh.write("\n")


def read_dataset(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "labels" in rec:
                    out.append(PostdictionSequence(np.asarray(rec["values"], dtype=np.float64),
                                                   np.asarray(rec["labels"], dtype=np.int64),
                                                   np.asarray(rec["lags"], dtype=np.int64), rec.get("meta", {})))
                else:
                    out.append(TimedSequence(rec["values"], rec.get("times"), rec.get("meta", {})))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{Path(path).name}: line {lineno}: {exc}") from exc
    return out
