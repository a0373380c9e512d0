import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from strode import metrics
from strode.autodiff import DimensionError
from strode.data import make_sine_dataset
from strode.point_process import density_function, exponential_posterior, exponential_prior


class CopyTruth:
    """Fixture model that returns the ground-truth times it was built with."""

    def __init__(self, seqs, transform=lambda t: t):
        self.lookup = {s.values.tobytes(): s.times[1:] for s in seqs}
        self.transform = transform

    def infer(self, values):
        times = np.stack([self.transform(self.lookup[v.tobytes()]) for v in values])
        return times, values[:, 1:, :]


def test_min_max_examples():
    np.testing.assert_array_equal(metrics.min_max_normalize([2, 4, 6]), [0, 0.5, 1])
    np.testing.assert_array_equal(metrics.min_max_normalize([5, 5, 5]), [0, 0, 0])


@settings(max_examples=50)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30).filter(lambda v: max(v) - min(v) > 1e-3))
def test_min_max_range(v):
    out = metrics.min_max_normalize(v)
    assert out.min() == 0.0 and out.max() == 1.0


def test_cosine_examples():
    v = np.array([0.3, -2.0, 5.0])
    assert metrics.cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-15)
    assert metrics.cosine_similarity([1, 0], [0, 1]) == 0.0
    # dot product 0.2 + 1 = 1.2
    hand = 1.2 / (math.sqrt(1.25) * math.sqrt(1.16))
    assert metrics.cosine_similarity([0, 0.5, 1], [0, 0.4, 1]) == pytest.approx(hand, abs=1e-15)
    assert hand == pytest.approx(0.996546, abs=1e-6)
    assert metrics.cosine_similarity([0, 0], [1, 2]) == 0.0
    with pytest.raises(DimensionError):
        metrics.cosine_similarity([1, 2], [1, 2, 3])


def test_oracle_examples():
    q = density_function(exponential_posterior(1.5))
    assert abs(metrics.truncated_kl_oracle(q, q)) < 1e-9
    kl = metrics.truncated_kl_oracle(density_function(exponential_posterior(2.0)),
                                     density_function(exponential_prior(1.0)))
    assert kl == pytest.approx(math.log(2) - 0.5, abs=1e-4)
    fine = metrics.truncated_kl_oracle(density_function(exponential_posterior(2.0)),
                                       density_function(exponential_prior(1.0)), n=200_000)
    assert abs(fine - kl) < 1e-6


def test_oracle_rejects_negative_density():
    with pytest.raises(metrics.EvaluationError):
        metrics.truncated_kl_oracle(lambda t: -np.ones_like(t), lambda t: np.ones_like(t))


def test_copy_truth_and_affine_invariance():
    seqs = make_sine_dataset("hawkes", 20, seed=3)
    assert metrics.evaluate_timings(CopyTruth(seqs), seqs).cs_mean == pytest.approx(1.0, abs=1e-12)
    base = metrics.evaluate_timings(CopyTruth(seqs, lambda t: np.sqrt(t)), seqs, per_sequence=True)
    shifted = metrics.evaluate_timings(CopyTruth(seqs, lambda t: 3.7 * np.sqrt(t) - 1.2), seqs, per_sequence=True)
    np.testing.assert_allclose(base[3], shifted[3], rtol=0, atol=1e-14)
    assert -1 <= base[0].cs_mean <= 1


def test_evaluate_requires_truth():
    seqs = make_sine_dataset("poisson", 3, seed=0)
    with pytest.raises(metrics.EvaluationError):
        metrics.evaluate_timings(CopyTruth(seqs), [s.without_times() for s in seqs])
    with pytest.raises(metrics.EvaluationError):
        metrics.evaluate_timings(CopyTruth(seqs), [])


def test_report_json_and_combination():
    a = metrics.MetricReport(0.9, 0.1, 0.02, 0.01, 100)
    b = metrics.MetricReport(1.0, 0.0, 0.04, 0.0, 100)
    assert json.loads(a.to_json())["cs_mean"] == 0.9
    c = metrics.combine_reports([a, b])
    assert c.cs_mean == pytest.approx(0.95) and c.cs_std == pytest.approx(0.05) and c.n_sequences == 200


def test_central_difference_on_quadratic():
    class P:
        data = np.array([1.0, -2.0])

    p = P()
    (g,) = metrics.central_difference(lambda: np.sum(p.data ** 2) + p.data[0] * p.data[1], [p])
    np.testing.assert_allclose(g, [2 * 1.0 - 2.0, 2 * -2.0 + 1.0], atol=1e-8)
    assert metrics.max_relative_error([np.array([1.0])], [np.array([1.001])]) == pytest.approx(0.001 / 1.001)


def test_binned_ratios_for_homogeneous_process():
    rng = np.random.default_rng(0)
    t = np.cumsum(rng.exponential(0.05, size=20_000))
    ratios = metrics.binned_intensity_ratios(t, lambda g: np.full(len(g), 20.0))
    assert np.all(np.abs(ratios - 1) < 0.05)
