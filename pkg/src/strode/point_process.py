"""Neural temporal point processes for boundary times.

The posterior next-time network Phi(t | x) is nonincreasing in t (all of
its weights are kept nonpositive), which makes q(t) = -Phi'(t) / t
nonnegative. The prior models a cumulative intensity phi(t) with
nonnegative weights and phi(0) = 0, giving p(t) = phi'(t) exp(-phi(t)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .nn import ConstrainedMLP, SignConstraint, forward_derivative
from .ode import num_steps

TIME_FLOOR = 1e-6
DENSITY_FLOOR = 1e-12
HIDDEN = 16


def _column(t) -> DiffValue:
    t = DiffValue.lift(t)
    if t.data.ndim == 0:
        return t.reshape(1, 1)
    if t.data.ndim == 1:
        return t.reshape(-1, 1)
    return t


class NumericError(ArithmeticError):
    """A density-derived quantity became non-finite."""


class PosteriorTimeNet:
    """Phi(t | x_enc): the learned next-boundary-time function."""

    def __init__(self, conditioning_dim: int, hidden: int = HIDDEN, rng=None, name: str = "posterior"):
        self.conditioning_dim = conditioning_dim
        self.net = ConstrainedMLP(
            [1 + conditioning_dim, hidden, hidden, 1],
            ["tanh", "tanh", "softplus"],
            SignConstraint.NONPOSITIVE,
            rng=rng,
            name=name,
        )

    def parameters(self) -> list:
        return self.net.parameters()

    def _inputs(self, t, x_enc) -> DiffValue:
        t = _column(t)
        x_enc = DiffValue.lift(x_enc)
        if x_enc.data.ndim == 1:
            x_enc = x_enc.reshape(1, -1)
        if t.shape[0] != x_enc.shape[0]:
            t = DiffValue(np.broadcast_to(t.data, (x_enc.shape[0], 1))) if not t.requires_grad else t
        return ad.concat([t, x_enc], axis=1)

    def phi(self, t, x_enc) -> DiffValue:
        return self.net(self._inputs(t, x_enc))

    def phi_prime(self, t, x_enc) -> DiffValue:
        return forward_derivative(self.net, self._inputs(t, x_enc), 0)

    def density(self, t, x_enc) -> DiffValue:
        """q(t | x) = -Phi'(t) / t with t floored at ``TIME_FLOOR``."""
        t = _column(t)
        return -self.phi_prime(t, x_enc) / ad.maximum(t, TIME_FLOOR)

    def density_grid(self, times: np.ndarray, x_enc) -> DiffValue:
        """q at every (row of x_enc, time) pair, shape ``(batch, len(times))``."""
        x_enc = DiffValue.lift(x_enc)
        if x_enc.data.ndim == 1:
            x_enc = x_enc.reshape(1, -1)
        batch, k = x_enc.shape[0], len(times)
        t_col = np.tile(np.asarray(times, dtype=np.float64), batch).reshape(-1, 1)
        q = self.density(t_col, ad.repeat_rows(x_enc, k))
        return q.reshape(batch, k)


class PriorIntensityNet:
    """Cumulative intensity phi(t) = net(t) - net(0) of a regenerative prior."""

    def __init__(self, hidden: int = HIDDEN, rng=None, name: str = "prior"):
        self.net = ConstrainedMLP(
            [1, hidden, hidden, 1],
            ["tanh", "tanh", "softplus"],
            SignConstraint.NONNEGATIVE,
            rng=rng,
            name=name,
        )

    def parameters(self) -> list:
        return self.net.parameters()

    def cumulative(self, t) -> DiffValue:
        t = _column(t)
        return self.net(t) - self.net(np.zeros((1, 1)))

    def intensity(self, t) -> DiffValue:
        return forward_derivative(self.net, _column(t), 0)

    def density(self, t) -> DiffValue:
        t = _column(t)
        return self.intensity(t) * ad.exp(-self.cumulative(t))

    def density_grid(self, times: np.ndarray) -> DiffValue:
        return self.density(np.asarray(times, dtype=np.float64).reshape(-1, 1)).reshape(1, -1)


@dataclass
class AnalyticPrior:
    """Prior given in closed form, e.g. ``cumulative=lambda t: lam * t``."""

    cumulative_fn: Callable
    intensity_fn: Callable

    def cumulative(self, t) -> DiffValue:
        return DiffValue(self.cumulative_fn(_column(t).data))

    def intensity(self, t) -> DiffValue:
        return DiffValue(np.broadcast_to(self.intensity_fn(_column(t).data), _column(t).shape))

    def density(self, t) -> DiffValue:
        t = _column(t).data
        return DiffValue(np.broadcast_to(self.intensity_fn(t), t.shape) * np.exp(-self.cumulative_fn(t)))

    def density_grid(self, times) -> DiffValue:
        return self.density(np.asarray(times, dtype=np.float64).reshape(-1, 1)).reshape(1, -1)


@dataclass
class AnalyticPosterior:
    """Posterior density given in closed form; ignores the conditioning."""

    density_fn: Callable

    def density(self, t, x_enc=None) -> DiffValue:
        return DiffValue(self.density_fn(_column(t).data))

    def density_grid(self, times, x_enc=None) -> DiffValue:
        rows = 1 if x_enc is None else np.atleast_2d(DiffValue.lift(x_enc).data).shape[0]
        q = self.density_fn(np.asarray(times, dtype=np.float64)).reshape(1, -1)
        return DiffValue(np.repeat(q, rows, axis=0))


def exponential_prior(rate: float) -> AnalyticPrior:
    return AnalyticPrior(lambda t: rate * t, lambda t: np.full_like(t, rate))


def exponential_posterior(rate: float) -> AnalyticPosterior:
    return AnalyticPosterior(lambda t: rate * np.exp(-rate * t))


# -- operations ---------------------------------------------------------------
def sample_next_time(post: PosteriorTimeNet, t_prev, x_enc) -> DiffValue:
    """t_i = t_prev + softplus(...): the previous time acts as the output bias."""
    t_prev = _column(t_prev)
    t = t_prev + post.phi(t_prev, x_enc)
    # softplus underflow can round t back onto t_prev; nudge by one ulp as a
    # constant so the gradient is that of the unrounded sum
    stuck = t.data <= t_prev.data
    if np.any(stuck):
        t = t + np.where(stuck, np.nextafter(t_prev.data, np.inf) - t.data, 0.0)
    return t


def posterior_density(post: PosteriorTimeNet, t, x_enc) -> DiffValue:
    return post.density(t, x_enc)


def prior_density(prior, t) -> DiffValue:
    return prior.density(t)


@dataclass
class KLBound:
    """Per-row pieces of the KL upper bound."""

    g_eps: DiffValue        # G(-eps)
    g_2eps: DiffValue       # G(-2 eps)
    gap: DiffValue          # |G(-2 eps) - G(-eps)|
    bound: DiffValue        # g_eps + gap
    m_grid: np.ndarray


def change_of_variable_grid(eps: float):
    """Euler nodes m_k on [-1, -eps] with their step sizes."""
    n = num_steps(1.0 - eps, eps)
    m = -1.0 + eps * np.arange(n)
    dt = np.minimum(eps, -eps - m)
    return m, dt


def kl_bound_terms(post, prior, x_enc, eps: float = 0.1) -> KLBound:
    """Solve G'(m) = g(m), G(-1) = 0 with Euler steps of size ``eps``.

    With m = -exp(-t) the KL integrand becomes
    g(m) = q(M) / (-m) * log(q(M) / p(M)), M = -log(-m).
    """
    if not 0.0 < eps <= 0.5:
        raise ValueError(f"eps must be in (0, 0.5], got {eps}")
    m, dt = change_of_variable_grid(eps)
    times = -np.log(-m)
    q = post.density_grid(times, x_enc)
    p = prior.density_grid(times)
    log_ratio = ad.log(ad.maximum(q, DENSITY_FLOOR)) - ad.log(ad.maximum(p, DENSITY_FLOOR))
    g = q * (1.0 / -m).reshape(1, -1) * log_ratio
    if not np.all(np.isfinite(g.data)):
        cols = np.where(~np.all(np.isfinite(g.data), axis=0))[0]
        raise NumericError(f"non-finite KL integrand at m = {m[cols].tolist()}")

    increments = g * dt.reshape(1, -1)
    g_eps = increments.sum(axis=1)

    target = -2.0 * eps
    j = int(np.searchsorted(m, target + 1e-9, side="right") - 1)
    g_2eps = increments[:, :j].sum(axis=1) if j > 0 else g_eps * 0.0
    frac = target - m[j]
    if abs(frac) > 1e-9:
        g_2eps = g_2eps + g[:, j] * frac
    gap = ad.abs_(g_2eps - g_eps)
    return KLBound(g_eps, g_2eps, gap, g_eps + gap, m)


def kl_upper_bound(post, prior, x_enc, eps: float = 0.1) -> DiffValue:
    """G(-eps) + |G(-2 eps) - G(-eps)| for each row of ``x_enc``."""
    return kl_bound_terms(post, prior, x_enc, eps).bound


def expected_next_arrival(prior, t_prev: float, horizon: float, n: int = 20001) -> float:
    """Trapezoid estimate of the next arrival mean after a restart at ``t_prev``.

    Mass beyond ``horizon`` is dropped, so this is E[T; T <= horizon].
    """
    if not horizon > t_prev:
        raise ValueError("horizon must exceed t_prev")
    s = np.linspace(0.0, horizon - t_prev, n)
    dens = prior.density(s.reshape(-1, 1)).data.reshape(-1)
    return float(np.trapezoid((t_prev + s) * dens, s))


def density_function(model, x_enc=None) -> Callable:
    """Wrap a posterior (with fixed conditioning) or prior as a numpy callable."""
    def fn(t):
        t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        if x_enc is None:
            return model.density(t).data.reshape(-1)
        cond = np.broadcast_to(np.asarray(x_enc, dtype=np.float64).reshape(1, -1), (len(t), np.size(x_enc)))
        return model.density(t, cond).data.reshape(-1)
    return fn
