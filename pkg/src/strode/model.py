"""STRODE: neural ODE dynamics between stochastic, unobserved boundary times."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .metrics import evaluate_timings
from .nn import ConstrainedMLP
from .ode import DEFAULT_STEP, ode_solve_segment
from .optim import TrainingError, make_optimizer
from .point_process import PosteriorTimeNet, PriorIntensityNet, kl_upper_bound, sample_next_time

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "strode-checkpoint/1"
REGEN_EPS0 = 1e-6
DIVERGENCE_LIMIT = 1e8
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    lr: float = 4e-4
    beta_kl: float = 1e-4
    epochs: int = 200
    batch: int = 32
    euler_step: float = DEFAULT_STEP
    dropout: float = 0.1
    seed: int = 0
    optimizer: str = "adam"
    variant: str = "standard"
    gamma_prior: float = 1e-3
    patience: int = 20
    likelihood: str = "mse"
    latent_dim: int = 8
    lookahead: bool = True

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be nonnegative")
        if not self.beta_kl >= 0 or not self.gamma_prior >= 0:
            raise ValueError("loss weights must be nonnegative")
        if not self.euler_step > 0:
            raise ValueError("euler_step must be positive")
        if self.variant not in ("standard", "regenerative"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.likelihood not in ("mse", "gaussian"):
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.optimizer.lower() not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("epochs must be >= 0 and batch >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class ElboReport:
    """Loss decomposition, averaged over the sequences of a batch.

    ``total_loss = recon + beta * kl - gamma * prior_ll``.
    """

    recon: float
    kl: float
    prior_ll: float
    total_loss: float
    beta: float = 0.0
    gamma: float = 0.0
    loss: DiffValue | None = field(default=None, repr=False, compare=False)
    per_sequence: np.ndarray | None = field(default=None, repr=False, compare=False)

    def recomposed(self) -> float:
        return self.recon + self.beta * self.kl - self.gamma * self.prior_ll


def _assemble(recon_seq: DiffValue, kl_seq: DiffValue, prior_seq: DiffValue | None,
              beta: float, gamma: float, where: str) -> ElboReport:
    batch = recon_seq.shape[0]
    per_seq = recon_seq.data + beta * kl_seq.data
    if prior_seq is not None:
        per_seq = per_seq - gamma * prior_seq.data
    bad = np.where(~np.isfinite(per_seq))[0]
    if bad.size:
        raise TrainingError(f"{where}: non-finite loss for sequence index {int(bad[0])}")
    recon = recon_seq.sum() * (1.0 / batch)
    kl = kl_seq.sum() * (1.0 / batch)
    total = recon + beta * kl
    prior_ll = 0.0
    if prior_seq is not None:
        prior = prior_seq.sum() * (1.0 / batch)
        total = total - gamma * prior
        prior_ll = float(prior.data)
    return ElboReport(float(recon.data), float(kl.data), prior_ll, float(total.data), beta,
                      gamma if prior_seq is not None else 0.0, total, per_seq)


def _step_major(values: np.ndarray) -> np.ndarray:
    """(batch, steps, d) -> (steps * batch, d) with row index = step * batch + b."""
    b, n, d = values.shape
    return np.ascontiguousarray(values.transpose(1, 0, 2)).reshape(n * b, d)


def _sum_per_sequence(rows: DiffValue, steps: int, batch: int) -> DiffValue:
    """Sum a ``(steps * batch,)`` step-major vector over steps."""
    return rows.reshape(steps, batch).sum(axis=0)


class StrodeNet:
    """Encoder, dynamics, decoder, posterior time net and prior intensity net."""

    kind = "standard"

    def __init__(self, obs_dim: int = 1, latent_dim: int = 8, likelihood: str = "mse", seed: int = 0):
        rng = np.random.default_rng(seed)
        self.obs_dim, self.latent_dim, self.likelihood = obs_dim, latent_dim, likelihood
        out_dim = obs_dim * (2 if likelihood == "gaussian" else 1)
        self.encoder = ConstrainedMLP([obs_dim, 8, latent_dim], "relu", rng=rng, name="encoder")
        self.dynamics = ConstrainedMLP([latent_dim + 1, 8, latent_dim], "tanh", rng=rng, name="dynamics")
        self.decoder = ConstrainedMLP([latent_dim, 8, out_dim], ["relu", "identity"], rng=rng, name="decoder")
        self.posterior = PosteriorTimeNet(latent_dim, rng=rng)
        self.prior = PriorIntensityNet(rng=rng)
        self.euler_step = DEFAULT_STEP

    def nets(self) -> list:
        return [self.encoder, self.dynamics, self.decoder, self.posterior.net, self.prior.net]

    def parameters(self) -> list:
        return [p for net in self.nets() for p in net.parameters()]

    def state_dict(self) -> dict:
        return {net.name: net.state_dict() for net in self.nets()}

    def load_state_dict(self, state: dict) -> None:
        for net in self.nets():
            net.load_state_dict(state[net.name])

    def hyper(self) -> dict:
        return {"obs_dim": self.obs_dim, "latent_dim": self.latent_dim, "likelihood": self.likelihood}

    def infer(self, values: np.ndarray):
        """Boundary times ``(batch, N)`` and reconstructions ``(batch, N, d)`` in eval mode."""
        out = forward_sequence(self, values, TrainConfig(beta_kl=0.0, euler_step=self.euler_step,
                                                         likelihood=self.likelihood), need_kl=False)
        return out.times, out.reconstructions


@dataclass
class SequenceOutput:
    times: np.ndarray
    reconstructions: np.ndarray
    report: ElboReport


def _reconstruction_terms(model: StrodeNet, out: DiffValue, target: np.ndarray):
    d = model.obs_dim
    if model.likelihood == "gaussian":
        mu = out[:, :d]
        var = ad.softplus(out[:, d:])
        nll = 0.5 * (LOG_2PI + ad.log(var)) + (mu - target) ** 2 / (2.0 * var)
        return nll.sum(axis=1), mu
    return ((out - target) ** 2).sum(axis=1), out


def forward_sequence(model: StrodeNet, values, config: TrainConfig | None = None, *, rng=None,
                     training: bool = False, need_kl: bool = True) -> SequenceOutput:
    """Sample boundary times, solve the ODE between them and decode.

    Segment i starts from the encoded observation x_{i-1} and runs from
    the sampled time t_{i-1} to t_i = t_{i-1} + Phi(t_{i-1} | enc(x_i)).
    """
    config = config or TrainConfig()
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    batch, length, _ = values.shape
    if length < 2:
        raise ValueError("a sequence needs at least two observations")
    steps = length - 1
    rows = _step_major(values)
    drop = config.dropout if training else 0.0

    enc = model.encoder(rows, dropout_rate=drop, rng=rng, training=training)
    t_prev = DiffValue(np.zeros((batch, 1)))
    times, states = [], []
    for i in range(1, length):
        enc_prev = enc[(i - 1) * batch:i * batch]
        enc_i = enc[i * batch:(i + 1) * batch]
        t_i = sample_next_time(model.posterior, t_prev, enc_i)
        bad = np.where(~np.isfinite(t_i.data[:, 0]))[0]
        if bad.size:
            raise TrainingError(f"forward_sequence: non-finite boundary time for sequence index {int(bad[0])}")
        states.append(ode_solve_segment(model.dynamics, enc_prev, t_prev, t_i, config.euler_step))
        times.append(t_i)
        t_prev = t_i

    decoded = model.decoder(ad.concat(states, axis=0), dropout_rate=drop, rng=rng, training=training)
    recon_rows, mean = _reconstruction_terms(model, decoded, rows[batch:])
    recon_seq = _sum_per_sequence(recon_rows, steps, batch)
    if need_kl:
        kl_rows = kl_upper_bound(model.posterior, model.prior, enc[batch:], eps=config.euler_step)
        kl_seq = _sum_per_sequence(kl_rows, steps, batch)
    else:
        kl_seq = DiffValue(np.zeros(batch))
    report = _assemble(recon_seq, kl_seq, None, config.beta_kl, 0.0, "forward_sequence")

    t_arr = np.concatenate([t.data for t in times], axis=1)
    recon = mean.data.reshape(steps, batch, -1).transpose(1, 0, 2)
    return SequenceOutput(t_arr, recon, report)


def loss(model: StrodeNet, values, config: TrainConfig, *, rng=None, training: bool = False) -> ElboReport:
    return forward_sequence(model, values, config, rng=rng, training=training).report


# -- regenerative variant -------------------------------------------------------
class RegenerativeStrodeNet:
    """Per-frame restarted posterior and dynamics with a look-ahead state."""

    kind = "regenerative"

    def __init__(self, obs_dim: int = 4, latent_dim: int = 8, n_classes: int = 2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.obs_dim, self.latent_dim, self.n_classes = obs_dim, latent_dim, n_classes
        self.encoder = ConstrainedMLP([obs_dim, 8, latent_dim], "relu", rng=rng, name="encoder")
        self.dynamics = ConstrainedMLP([latent_dim + 1, 8, latent_dim], "tanh", rng=rng, name="dynamics")
        self.classifier = ConstrainedMLP([2 * latent_dim, n_classes], "identity", rng=rng, name="classifier")
        self.prior_head = ConstrainedMLP([obs_dim, 8, 2 * latent_dim], ["relu", "identity"], rng=rng,
                                         name="prior_head")
        self.posterior = PosteriorTimeNet(latent_dim, rng=rng)
        self.prior = PriorIntensityNet(rng=rng)
        self.euler_step = DEFAULT_STEP

    def nets(self) -> list:
        return [self.encoder, self.dynamics, self.classifier, self.prior_head, self.posterior.net,
                self.prior.net]

    parameters = StrodeNet.parameters
    state_dict = StrodeNet.state_dict
    load_state_dict = StrodeNet.load_state_dict

    def hyper(self) -> dict:
        return {"obs_dim": self.obs_dim, "latent_dim": self.latent_dim, "n_classes": self.n_classes}


@dataclass
class RegenerativeOutput:
    ranges: np.ndarray        # (batch, frames) look-ahead range lengths
    lookahead: np.ndarray     # (batch, frames, latent) states at i + range
    logits: np.ndarray        # (batch, frames, classes)
    report: ElboReport


def regenerative_forward(model: RegenerativeStrodeNet, x, y, config: TrainConfig | None = None, *,
                         rng=None, training: bool = False) -> RegenerativeOutput:
    """Frame-wise restart: range_i = Phi(eps0 | enc(x_i)), then integrate
    the dynamics from enc(x_i) over [0, range_i] and classify
    [enc(x_i), h(i + range_i)]. The look-ahead state is scored under a
    Gaussian whose parameters come from x_{i+1}.
    """
    config = config or TrainConfig(variant="regenerative")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim == 2:
        x, y = x[None], y[None]
    batch, frames, _ = x.shape
    rows = _step_major(x)
    next_rows = _step_major(np.concatenate([x[:, 1:], x[:, -1:]], axis=1))
    labels = y.T.reshape(-1)
    drop = config.dropout if training else 0.0
    latent = model.latent_dim

    enc = model.encoder(rows, dropout_rate=drop, rng=rng, training=training)
    ranges = sample_next_time(model.posterior, REGEN_EPS0, enc) - REGEN_EPS0
    if config.lookahead:
        ahead = ode_solve_segment(model.dynamics, enc, 0.0, ranges, config.euler_step)
    else:
        ahead = enc
    logits = model.classifier(ad.concat([enc, ahead], axis=1))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    ce_rows = ad.logsumexp(logits, axis=1) - (logits * onehot).sum(axis=1)

    head = model.prior_head(next_rows, dropout_rate=drop, rng=rng, training=training)
    mu0, var0 = head[:, :latent], ad.softplus(head[:, latent:])
    ll_rows = (-0.5 * (LOG_2PI + ad.log(var0)) - (ahead - mu0) ** 2 / (2.0 * var0)).sum(axis=1)
    kl_rows = kl_upper_bound(model.posterior, model.prior, enc, eps=config.euler_step)

    report = _assemble(_sum_per_sequence(ce_rows, frames, batch), _sum_per_sequence(kl_rows, frames, batch),
                       _sum_per_sequence(ll_rows, frames, batch), config.beta_kl, config.gamma_prior,
                       "regenerative_forward")

    def per_frame(v):
        return v.reshape(frames, batch, -1).transpose(1, 0, 2)

    return RegenerativeOutput(per_frame(ranges.data)[..., 0], per_frame(ahead.data), per_frame(logits.data),
                              report)


def frame_accuracy(model: RegenerativeStrodeNet, x, y, config: TrainConfig) -> float:
    out = regenerative_forward(model, x, y, config)
    return float(np.mean(out.logits.argmax(axis=-1) == np.asarray(y)))


# -- training -------------------------------------------------------------------
@dataclass
class TrainResult:
    model: object
    metrics: list
    best_epoch: int


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def _check_divergence(report: ElboReport, epoch: int, step: int) -> None:
    if not np.isfinite(report.total_loss) or abs(report.total_loss) > DIVERGENCE_LIMIT:
        raise TrainingError(f"training diverged at epoch {epoch}, step {step} (loss {report.total_loss})")


def _fit(model, config: TrainConfig, n_train: int, batch_loss, validate, score_key: str, minimize: bool,
         callback=None) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, model.nets(), config.lr)
    metrics = []
    best_score, best_epoch, best_state, stale = None, 0, copy.deepcopy(model.state_dict()), 0
    for epoch in range(1, config.epochs + 1):
        sums = {"train_loss": 0.0, "recon": 0.0, "kl": 0.0, "prior_ll": 0.0}
        decomposition_ok, n_batches = True, 0
        for step, idx in enumerate(_batches(n_train, config.batch, rng)):
            report = batch_loss(idx, rng)
            _check_divergence(report, epoch, step)
            decomposition_ok &= report.total_loss == report.recomposed()
            opt.zero_grad()
            report.loss.backward()
            opt.step()
            n_batches += 1
            sums["train_loss"] += report.total_loss
            sums["recon"] += report.recon
            sums["kl"] += report.kl
            sums["prior_ll"] += report.prior_ll
        row = {"epoch": epoch, **{k: v / max(n_batches, 1) for k, v in sums.items()}}
        row.update(validate())
        row["decomposition_ok"] = bool(decomposition_ok)
        metrics.append(row)
        log.info("epoch %d %s", epoch, {k: round(v, 6) if isinstance(v, float) else v for k, v in row.items()})
        if callback is not None:
            callback(row)
        score = row[score_key]
        improved = best_score is None or (score < best_score if minimize else score > best_score)
        if improved:
            best_score, best_epoch, stale = score, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    model.load_state_dict(best_state)
    return TrainResult(model, metrics, best_epoch)


def train(model: StrodeNet, train_set, val_set, config: TrainConfig, callback=None) -> TrainResult:
    """Minibatch ELBO training; keeps the parameters with the best validation MSE.

    Only observation values of ``train_set`` are read; ground-truth times
    are used for the validation CS column only.
    """
    if not train_set:
        raise ValueError("empty training set")
    model.euler_step = config.euler_step
    train_x = np.stack([s.values for s in train_set])

    def batch_loss(idx, rng):
        return forward_sequence(model, train_x[idx], config, rng=rng, training=True).report

    def validate():
        report = evaluate_timings(model, val_set)
        return {"val_mse": report.mse_mean, "val_cs": report.cs_mean}

    return _fit(model, config, len(train_x), batch_loss, validate, "val_mse", True, callback)


def train_regenerative(model: RegenerativeStrodeNet, train_set, val_set, config: TrainConfig,
                       callback=None) -> TrainResult:
    """Train the frame classifier variant; keeps the best validation accuracy."""
    if not train_set:
        raise ValueError("empty training set")
    model.euler_step = config.euler_step
    tx = np.stack([s.x for s in train_set])
    ty = np.stack([s.y for s in train_set])
    vx = np.stack([s.x for s in val_set])
    vy = np.stack([s.y for s in val_set])

    def batch_loss(idx, rng):
        return regenerative_forward(model, tx[idx], ty[idx], config, rng=rng, training=True).report

    def validate():
        return {"val_acc": frame_accuracy(model, vx, vy, config)}

    return _fit(model, config, len(tx), batch_loss, validate, "val_acc", False, callback)


# -- checkpoints ----------------------------------------------------------------
def save_checkpoint(path, model, config: TrainConfig, metrics=None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "hyper": model.hyper(),
        "nets": model.state_dict(),
        "config": asdict(config),
        "metrics": metrics or [],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Returns ``(model, config, metrics)``."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a STRODE checkpoint")
    cls = RegenerativeStrodeNet if payload["kind"] == "regenerative" else StrodeNet
    model = cls(**payload["hyper"])
    model.load_state_dict(payload["nets"])
    config = TrainConfig.from_dict(payload["config"])
    model.euler_step = config.euler_step
    return model, config, payload["metrics"]
