"""Federated training loop under downlink impairments."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigurationError, DimensionError, LocalTrainingError
from .fading import DeviceProfile
from .impairment import DownlinkImpairment, ReceivedModel, corrupt_broadcast
from .phymath import stream
from .signaling import Scheme

WEIGHT_ATOL = 1e-12


class FillStrategy(str, enum.Enum):
    ZF = "zf"
    PLMF = "plmf"


@dataclass(frozen=True)
class TrainConfig:
    tau: int = 5
    eta_local: float = 0.05
    batch_size: int = 16
    rounds: int = 20
    fill_strategy: FillStrategy = FillStrategy.PLMF
    scheme: Scheme = Scheme.PRODUCT

    def __post_init__(self):
        if self.tau < 1 or self.rounds < 1 or self.batch_size < 1:
            raise ConfigurationError("tau, rounds and batch size must be >= 1")
        if not self.eta_local > 0:
            raise ConfigurationError("local learning rate must be positive")
        object.__setattr__(self, "fill_strategy", FillStrategy(self.fill_strategy))
        object.__setattr__(self, "scheme", Scheme(self.scheme))


@dataclass
class DeviceState:
    profile: DeviceProfile
    prev_local: np.ndarray


def data_weights(datasets) -> np.ndarray:
    sizes = np.array([d.n for d in datasets], dtype=float)
    return sizes / sizes.sum()


def global_loss(theta, model, datasets, weights) -> float:
    """Weighted average of local empirical losses."""
    if not datasets:
        raise ConfigurationError("no datasets")
    return float(sum(w * model.loss(theta, d.features, d.labels)
                     for w, d in zip(weights, datasets)))


def global_gradient(theta, model, datasets, weights) -> np.ndarray:
    return sum(w * model.grad(theta, d.features, d.labels) for w, d in zip(weights, datasets))


def local_sgd(theta_init, model, dataset, tau, eta, batch, rng) -> tuple:
    """Run ``tau`` minibatch SGD steps; return ``(theta_final, theta_final - theta_init)``.

    Minibatches are drawn without replacement at every step; a batch equal
    to the dataset size is plain gradient descent and consumes no randomness.
    """
    if dataset.n < 1:
        raise ConfigurationError("empty local dataset")
    if batch > dataset.n:
        raise ConfigurationError(f"batch {batch} exceeds dataset size {dataset.n}")
    theta = np.array(theta_init, dtype=float)
    full = batch == dataset.n
    for i in range(tau):
        if full:
            x, y = dataset.features, dataset.labels
        else:
            idx = rng.choice(dataset.n, size=batch, replace=False)
            x, y = dataset.features[idx], dataset.labels[idx]
        g = model.grad(theta, x, y)
        if not np.all(np.isfinite(g)):
            raise LocalTrainingError(
                f"non-finite gradient at local step {i}: max|theta|="
                f"{np.max(np.abs(theta)):.3g}, eta={eta}")
        theta = theta - eta * g
    return theta, theta - theta_init


def fill_zero(received: ReceivedModel) -> np.ndarray:
    out = np.zeros(received.d)
    out[received.indices] = received.values
    return out


def fill_plmf(received: ReceivedModel, prev_local) -> np.ndarray:
    prev_local = np.asarray(prev_local, dtype=float)
    if prev_local.shape != (received.d,):
        raise DimensionError("previous local model has the wrong length")
    out = prev_local.copy()
    out[received.indices] = received.values
    return out


def aggregate(updates, weights) -> np.ndarray:
    """Weighted sum of device updates, accumulated in the given order."""
    weights = list(weights)
    if len(weights) != len(updates):
        raise ConfigurationError("one weight per update required")
    if abs(math.fsum(weights) - 1.0) > WEIGHT_ATOL:
        raise ConfigurationError(f"weights sum to {math.fsum(weights)!r}, not 1")
    total = np.zeros_like(np.asarray(updates[0], dtype=float))
    for w, u in zip(weights, updates):
        total = total + w * u
    return total


@dataclass(frozen=True)
class RoundRecord:
    round: int
    global_loss: float
    grad_norm_sq: float
    model_diff_sq: float
    test_accuracy: float
    comm_cost_slots: float = 0.0
    normalized_cost: float = 0.0
    lam: float = 0.0
    scheme: str = ""
    fill_strategy: str = ""
    seed: int = 0


@dataclass
class RoundTrace:
    records: list = field(default_factory=list)

    def append(self, rec: RoundRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def grad_norm_sq(self) -> np.ndarray:
        return self.column("grad_norm_sq")

    @property
    def model_diff_sq(self) -> np.ndarray:
        return self.column("model_diff_sq")

    @staticmethod
    def fieldnames() -> list:
        return [f.name for f in fields(RoundRecord)]


@dataclass
class FederatedState:
    """Mutable training state; replaced only between rounds."""

    model: object
    theta: np.ndarray
    devices: dict
    datasets: dict
    test_set: object = None
    prev_theta: np.ndarray = None
    round: int = 0

    @classmethod
    def start(cls, model, theta0, profiles, datasets, test_set=None) -> "FederatedState":
        theta0 = np.asarray(theta0, dtype=float)
        devices = {p.id: DeviceState(p, theta0.copy()) for p in profiles}
        return cls(model, theta0.copy(), devices, dict(datasets), test_set, theta0.copy())

    def pool_weights(self):
        ids = sorted(self.datasets)
        return [self.datasets[i] for i in ids], data_weights([self.datasets[i] for i in ids])

    def loss_and_grad(self, theta=None):
        theta = self.theta if theta is None else theta
        ds, w = self.pool_weights()
        return (global_loss(theta, self.model, ds, w),
                global_gradient(theta, self.model, ds, w))


def initial_local_model(received: ReceivedModel, device: DeviceState,
                        fill: FillStrategy) -> np.ndarray:
    if fill is FillStrategy.PLMF:
        return fill_plmf(received, device.prev_local)
    return fill_zero(received)


def run_round(state: FederatedState, config: TrainConfig, cohort, impairments: dict,
              seed: int) -> RoundRecord:
    """One broadcast / local-training / aggregation cycle.

    ``cohort`` lists the participating device ids; ``impairments`` maps each
    id to its :class:`DownlinkImpairment`.  Devices are processed in
    ascending id order with per-(round, device) random streams, so results
    do not depend on evaluation order.
    """
    t = state.round
    theta = state.theta
    loss, grad = state.loss_and_grad()
    ids = sorted(cohort)
    if not ids:
        raise ConfigurationError("empty cohort")
    d = theta.size
    weights = data_weights([state.datasets[i] for i in ids])
    updates = []
    for k in ids:
        imp: DownlinkImpairment = impairments[k]
        if imp.mask.d != d:
            raise DimensionError(f"device {k}: mask length {imp.mask.d} != model length {d}")
        dev = state.devices[k]
        received = corrupt_broadcast(theta, imp.mask, imp.sigma2, stream(seed, t, k, "downlink"))
        start = initial_local_model(received, dev, config.fill_strategy)
        final, delta = local_sgd(start, state.model, state.datasets[k], config.tau,
                                 config.eta_local, min(config.batch_size, state.datasets[k].n),
                                 stream(seed, t, k, "minibatch"))
        dev.prev_local = final
        updates.append(delta)
    new_theta = theta + aggregate(updates, weights)
    diff = float(np.sum((theta - state.prev_theta) ** 2))
    state.prev_theta = theta
    state.theta = new_theta
    state.round = t + 1
    acc = float("nan")
    if state.test_set is not None:
        acc = state.model.accuracy(new_theta, state.test_set.features, state.test_set.labels)
    return RoundRecord(round=t, global_loss=loss, grad_norm_sq=float(grad @ grad),
                       model_diff_sq=diff, test_accuracy=acc,
                       scheme=config.scheme.value, fill_strategy=config.fill_strategy.value,
                       seed=seed)
