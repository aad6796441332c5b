"""Convergence-bound evaluation, assumption-constant estimation and cost metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .errors import CoherentFLError, ConfigurationError, DomainError
from .fedcore import RoundTrace, data_weights, global_gradient, global_loss
from .models import QuadraticModel
from .signaling import Scheme


class LearningRateWarning(UserWarning):
    """The local learning rate exceeds ``1 / (2 L tau)``; the bound is not guaranteed."""


class PowerIterationError(CoherentFLError):
    pass


@dataclass(frozen=True)
class AssumptionConstants:
    L: float
    gamma2: float
    omega2: float
    sigma2_D: float
    eta_local: float
    tau: int

    def __post_init__(self):
        for name in ("L", "gamma2", "omega2", "sigma2_D", "eta_local"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if self.tau < 1:
            raise DomainError("tau must be >= 1")

    @property
    def eta_g(self) -> float:
        return self.eta_local * self.tau

    @property
    def lr_condition_ok(self) -> bool:
        return self.eta_local <= 1.0 / (2.0 * self.L * self.tau) if self.L > 0 else True


def error_floor(c: AssumptionConstants) -> float:
    """Irreducible floor ``8 L eta_g tau (gamma^2 + omega^2) + 4 L sigma_D^2``."""
    return 8.0 * c.L * c.eta_g * c.tau * (c.gamma2 + c.omega2) + 4.0 * c.L * c.sigma2_D


def bound_rhs(c: AssumptionConstants, model_diff_sq, f0: float, f_star: float,
              T: int | None = None) -> float:
    """Right-hand side of the PLMF convergence bound after ``T`` rounds.

    ``model_diff_sq[t]`` is ``||theta^(t) - theta^(t-1)||^2``; the entry for
    ``t = 0`` is taken as zero whatever is passed.
    """
    diffs = np.asarray(model_diff_sq, dtype=float)
    T = len(diffs) if T is None else T
    if T < 1:
        raise DomainError("need at least one round")
    if len(diffs) < T:
        raise DomainError(f"trace has {len(diffs)} rounds, {T} requested")
    if f0 < f_star:
        raise DomainError("F(theta0) must not be below F*")
    if not c.lr_condition_ok:
        warnings.warn(
            f"eta_local={c.eta_local:g} exceeds 1/(2 L tau)={1 / (2 * c.L * c.tau):g}",
            LearningRateWarning, stacklevel=2)
    diffs = diffs[:T].copy()
    diffs[0] = 0.0
    start = 4.0 * (f0 - f_star) / (T * c.eta_g)
    drift = 4.0 * c.L**2 * c.tau * c.eta_g / T * math.fsum(diffs)
    return start + drift + error_floor(c)


def empirical_lhs(grad_norm_sq, T: int | None = None) -> float:
    g = np.asarray(grad_norm_sq, dtype=float)
    T = len(g) if T is None else T
    return float(np.mean(g[:T]))


@dataclass(frozen=True)
class BoundReport:
    constants: AssumptionConstants
    T: int
    f0: float
    f_star: float
    Z: float
    bound: float
    lhs: float
    informational: bool = False

    @property
    def passed(self) -> bool:
        return self.lhs <= self.bound

    @property
    def margin(self) -> float:
        return self.bound - self.lhs

    def to_dict(self) -> dict:
        out = {"constants": asdict(self.constants)}
        out["constants"]["eta_g"] = self.constants.eta_g
        out["constants"]["lr_condition_ok"] = self.constants.lr_condition_ok
        out.update(T=self.T, F0=self.f0, F_star=self.f_star, Z=self.Z, bound=self.bound,
                   empirical_lhs=self.lhs, passed=self.passed, margin=self.margin,
                   informational=self.informational)
        return out


def check_bound(trace: RoundTrace, c: AssumptionConstants, f0: float, f_star: float,
                T: int | None = None, fill_strategy: str = "plmf") -> BoundReport:
    """Compare the empirical mean squared gradient norm with the bound.

    The bound is stated for PLMF; reports for zero filling are marked
    informational.
    """
    T = len(trace) if T is None else T
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LearningRateWarning)
        bound = bound_rhs(c, trace.model_diff_sq, f0, f_star, T)
    if not c.lr_condition_ok:
        warnings.warn("learning-rate condition violated; bound not guaranteed",
                      LearningRateWarning, stacklevel=2)
    return BoundReport(c, T, f0, f_star, error_floor(c), bound,
                       empirical_lhs(trace.grad_norm_sq, T),
                       informational=str(fill_strategy).lower() != "plmf")


# -- constant estimation -----------------------------------------------------


def _hvp(model, theta, dataset, v, eps=1e-5):
    gp = model.grad(theta + eps * v, dataset.features, dataset.labels)
    gm = model.grad(theta - eps * v, dataset.features, dataset.labels)
    return (gp - gm) / (2 * eps)


def power_iteration(matvec, dim, rng, iters=1000, tol=1e-8) -> float:
    """Algebraically largest eigenvalue of a symmetric operator.

    Uses implicitly restarted Lanczos, which converges on clustered
    spectra where plain power iteration stalls.
    """
    op = LinearOperator((dim, dim), matvec=matvec, dtype=float)
    v0 = rng.standard_normal(dim)
    try:
        vals = eigsh(op, k=1, which="LA", v0=v0, maxiter=iters, tol=tol,
                     return_eigenvectors=False)
    except ArpackNoConvergence:
        raise PowerIterationError(
            f"eigenvalue iteration did not converge in {iters} restarts") from None
    return float(vals[0])


def smoothness_constant(model, datasets, probes, rng, safety=1.1) -> float:
    """Upper estimate of the local-loss smoothness constant.

    Exact for the quadratic model; otherwise the largest Hessian eigenvalue
    found by power iteration over devices and probe points, times ``safety``.
    """
    if isinstance(model, QuadraticModel):
        return float(np.linalg.eigvalsh(model.hessian)[-1])
    best = 0.0
    for theta in probes:
        for ds in datasets:
            lam = power_iteration(lambda v: _hvp(model, theta, ds, v), model.dim, rng)
            best = max(best, lam)
    return safety * best


def minibatch_variance(model, theta, dataset, batch, trials, rng) -> float:
    """Monte Carlo ``E||grad on a minibatch - full grad||^2``."""
    full = model.grad(theta, dataset.features, dataset.labels)
    if batch >= dataset.n:
        return 0.0
    acc = 0.0
    for _ in range(trials):
        idx = rng.choice(dataset.n, size=batch, replace=False)
        g = model.grad(theta, dataset.features[idx], dataset.labels[idx])
        acc += float(np.sum((g - full) ** 2))
    return acc / trials


def heterogeneity(model, theta, datasets) -> float:
    """``(1/K) sum_k ||grad F_k - grad F||^2`` at ``theta``."""
    w = data_weights(datasets)
    g = global_gradient(theta, model, datasets, w)
    return float(np.mean([np.sum((model.grad(theta, d.features, d.labels) - g) ** 2)
                          for d in datasets]))


def estimate_constants(model, datasets, probes, batch_size, eta_local, tau, sigma2_D,
                       rng, trials=200, variance_safety=1.1) -> AssumptionConstants:
    """Measure the assumption constants as upper bounds over ``probes``.

    ``sigma2_D`` is the expected squared norm of a dynamic device's
    downlink noise vector (per-coordinate variance times dimension).
    """
    probes = [np.asarray(p, dtype=float) for p in probes]
    if not probes:
        raise ConfigurationError("need at least one probe point")
    L = smoothness_constant(model, datasets, probes, rng)
    gamma2 = 0.0
    omega2 = 0.0
    for theta in probes:
        for ds in datasets:
            gamma2 = max(gamma2, minibatch_variance(model, theta, ds, min(batch_size, ds.n),
                                                    trials, rng))
        omega2 = max(omega2, heterogeneity(model, theta, datasets))
    return AssumptionConstants(L, variance_safety * gamma2, omega2, sigma2_D, eta_local, tau)


def exact_quadratic_minibatch_variance(model: QuadraticModel, dataset, batch) -> float:
    """Closed-form minibatch gradient variance for the quadratic model.

    Sampling without replacement: ``Cov(mean) = S (n - b) / (b (n - 1))``
    with ``S`` the population covariance of the samples.
    """
    n = dataset.n
    if batch >= n:
        return 0.0
    x = dataset.features - dataset.features.mean(axis=0)
    s = x.T @ x / n
    cov = s * (n - batch) / (batch * (n - 1))
    a = model.hessian
    return float(np.trace(a @ cov @ a.T))


def quadratic_optimum(model: QuadraticModel, datasets) -> tuple:
    """Minimiser and minimum of the weighted quadratic objective."""
    w = data_weights(datasets)
    theta = sum(wi * d.features.mean(axis=0) for wi, d in zip(w, datasets))
    return theta, global_loss(theta, model, datasets, w)


def estimate_f_star(model, datasets, theta0, rounds, lr) -> float:
    """Optimal loss estimate by full-batch centralized gradient descent."""
    w = data_weights(datasets)
    theta = np.array(theta0, dtype=float)
    best = global_loss(theta, model, datasets, w)
    for _ in range(rounds):
        theta = theta - lr * global_gradient(theta, model, datasets, w)
        best = min(best, global_loss(theta, model, datasets, w))
    return best


# -- communication cost ------------------------------------------------------


def normalized_comm_cost(lam: float, scheme) -> float:
    """Downlink slots used per slot of parameter payload.

    With orthogonal pilots every pilot slot is pure overhead.  Both
    superposition schemes carry parameters in the pilot slots, so the cost
    stays at one.
    """
    if not 0 <= lam < 1:
        raise DomainError(f"pilot overhead must lie in [0, 1), got {lam}")
    if Scheme(scheme) is Scheme.CONVENTIONAL:
        return 1.0 / (1.0 - lam)
    return 1.0
