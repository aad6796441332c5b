"""Pilot/data power allocation, effective SNR and achievable rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, InfeasibleBudgetError
from .phymath import draw_rayleigh_channels

_CONSTRAINT_ATOL = 1e-9


@dataclass(frozen=True)
class PowerAllocation:
    rho_p: float
    rho_d: float
    rho_total: float
    t_k: int
    m: int
    noise_var: float

    def __post_init__(self):
        if self.rho_p < 0 or self.rho_d < 0:
            raise DomainError("allocated powers must be non-negative")
        if self.energy() > self.rho_total * self.t_k + _CONSTRAINT_ATOL:
            raise DomainError("allocation exceeds the sub-block energy budget")

    def energy(self) -> float:
        """Sub-block energy ``M (rho_p + rho_d (T_K - M))``."""
        return self.m * (self.rho_p + self.rho_d * (self.t_k - self.m))

    @property
    def gamma_eff(self) -> float:
        return effective_snr(self.rho_p, self.rho_d, self.m, self.noise_var)


def min_feasible_rho(t_k: int, m: int, noise_var: float) -> float:
    """Smallest budget for which the optimal pilot power is non-negative."""
    return noise_var * math.sqrt(t_k - m) / t_k


def optimal_rho_d(rho, t_k, m, noise_var) -> float:
    r = math.sqrt(t_k - m)
    return (noise_var + rho * t_k) / (m * r * (1.0 + r))


def optimal_allocation(rho: float, t_k: int, m: int, noise_var: float) -> PowerAllocation:
    """Allocation maximising the dynamic-device effective SNR under
    ``M (rho_p + rho_d (T_K - M)) = rho T_K``.
    """
    if m < 1:
        raise ConfigurationError("need at least one antenna")
    if t_k <= m:
        raise ConfigurationError(f"T_K={t_k} <= M={m}: no data phase")
    if rho <= 0 or noise_var <= 0:
        raise DomainError("budget and noise variance must be positive")
    rho_d = optimal_rho_d(rho, t_k, m, noise_var)
    rho_p = rho * t_k / m - rho_d * (t_k - m)
    if rho_p < 0:
        rmin = min_feasible_rho(t_k, m, noise_var)
        raise InfeasibleBudgetError(
            f"budget rho={rho:g} too small for T_K={t_k}, M={m}: optimal pilot power "
            f"would be {rho_p:.6g}; need rho >= {rmin:.6g}",
            excess=-rho_p, min_rho=rmin)
    return PowerAllocation(rho_p, rho_d, rho, t_k, m, noise_var)


def inverse_snr_objective(rho_d, rho, t_k, m, noise_var):
    """Reciprocal of the effective SNR along the power-constraint line.

    Vectorised over ``rho_d``.
    """
    rho_d = np.asarray(rho_d, dtype=float)
    rho_p = rho * t_k / m - rho_d * (t_k - m)
    return noise_var / rho_d + noise_var * m / (noise_var + m * rho_p)


def stationarity_sides(rho_d, rho, t_k, m, noise_var):
    """Both sides of the first-order condition of :func:`inverse_snr_objective`."""
    c = rho * t_k / m
    lhs = noise_var / rho_d**2
    rhs = noise_var * m**2 * (t_k - m) / (noise_var + m * c - m * (t_k - m) * rho_d) ** 2
    return lhs, rhs


def effective_snr(rho_p, rho_d, m, noise_var):
    """Post-estimation SNR per unit ``||f_hat||^2``.

    ``rho_d (sigma^2 + M rho_p) / (sigma^2 (sigma^2 + M rho_p + M rho_d))``
    """
    if noise_var <= 0:
        raise DomainError("noise variance must be positive")
    return rho_d * (noise_var + m * rho_p) / (noise_var * (noise_var + m * rho_p + m * rho_d))


def additive_shrinkage(rho_p, rho_d, m, noise_var):
    """Channel-estimate shrinkage when parameters interfere with the pilot."""
    return m * rho_p / (m * rho_p + noise_var + m * rho_d)


def additive_effective_snr(rho_p, rho_d, m, noise_var):
    """Effective SNRs of additive superposition at a dynamic receiver.

    Returns ``(pilot_slots, data_slots)``.  In pilot slots the residual of
    the imperfectly cancelled pilot adds to the estimation-error term.
    Interference is treated as Gaussian.
    """
    if noise_var <= 0:
        raise DomainError("noise variance must be positive")
    leak = 1.0 - additive_shrinkage(rho_p, rho_d, m, noise_var)
    data = rho_d / (noise_var + m * rho_d * leak)
    pilot = rho_d / (noise_var + m * (rho_d + rho_p) * leak)
    return pilot, data


@dataclass(frozen=True)
class RateEstimate:
    mean: float
    stderr: float


def _mean_stderr(samples) -> RateEstimate:
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        return RateEstimate(float(samples.mean()), float("nan"))
    return RateEstimate(float(samples.mean()),
                        float(samples.std(ddof=1) / math.sqrt(samples.size)))


def static_rate(rho_p, m, t_k, noise_var, trials, rng) -> RateEstimate:
    """Monte Carlo rate a static device collects over the pilot slots."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if rho_p == 0:
        return RateEstimate(0.0, 0.0)
    h = draw_rayleigh_channels(trials, m, rng)
    gain = np.sum(np.abs(h) ** 2, axis=1)
    samples = (m / t_k) * np.log2(1.0 + rho_p / (m * noise_var) * gain)
    return _mean_stderr(samples)


def dynamic_rate(alloc: PowerAllocation, trials, rng) -> RateEstimate:
    """Monte Carlo rate of a dynamic device over the data slots.

    The estimate ``f_hat`` has i.i.d. CN(0, alpha^2) entries, the same
    normalisation used by the virtual-channel estimator.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    m, t_k = alloc.m, alloc.t_k
    gamma = alloc.gamma_eff
    if gamma == 0:
        return RateEstimate(0.0, 0.0)
    a2 = m * alloc.rho_p / (m * alloc.rho_p + alloc.noise_var)
    f_hat = math.sqrt(a2) * draw_rayleigh_channels(trials, m, rng)
    energy = np.sum(np.abs(f_hat) ** 2, axis=1)
    samples = (1.0 - m / t_k) * np.log2(1.0 + gamma * energy)
    return _mean_stderr(samples)


@dataclass(frozen=True)
class FramePowerCheck:
    ok: bool
    slack: float

    @property
    def excess(self) -> float:
        return max(0.0, -self.slack)


def check_frame_power(q: int, alloc: PowerAllocation, s: int, rho: float,
                      atol: float = _CONSTRAINT_ATOL) -> FramePowerCheck:
    """Frame constraint ``q M (rho_p + rho_d (T_K - M)) <= rho s``; violations are reported."""
    slack = rho * s - q * alloc.energy()
    return FramePowerCheck(bool(slack >= -atol), float(slack))


def equal_split(rho, t_k, m) -> tuple:
    """Naive allocation with ``rho_p = rho_d`` meeting the budget with equality."""
    x = rho * t_k / (m * (t_k - m + 1))
    return x, x
