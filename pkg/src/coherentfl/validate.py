"""Named physical-layer and power-allocation self-checks."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .phymath import draw_rayleigh_channels, stream, unit_phase_symbols, unitary_pilot
from .power import effective_snr, inverse_snr_objective, optimal_allocation
from .signaling import (
    estimation_error_variance, mixing_matrix, receive, shrinkage, simulate_data_snr,
    simulate_virtual_channel, static_decode_pilot_phase,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def check_unitary(m: int) -> CheckResult:
    eye = np.eye(m)
    worst = 0.0
    for a in (unitary_pilot(m), mixing_matrix(m)):
        worst = max(worst, float(np.max(np.abs(a @ a.conj().T - eye))))
    return CheckResult(f"unitary[M={m}]", worst < 1e-12, f"max |A A^H - I| = {worst:.3e}")


def check_mmse_variance(m, rho_p, trials, seed, shrinkage_scale=1.0,
                        rtol=0.02) -> CheckResult:
    """Empirical per-entry error energy against ``sigma_e^2 / M``."""
    run = simulate_virtual_channel(m, rho_p, 1.0, trials, stream(seed, "mmse", m, int(rho_p * 1000)),
                                   shrinkage_scale=shrinkage_scale)
    empirical = float(np.mean(np.sum(np.abs(run.error) ** 2, axis=1))) / m
    predicted = estimation_error_variance(m, rho_p, 1.0) / m
    rel = abs(empirical - predicted) / predicted
    return CheckResult(f"mmse_variance[M={m},rho_p={rho_p:g}]", rel <= rtol,
                       f"empirical {empirical:.6g} predicted {predicted:.6g} rel {rel:.3%}")


def check_mmse_orthogonality(m, rho_p, trials, seed, shrinkage_scale=1.0,
                             atol=0.02) -> CheckResult:
    """The estimation error is uncorrelated with the estimate."""
    run = simulate_virtual_channel(m, rho_p, 1.0, trials, stream(seed, "orth", m),
                                   shrinkage_scale=shrinkage_scale)
    cross = np.mean(run.error * np.conj(run.g_hat), axis=0)
    scale = math.sqrt(float(np.mean(np.abs(run.g_hat) ** 2)) *
                      float(np.mean(np.abs(run.error) ** 2)))
    corr = float(np.max(np.abs(cross))) / scale
    return CheckResult(f"mmse_orthogonality[M={m},rho_p={rho_p:g}]", corr <= atol,
                       f"max normalised cross-correlation {corr:.3e}")


def check_static_decode(m, instances, seed, tol=1e-10) -> CheckResult:
    """Noiseless pilot-phase decoding returns ``sqrt(rho_p) h^H P`` exactly."""
    rng = stream(seed, "static-decode", m)
    pilot = unitary_pilot(m)
    u = mixing_matrix(m)
    rho_p = 2.5
    h = draw_rayleigh_channels(instances, m, rng)
    p = math.sqrt(m) * unit_phase_symbols((instances, m), rng)[:, :, None] * u
    y = receive(math.sqrt(rho_p) * (p @ pilot), h, 0.0, rng)
    got = static_decode_pilot_phase(y, h, pilot, rho_p)
    want = math.sqrt(rho_p) * np.einsum("nm,nmk->nk", np.conj(h), p)
    err = float(np.max(np.abs(got - want)))
    return CheckResult(f"static_decode[M={m}]", err <= tol, f"max abs error {err:.3e}")


def check_data_snr(m, rho_p, rho_d, trials, seed, rtol=0.05) -> CheckResult:
    measured = simulate_data_snr(m, rho_p, rho_d, 1.0, trials, stream(seed, "data-snr", m))
    predicted = effective_snr(rho_p, rho_d, m, 1.0) * m * shrinkage(m, rho_p, 1.0)
    rel = abs(measured - predicted) / predicted
    return CheckResult(f"data_snr[M={m}]", rel <= rtol,
                       f"measured {measured:.6g} predicted {predicted:.6g} rel {rel:.3%}")


def check_allocation_grid(ms=(2, 4, 8), extra=(4, 10, 30), rhos=(1.0, 10.0, 100.0),
                          points=10_000) -> CheckResult:
    """Closed-form allocation against a dense grid search over ``rho_d``."""
    worst_gap = -math.inf
    worst_eq = 0.0
    for m, dt, rho in itertools.product(ms, extra, rhos):
        t_k = m + dt
        alloc = optimal_allocation(rho, t_k, m, 1.0)
        hi = rho * t_k / (m * (t_k - m))
        grid = np.linspace(0.0, hi, points + 1)[1:]
        best = float(np.min(inverse_snr_objective(grid, rho, t_k, m, 1.0)))
        gap = float(inverse_snr_objective(alloc.rho_d, rho, t_k, m, 1.0)) - best
        worst_gap = max(worst_gap, gap)
        worst_eq = max(worst_eq, abs(alloc.energy() - rho * t_k))
    ok = worst_gap <= 1e-9 and worst_eq <= 1e-9
    return CheckResult("power_allocation_grid", ok,
                       f"max objective excess over grid {worst_gap:.3e}, "
                       f"max constraint residual {worst_eq:.3e}")


def check_worked_allocation() -> CheckResult:
    a = optimal_allocation(1.0, 6, 2, 1.0)
    err = max(abs(a.rho_d - 7 / 12), abs(a.rho_p - 2 / 3))
    return CheckResult("power_allocation_worked_point", err <= 1e-9,
                       f"rho_d={a.rho_d:.12g} rho_p={a.rho_p:.12g}")


def run_checks(cfg) -> list:
    """Every named check for the configured antenna count."""
    m = cfg["antennas"]
    trials = cfg["phy_validate"]["trials"]
    scale = cfg["phy_validate"]["mutate_shrinkage"]
    seed = cfg["seed"]
    out = [check_unitary(m)]
    for rho_p in (0.5, 1.0, 10.0):
        out.append(check_mmse_variance(m, rho_p, trials, seed, scale))
    out.append(check_mmse_orthogonality(m, 1.0, trials, seed, scale))
    out.append(check_static_decode(m, 1000, seed))
    out.append(check_data_snr(m, 1.0, 1.0, trials, seed))
    out.append(check_allocation_grid())
    out.append(check_worked_allocation())
    return out
