"""Downlink frame construction, reception and per-device decoding.

Three schemes are supported: an orthogonal pilot-then-data baseline, product
superposition (pilot-phase parameters multiply the pilot) and additive
superposition (parameters are added on top of the pilot).

Symbol embedding for product superposition
------------------------------------------
The pilot-phase parameter matrix is ``P = sqrt(M) * diag(s_1..s_M) @ U`` with
``U`` a fixed unitary mixing matrix, and data-phase column ``j`` is
``s_{M+j} * e_{j mod M}``.  For unit-power symbols ``P`` has the same average
energy as a matrix of i.i.d. CN(0, 1) entries, and the normalised virtual
channel ``g = h^H P / sqrt(M)`` has i.i.d. unit-variance entries.  All
estimates below refer to ``g``; its MMSE error energy ``E||g - g_hat||^2``
equals ``M sigma_w^2 / (M rho_p + sigma_w^2)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, PowerConstraintError
from .phymath import (
    awgn, draw_rayleigh_channels, hermitian, unit_phase_symbols, unitary_pilot,
)

ERASURE_THRESHOLD = 1e-9


class Scheme(str, enum.Enum):
    CONVENTIONAL = "conventional"
    PRODUCT = "product"
    ADDITIVE = "additive"


def mixing_matrix(m: int) -> np.ndarray:
    """Fixed unitary used to spread pilot-phase symbols across antennas.

    A half-bin shifted DFT, so that ``U @ X_p`` is not a permutation.
    """
    if m < 1:
        raise DimensionError("mixing dimension must be >= 1")
    j = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(j + 0.5, j) / m) / np.sqrt(m)


def shrinkage(m: int, rho_p: float, noise_var: float) -> float:
    """MMSE shrinkage ``alpha^2 = M rho_p / (M rho_p + sigma_w^2)``."""
    return m * rho_p / (m * rho_p + noise_var)


def estimation_error_variance(m: int, rho_p: float, noise_var: float) -> float:
    """Total MMSE error energy ``M sigma_w^2 / (M rho_p + sigma_w^2)``."""
    if rho_p == 0:
        return float(m)
    return m * noise_var / (m * rho_p + noise_var)


@dataclass(frozen=True)
class VirtualChannelEstimate:
    estimate: np.ndarray
    error_variance: float
    shrinkage: float

    @property
    def m(self) -> int:
        return self.estimate.shape[-1]

    @property
    def per_entry_error_variance(self) -> float:
        return self.error_variance / self.m


@dataclass(frozen=True)
class DataDecode:
    symbols: np.ndarray
    gains: np.ndarray
    erasures: np.ndarray
    effective_noise_var: float


def _check_powers(rho_p, rho_d):
    if rho_p < 0 or rho_d < 0:
        raise DomainError("powers must be non-negative")


def build_baseline_block(params, pilot, rho_p, rho_d, t_c, rho=None, atol=1e-9):
    """Orthogonal block ``[sqrt(rho_p) X_p, sqrt(rho_d) X_d]`` of ``t_c`` slots.

    When the budget ``rho`` is given the energy constraint
    ``rho_p M + rho_d (t_c - M) <= rho t_c`` is enforced.
    """
    _check_powers(rho_p, rho_d)
    pilot = np.asarray(pilot)
    params = np.asarray(params)
    m = pilot.shape[0]
    if pilot.shape != (m, m):
        raise DimensionError("pilot must be square")
    if t_c <= m:
        raise DimensionError(f"coherence block T_c={t_c} leaves no data slots for M={m}")
    if params.shape != (m, t_c - m):
        raise DimensionError(f"data matrix must be {m}x{t_c - m}, got {params.shape}")
    if rho is not None:
        used = rho_p * m + rho_d * (t_c - m)
        excess = used - rho * t_c
        if excess > atol:
            raise PowerConstraintError(
                f"block energy {used:.6g} exceeds budget {rho * t_c:.6g} by {excess:.6g}",
                excess)
    return np.concatenate([np.sqrt(rho_p) * pilot, np.sqrt(rho_d) * params], axis=1)


def build_superposition_block(params_pilot_phase, params_data_phase, pilot, rho_p, rho_d):
    """Product-superposition sub-block ``[sqrt(rho_p) P X_p, sqrt(rho_d) P D]``."""
    _check_powers(rho_p, rho_d)
    p = np.asarray(params_pilot_phase)
    d = np.asarray(params_data_phase)
    pilot = np.asarray(pilot)
    m = pilot.shape[-1]
    if pilot.shape != (m, m) or p.shape[-2:] != (m, m) or d.shape[-2] != m:
        raise DimensionError(
            f"inconsistent shapes: pilot {pilot.shape}, pilot-phase {p.shape}, "
            f"data-phase {d.shape}")
    return np.concatenate([np.sqrt(rho_p) * (p @ pilot), np.sqrt(rho_d) * (p @ d)], axis=-1)


def build_additive_block(params, pilot, rho_p, rho_d):
    """Additive superposition: the pilot is added onto the first ``M`` parameter columns.

    The parameters sent during the pilot phase see the pilot as
    interference at any receiver that does not know its channel exactly.
    """
    _check_powers(rho_p, rho_d)
    params = np.asarray(params)
    pilot = np.asarray(pilot)
    m = pilot.shape[-1]
    if pilot.shape != (m, m) or params.shape[-2] != m or params.shape[-1] < m:
        raise DimensionError(
            f"parameter matrix {params.shape} incompatible with {m}x{m} pilot")
    out = np.sqrt(rho_d) * params.astype(complex)
    out[..., :m] += np.sqrt(rho_p) * pilot
    return out


@dataclass(frozen=True)
class SubBlockFrame:
    pilot: np.ndarray
    pilot_phase_params: np.ndarray
    data_phase_params: np.ndarray
    rho_p: float
    rho_d: float
    scheme: Scheme = Scheme.PRODUCT

    def __post_init__(self):
        _check_powers(self.rho_p, self.rho_d)
        m = self.pilot.shape[0]
        if self.pilot_phase_params.shape != (m, m):
            raise DimensionError("pilot-phase parameters must be M x M")
        if self.data_phase_params.shape[0] != m:
            raise DimensionError("data-phase parameters must have M rows")

    @property
    def length(self) -> int:
        return self.pilot.shape[0] + self.data_phase_params.shape[1]

    def transmit(self) -> np.ndarray:
        if self.scheme is Scheme.PRODUCT:
            return build_superposition_block(self.pilot_phase_params, self.data_phase_params,
                                             self.pilot, self.rho_p, self.rho_d)
        if self.scheme is Scheme.ADDITIVE:
            params = np.concatenate([self.pilot_phase_params, self.data_phase_params], axis=1)
            return build_additive_block(params, self.pilot, self.rho_p, self.rho_d)
        return build_baseline_block(self.data_phase_params, self.pilot, self.rho_p,
                                    self.rho_d, self.length)


def embed_symbols(symbols, m: int, t_k: int, mixing=None):
    """Map ``t_k`` symbols of one sub-block to ``(P, D)`` parameter matrices.

    Broadcasts over leading dimensions of ``symbols``.
    """
    symbols = np.asarray(symbols)
    if symbols.shape[-1] != t_k or t_k <= m:
        raise DimensionError(f"need {t_k} symbols with T_K > M={m}")
    u = mixing_matrix(m) if mixing is None else mixing
    head = symbols[..., :m]
    tail = symbols[..., m:]
    p = np.sqrt(m) * head[..., :, None] * u
    n_data = t_k - m
    spread = np.zeros((m, n_data))
    spread[np.arange(n_data) % m, np.arange(n_data)] = 1.0
    d = tail[..., None, :] * spread
    return p, d


def receive(transmit, channel, noise_var, rng):
    """Received row ``h^H X + w``."""
    transmit = np.asarray(transmit)
    channel = np.asarray(channel)
    if channel.shape[-1] != transmit.shape[-2]:
        raise DimensionError(
            f"channel length {channel.shape[-1]} != transmit rows {transmit.shape[-2]}")
    clean = np.einsum("...m,...mt->...t", np.conj(channel), transmit)
    return clean + awgn(clean.shape, noise_var, rng)


def static_decode_pilot_phase(y_pilot, channel, pilot, rho_p):
    """Remove the pilot by right-multiplying with ``X_p^H``.

    The result is ``sqrt(rho_p) h^H P + w'`` where ``w'`` has the same
    statistics as the receiver noise because ``X_p`` is unitary.
    """
    y_pilot = np.asarray(y_pilot)
    pilot = np.asarray(pilot)
    if np.asarray(channel).shape[-1] != pilot.shape[0]:
        raise DimensionError("channel and pilot dimensions differ")
    return y_pilot @ hermitian(pilot)


def demap_pilot_phase_symbols(rotated, channel, rho_p, mixing=None):
    """Recover ``s_1..s_M`` from the output of :func:`static_decode_pilot_phase`."""
    rotated = np.asarray(rotated)
    m = rotated.shape[-1]
    u = mixing_matrix(m) if mixing is None else mixing
    gain = np.sqrt(m * rho_p) * np.conj(np.asarray(channel))
    return (rotated @ hermitian(u)) / gain


def mmse_virtual_channel(y_pilot, rho_p, noise_var, m, pilot=None,
                         shrinkage_scale=1.0) -> VirtualChannelEstimate:
    """MMSE estimate of the normalised virtual channel from the pilot phase.

    ``shrinkage_scale`` exists only to inject a deliberately wrong estimator
    in negative-control checks; leave it at 1.
    """
    if rho_p < 0 or noise_var < 0:
        raise DomainError("powers and noise variance must be non-negative")
    if m < 1:
        raise DimensionError("m must be >= 1")
    y_pilot = np.asarray(y_pilot)
    if y_pilot.shape[-1] != m:
        raise DimensionError(f"pilot-phase observation must have {m} samples")
    if rho_p == 0:
        return VirtualChannelEstimate(np.zeros_like(y_pilot, dtype=complex), float(m), 0.0)
    pilot = unitary_pilot(m) if pilot is None else pilot
    z = (y_pilot @ hermitian(pilot)) / np.sqrt(m * rho_p)
    a2 = shrinkage(m, rho_p, noise_var)
    return VirtualChannelEstimate(a2 * shrinkage_scale * z,
                                  estimation_error_variance(m, rho_p, noise_var), a2)


def effective_noise_variance(m, rho_p, rho_d, noise_var) -> float:
    """``sigma_w^2 + M rho_d (1 - alpha^2)``: AWGN plus residual estimation error."""
    return noise_var + m * rho_d * (1.0 - shrinkage(m, rho_p, noise_var))


def coherent_data_decode(y_data, estimate: VirtualChannelEstimate, rho_d, noise_var,
                         rho_p=None) -> DataDecode:
    """Per-slot symbol estimates for the data phase given a virtual-channel estimate."""
    y_data = np.asarray(y_data)
    m = estimate.m
    n = y_data.shape[-1]
    g_hat = estimate.estimate[..., np.arange(n) % m]
    gains = np.sqrt(m * rho_d) * g_hat
    erasures = np.abs(g_hat) < ERASURE_THRESHOLD
    safe = np.where(erasures, 1.0, gains)
    symbols = np.where(erasures, 0.0, y_data / safe)
    a2 = estimate.shrinkage
    eff = noise_var + m * rho_d * (1.0 - a2)
    return DataDecode(symbols, gains, erasures, eff)


def static_data_decode(y_data, channel, pilot_phase_params, rho_d):
    """Data-phase decoding for a device with perfect CSI and known ``P``."""
    y_data = np.asarray(y_data)
    f = np.einsum("...m,...mk->...k", np.conj(channel), pilot_phase_params)
    m = f.shape[-1]
    n = y_data.shape[-1]
    return y_data / (np.sqrt(rho_d) * f[..., np.arange(n) % m])


# -- Monte Carlo drivers ----------------------------------------------------


@dataclass(frozen=True)
class VirtualChannelTrials:
    g: np.ndarray
    g_hat: np.ndarray
    error_variance: float
    shrinkage: float

    @property
    def error(self) -> np.ndarray:
        return self.g - self.g_hat


def simulate_virtual_channel(m, rho_p, noise_var, trials, rng, chunk=4096,
                             shrinkage_scale=1.0) -> VirtualChannelTrials:
    """End-to-end pilot-phase simulation: embed, transmit, receive, estimate."""
    pilot = unitary_pilot(m)
    u = mixing_matrix(m)
    gs, ghs = [], []
    est = None
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        h = draw_rayleigh_channels(n, m, rng)
        s = unit_phase_symbols((n, m), rng)
        p = np.sqrt(m) * s[:, :, None] * u
        x = np.sqrt(rho_p) * (p @ pilot)
        y = receive(x, h, noise_var, rng)
        est = mmse_virtual_channel(y, rho_p, noise_var, m, pilot, shrinkage_scale)
        gs.append(np.einsum("nm,nmk->nk", np.conj(h), p) / np.sqrt(m))
        ghs.append(est.estimate)
        done += n
    return VirtualChannelTrials(np.concatenate(gs), np.concatenate(ghs),
                                est.error_variance, est.shrinkage)


def simulate_data_snr(m, rho_p, rho_d, noise_var, trials, rng, chunk=4096) -> float:
    """Measured post-decoding SNR of one data slot after virtual-channel estimation.

    SNR is the ratio of mean useful power ``|gain * s|^2`` to the mean power
    of everything else in the received sample.
    """
    pilot = unitary_pilot(m)
    u = mixing_matrix(m)
    sig = 0.0
    err = 0.0
    done = 0
    t_k = 2 * m
    while done < trials:
        n = min(chunk, trials - done)
        h = draw_rayleigh_channels(n, m, rng)
        s = unit_phase_symbols((n, t_k), rng)
        p, d = embed_symbols(s, m, t_k, u)
        x = build_superposition_block(p, d, pilot, rho_p, rho_d)
        y = receive(x, h, noise_var, rng)
        est = mmse_virtual_channel(y[:, :m], rho_p, noise_var, m, pilot)
        dec = coherent_data_decode(y[:, m:], est, rho_d, noise_var)
        useful = dec.gains * s[:, m:]
        sig += float(np.sum(np.abs(useful) ** 2))
        err += float(np.sum(np.abs(y[:, m:] - useful) ** 2))
        done += n
    return sig / err


def simulate_additive_pilot_sinr(m, rho_p, rho_d, noise_var, trials, rng,
                                 chunk=4096) -> float:
    """Measured SINR of parameters sent during the pilot phase of an additive block.

    The dynamic receiver estimates ``h`` from the contaminated pilot,
    subtracts the estimated pilot contribution and decodes the parameter
    column.  Pilot energy per slot matches the product scheme (``M rho_p``).
    """
    pilot = unitary_pilot(m)
    a2 = m * rho_p / (m * rho_p + noise_var + m * rho_d)
    sig = 0.0
    err = 0.0
    done = 0
    while done < trials:
        n = min(chunk, trials - done)
        h = draw_rayleigh_channels(n, m, rng)
        params = np.sqrt(0.5) * (rng.standard_normal((n, m, m))
                                 + 1j * rng.standard_normal((n, m, m)))
        x = build_additive_block(params, pilot, m * rho_p, rho_d)
        y = receive(x, h, noise_var, rng)
        h_hat_row = a2 * (y @ hermitian(pilot)) / np.sqrt(m * rho_p)
        residual = y - np.sqrt(m * rho_p) * (h_hat_row @ pilot)
        useful = np.sqrt(rho_d) * np.einsum("nm,nmt->nt", h_hat_row, params)
        sig += float(np.sum(np.abs(useful) ** 2))
        err += float(np.sum(np.abs(residual - useful) ** 2))
        done += n
    return sig / err
