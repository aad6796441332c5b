"""Translate PHY statistics into parameter-level masks and downlink noise.

Parameters are mapped to frame slots in index order, one real parameter per
slot.  Dynamic devices under product superposition cannot decode the
parameters carried in pilot-phase slots; those coordinates are reported as
missing rather than zeroed so that the fill strategies can tell "received 0"
from "not received".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .fading import DeviceClass
from .power import additive_effective_snr, additive_shrinkage, effective_snr
from .signaling import Scheme, estimation_error_variance


@dataclass(frozen=True)
class MaskBits:
    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=bool))

    @classmethod
    def full(cls, d: int) -> "MaskBits":
        return cls(np.ones(d, dtype=bool))

    @property
    def d(self) -> int:
        return self.bits.size

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    @property
    def missing(self) -> np.ndarray:
        return np.flatnonzero(~self.bits)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


def build_mask(d: int, m: int, t_k: int | None, device_class: DeviceClass,
               flexible: bool = False, decodable_subblocks=()) -> MaskBits:
    """Positional reception mask.

    Static devices receive every parameter.  For dynamic devices, index ``p``
    is lost when it falls in a pilot phase, ``p mod T_K < M``.  With
    ``flexible`` placement a trailing partial sub-block too short for a pilot
    is data-only and also lost.  Sub-blocks listed in ``decodable_subblocks``
    (channel unchanged since the previous estimate) are received in full.
    """
    if d < 1:
        raise DimensionError("model dimension must be >= 1")
    if device_class is DeviceClass.STATIC or t_k is None:
        return MaskBits.full(d)
    if t_k <= m:
        raise DomainError(f"T_K={t_k} must exceed M={m}")
    pos = np.arange(d)
    lost = (pos % t_k) < m
    tail = d % t_k
    if flexible and 0 < tail <= m:
        lost[d - tail:] = True
    for q in decodable_subblocks:
        lost[q * t_k:(q + 1) * t_k] = False
    return MaskBits(~lost)


@dataclass(frozen=True)
class DownlinkNoiseSpec:
    sigma2_static: float
    sigma2_dynamic: float

    def __post_init__(self):
        if not 0 <= self.sigma2_static < self.sigma2_dynamic:
            raise DomainError(
                f"need 0 <= sigma_S^2 < sigma_D^2, got {self.sigma2_static}, "
                f"{self.sigma2_dynamic}")


def noise_spec(snr_linear, est_error_var, m, rho_p, rho_d, noise_var,
               calibration=1.0) -> DownlinkNoiseSpec:
    """Parameter-domain noise variances for static and dynamic receivers.

    Analog mapping: variance is ``calibration / SNR``.  The dynamic SNR is
    the effective SNR after estimation, further penalised by ``1 + sigma_e^2/M``.
    ``snr_linear`` is the static receiver's SNR; with ``rho_d / sigma_w^2``
    the two variances meet in the perfect-CSI limit.
    """
    if snr_linear <= 0:
        raise DomainError("SNR must be positive")
    s2 = calibration / snr_linear
    gamma = effective_snr(rho_p, rho_d, m, noise_var)
    if gamma <= 0:
        raise DomainError("dynamic effective SNR is zero; no data power")
    d2 = calibration * (1.0 + est_error_var / m) / gamma
    if not s2 < d2:
        raise DomainError(
            f"static noise {s2:.6g} is not below dynamic noise {d2:.6g}; "
            "static SNR must not exceed the perfect-CSI limit rho_d / sigma_w^2")
    return DownlinkNoiseSpec(s2, d2)


def additive_noise(m, rho_p, rho_d, noise_var, calibration=1.0) -> tuple:
    """Dynamic-receiver parameter noise under additive superposition.

    Returns ``(pilot_slot_variance, data_slot_variance)``.
    """
    err = m * (1.0 - additive_shrinkage(rho_p, rho_d, m, noise_var))
    g_pilot, g_data = additive_effective_snr(rho_p, rho_d, m, noise_var)
    penalty = 1.0 + err / m
    return calibration * penalty / g_pilot, calibration * penalty / g_data


@dataclass(frozen=True)
class ReceivedModel:
    """Noisy broadcast restricted to the received support."""

    d: int
    indices: np.ndarray
    values: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        keep = np.ones(self.d, dtype=bool)
        keep[self.indices] = False
        return np.flatnonzero(keep)


def corrupt_broadcast(theta, mask: MaskBits, sigma2, rng) -> ReceivedModel:
    """Add N(0, sigma2) to every received coordinate; drop the rest.

    ``sigma2`` may be a scalar or a per-coordinate array of length ``d``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mask.d,):
        raise DimensionError(f"model length {theta.shape} != mask length {mask.d}")
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 < 0):
        raise DomainError("noise variance must be non-negative")
    idx = mask.support
    if sigma2.ndim:
        if sigma2.shape != (mask.d,):
            raise DimensionError("per-coordinate noise must have length d")
        sd = np.sqrt(sigma2[idx])
    else:
        sd = float(np.sqrt(sigma2))
    values = theta[idx] + sd * rng.standard_normal(idx.size)
    return ReceivedModel(mask.d, idx, values)


@dataclass(frozen=True)
class DownlinkImpairment:
    mask: MaskBits
    sigma2: object  # float or per-coordinate array

    @property
    def mean_sigma2(self) -> float:
        return float(np.mean(self.sigma2))


def plan_downlink(scheme: Scheme, device_class: DeviceClass, d: int, m: int,
                  t_k: int | None, rho_p: float, rho_d: float, noise_var: float,
                  calibration: float = 1.0, flexible: bool = False,
                  decodable_subblocks=()) -> DownlinkImpairment:
    """Mask and parameter noise a device sees in one round under ``scheme``.

    All schemes share the same ``(rho_p, rho_d)``.  Static devices always
    get the full model at the static noise level.
    """
    scheme = Scheme(scheme)
    static_var = calibration * noise_var / rho_d
    if device_class is DeviceClass.STATIC or t_k is None:
        return DownlinkImpairment(MaskBits.full(d), static_var)
    spec = noise_spec(rho_d / noise_var, estimation_error_variance(m, rho_p, noise_var),
                      m, rho_p, rho_d, noise_var, calibration)
    if scheme is Scheme.CONVENTIONAL:
        return DownlinkImpairment(MaskBits.full(d), spec.sigma2_dynamic)
    if scheme is Scheme.PRODUCT:
        mask = build_mask(d, m, t_k, device_class, flexible, decodable_subblocks)
        return DownlinkImpairment(mask, spec.sigma2_dynamic)
    pilot_var, data_var = additive_noise(m, rho_p, rho_d, noise_var, calibration)
    in_pilot = (np.arange(d) % t_k) < m
    return DownlinkImpairment(MaskBits.full(d), np.where(in_pilot, pilot_var, data_var))
