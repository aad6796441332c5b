"""Block-fading channel processes, coherence schedules and device scheduling."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, SchedulingError
from .phymath import draw_rayleigh_channels

# Coherence time used for static devices; longer than any frame.
STATIC_COHERENCE = 2**31 - 1


class DeviceClass(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class DeviceProfile:
    id: int
    device_class: DeviceClass
    coherence_time: int
    dataset_size: int

    def __post_init__(self):
        if self.coherence_time < 1:
            raise DomainError(f"device {self.id}: coherence time must be >= 1")
        if self.dataset_size < 0:
            raise DomainError(f"device {self.id}: dataset size must be >= 0")

    @classmethod
    def static(cls, id: int, dataset_size: int) -> "DeviceProfile":
        return cls(id, DeviceClass.STATIC, STATIC_COHERENCE, dataset_size)

    @classmethod
    def dynamic(cls, id: int, coherence_time: int, dataset_size: int) -> "DeviceProfile":
        return cls(id, DeviceClass.DYNAMIC, coherence_time, dataset_size)

    @property
    def is_static(self) -> bool:
        return self.device_class is DeviceClass.STATIC


@dataclass(frozen=True)
class CoherenceSchedule:
    """Block start slots of every device over one frame of ``frame_len`` slots."""

    frame_len: int
    boundaries: dict

    def blocks(self, device_id: int) -> list:
        starts = self.boundaries[device_id]
        ends = list(starts[1:]) + [self.frame_len]
        return [range(a, b) for a, b in zip(starts, ends)]

    def block_index(self, device_id: int, slot: int) -> int:
        return int(np.searchsorted(self.boundaries[device_id], slot, side="right") - 1)


def block_boundaries(coherence_time: int, frame_len: int, offset: int = 0) -> tuple:
    """Start slots of the coherence blocks intersecting ``[0, frame_len)``.

    ``offset`` is how many slots of the device's current block have already
    elapsed when the frame starts (``0 <= offset < coherence_time``).
    """
    if frame_len < 1:
        raise DomainError(f"frame length must be >= 1, got {frame_len}")
    if not 0 <= offset < coherence_time:
        raise DomainError("offset must lie inside one coherence block")
    starts = [0]
    nxt = coherence_time - offset
    while nxt < frame_len:
        starts.append(nxt)
        nxt += coherence_time
    return tuple(starts)


def coherence_schedule(profiles: Sequence[DeviceProfile], frame_len: int,
                       offsets: dict | None = None) -> CoherenceSchedule:
    offsets = offsets or {}
    return CoherenceSchedule(
        frame_len,
        {p.id: block_boundaries(p.coherence_time, frame_len, offsets.get(p.id, 0))
         for p in profiles},
    )


def channel_process(profile: DeviceProfile, m: int, frame_len: int, rng,
                    offset: int = 0) -> list:
    """Channel realisations of one device over a frame.

    Returns ``[(range_of_slots, h), ...]``; ``h`` is constant inside a block
    and drawn afresh for every block.
    """
    starts = block_boundaries(profile.coherence_time, frame_len, offset)
    ends = list(starts[1:]) + [frame_len]
    draws = draw_rayleigh_channels(len(starts), m, rng)
    return [(range(a, b), draws[i]) for i, (a, b) in enumerate(zip(starts, ends))]


def schedule_devices(pool: Sequence[DeviceProfile], k_total: int, k_static: int,
                     rng) -> tuple:
    """Pick the round's cohort ``(K_S, K_D)``.

    Static devices are taken first (lowest ids) since they are always
    eligible; the remaining seats are drawn uniformly from the dynamic
    devices.  ``K_D`` comes back sorted by descending coherence time so the
    last entry is the fastest-fading device.
    """
    if not 0 <= k_static <= k_total:
        raise SchedulingError("need 0 <= k_static <= k_total")
    statics = sorted((p for p in pool if p.is_static), key=lambda p: p.id)
    dynamics = sorted((p for p in pool if not p.is_static), key=lambda p: p.id)
    k_dynamic = k_total - k_static
    if len(statics) < k_static:
        raise SchedulingError(
            f"pool has {len(statics)} static devices, {k_static} requested",
            DeviceClass.STATIC)
    if len(dynamics) < k_dynamic:
        raise SchedulingError(
            f"pool has {len(dynamics)} dynamic devices, {k_dynamic} requested",
            DeviceClass.DYNAMIC)
    chosen_static = tuple(statics[:k_static])
    if k_dynamic == len(dynamics):
        picked = dynamics
    else:
        idx = np.sort(rng.choice(len(dynamics), size=k_dynamic, replace=False))
        picked = [dynamics[i] for i in idx]
    chosen_dynamic = tuple(sorted(picked, key=lambda p: (-p.coherence_time, p.id)))
    times = [p.coherence_time for p in chosen_dynamic]
    if len(set(times)) != len(times):
        warnings.warn("dynamic devices in the cohort share a coherence time",
                      stacklevel=2)
    return chosen_static, chosen_dynamic


def fastest_coherence(dynamic: Sequence[DeviceProfile]) -> int | None:
    """Smallest coherence time among dynamic devices, or None if there are none."""
    times = [p.coherence_time for p in dynamic if not p.is_static]
    return min(times) if times else None


def pilot_positions(frame_len: int, m: int, t_k: int | None,
                    flexible: bool = False) -> np.ndarray:
    """Boolean mask over the frame's slots marking pilot-bearing slots.

    Every length-``t_k`` sub-block starts with ``m`` pilot slots.  Under the
    default alignment ``frame_len`` must be a multiple of ``t_k``; with
    ``flexible=True`` a trailing partial sub-block too short to hold a pilot
    and at least one data slot is sent as data only.
    """
    out = np.zeros(frame_len, dtype=bool)
    if t_k is None:
        return out
    if m >= t_k:
        raise ConfigurationError(
            f"pilot length M={m} does not fit a coherence block T_K={t_k}")
    remainder = frame_len % t_k
    if remainder and not flexible:
        raise ConfigurationError(
            f"frame of {frame_len} slots is not a multiple of T_K={t_k}; "
            "enable flexible placement or pad the frame")
    pos = np.arange(frame_len)
    out = (pos % t_k) < m
    if flexible and 0 < remainder <= m:
        out[frame_len - remainder:] = False
    return out


def pilot_duty_cycle(dynamic: Sequence[DeviceProfile], m: int,
                     frame_len: int | None = None, flexible: bool = False) -> float:
    """Pilot overhead: pilot-bearing slots over total downlink slots."""
    t_k = fastest_coherence(dynamic)
    if t_k is None:
        return 0.0
    if m >= t_k:
        raise ConfigurationError(
            f"pilot length M={m} does not fit a coherence block T_K={t_k}")
    if frame_len is None:
        frame_len = t_k
    return float(pilot_positions(frame_len, m, t_k, flexible).sum() / frame_len)


def padded_frame_len(n_symbols: int, t_k: int | None) -> int:
    """Frame length holding ``n_symbols`` rounded up to whole sub-blocks."""
    if t_k is None:
        return n_symbols
    return -(-n_symbols // t_k) * t_k


def coherence_for_lambda(m: int, lam: float) -> int:
    """Sub-block length giving pilot overhead closest to ``lam`` for ``m`` pilots."""
    if not 0 < lam < 1:
        raise ConfigurationError(f"lambda must lie in (0, 1), got {lam}")
    t_k = max(m + 1, int(round(m / lam)))
    return t_k
