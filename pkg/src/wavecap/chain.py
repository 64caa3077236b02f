"""Carry-chain delay line and register capture.

A configured chain is sampled into per-element rise/fall delays.  Capturing a
waveform propagates each input edge down the chain at its polarity's speed;
when a faster trailing edge catches the edge ahead of it the pulse between
them has shrunk to nothing and both edges stop propagating (this is pulse
shrinking).  Registers sample each tap at the capture instant, perturbed by a
shared clock jitter and static per-register skew.

Two independent implementations of the capture are provided: ``capture``
(pair-collision event queue, vectorized sampling) and ``capture_oracle``
(element-by-element timeline reconstruction).  They must agree bit-exactly.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .units import FS_PER_PS, fs_to_ps, ps_to_fs
from .waveform import DigitalWaveform, reject_short_pulses

__all__ = [
    "MAX_CHAIN_LEN",
    "ChainSpec",
    "ChainInstance",
    "RegisterSpec",
    "RegisterBank",
    "CaptureFrame",
    "ConfigReport",
    "default_dnl_ramp",
    "validate_config",
    "sample_chain",
    "sample_registers",
    "capture",
    "capture_oracle",
]

# Device bound: the chain cannot exceed the height of the part.
MAX_CHAIN_LEN = 1740

RISING, FALLING = 1, 0


class ChainError(ValueError):
    pass


class LookbackError(ChainError):
    """Waveform is not defined early enough for the requested capture."""


def default_dnl_ramp(length: int = 10, start_factor: float = 3.0) -> np.ndarray:
    """Entry nonlinearity profile: delays start at ``start_factor`` times the
    element mean and decay linearly to 1x over ``length`` elements."""
    return np.linspace(start_factor, 1.0, length)


@dataclass(frozen=True)
class ChainSpec:
    """Statistical description of one carry chain."""

    k: int
    tau_rise_ps: float
    tau_fall_ps: float
    tau_sigma_ps: float = 0.0
    entry_delay_ps: float = 0.0
    entry_min_pulse_ps: float = 0.0
    dnl_ramp: Optional[tuple[float, ...]] = None
    seed: int = 0
    allow_inverted: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ChainError("chain must have at least one element")
        if self.tau_rise_ps <= 0 or self.tau_fall_ps <= 0:
            raise ChainError("element delays must be positive")
        if self.entry_delay_ps < 0 or self.entry_min_pulse_ps < 0:
            raise ChainError("entry parameters must be >= 0")
        if self.tau_sigma_ps < 0:
            raise ChainError("tau_sigma must be >= 0")
        if self.tau_rise_ps < self.tau_fall_ps and not self.allow_inverted:
            raise ChainError(
                "rise delay below fall delay; pass allow_inverted=True to override"
            )
        if self.dnl_ramp is not None:
            object.__setattr__(self, "dnl_ramp", tuple(float(x) for x in self.dnl_ramp))
            if len(self.dnl_ramp) > self.k:
                raise ChainError("dnl_ramp longer than the chain")

    def ramp_multipliers(self) -> np.ndarray:
        m = np.ones(self.k)
        if self.dnl_ramp is not None:
            m[: len(self.dnl_ramp)] = self.dnl_ramp
        return m


@dataclass(frozen=True)
class ConfigReport:
    ok: bool
    violations: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.ok


def validate_config(chain: ChainSpec, t_capture_ps: float, t_min_ps: float) -> ConfigReport:
    """Check the design constraints for continuous capture.

    Coverage uses the fall delay (the faster edge bounds how much history the
    chain holds); pulse survival bounds the accumulated rise/fall asymmetry.
    """
    if t_capture_ps <= 0:
        raise ChainError("capture period must be positive")
    violations = []
    coverage = chain.k * chain.tau_fall_ps
    if coverage < t_capture_ps:
        violations.append(
            f"coverage: K*tau_fall = {coverage:.1f} ps < capture period {t_capture_ps:.1f} ps"
        )
    shrink = chain.k * (chain.tau_rise_ps - chain.tau_fall_ps)
    if shrink >= t_min_ps:
        violations.append(
            f"pulse survival: K*(tau_rise-tau_fall) = {shrink:.1f} ps >= T_min {t_min_ps:.1f} ps"
        )
    if chain.k > MAX_CHAIN_LEN:
        violations.append(f"device bound: K = {chain.k} > {MAX_CHAIN_LEN}")
    return ConfigReport(not violations, tuple(violations))


@dataclass(frozen=True, eq=False)
class ChainInstance:
    """Sampled per-element delays with cumulative prefixes (femtoseconds)."""

    spec: ChainSpec
    tau_rise_fs: np.ndarray
    tau_fall_fs: np.ndarray
    prefix_rise_fs: np.ndarray = field(init=False, default=None)
    prefix_fall_fs: np.ndarray = field(init=False, default=None)

    def __post_init__(self):
        for arr in (self.tau_rise_fs, self.tau_fall_fs):
            if np.any(arr <= 0):
                raise ChainError("sampled element delays must be strictly positive")
        object.__setattr__(self, "prefix_rise_fs", np.cumsum(self.tau_rise_fs))
        object.__setattr__(self, "prefix_fall_fs", np.cumsum(self.tau_fall_fs))

    @property
    def k(self) -> int:
        return int(self.tau_rise_fs.size)

    def prefix_for(self, polarity: int) -> np.ndarray:
        return self.prefix_rise_fs if polarity == RISING else self.prefix_fall_fs


def _sample_delays(rng, mean_ps: float, ramp: np.ndarray, sigma_ps: float) -> np.ndarray:
    means_fs = mean_ps * ramp * FS_PER_PS
    if sigma_ps == 0:
        return np.round(means_fs).astype(np.int64)
    sigma_fs = sigma_ps * FS_PER_PS
    out = np.round(rng.normal(means_fs, sigma_fs)).astype(np.int64)
    bad = out <= 0
    while np.any(bad):  # truncate positive by rejection
        out[bad] = np.round(rng.normal(means_fs[bad], sigma_fs)).astype(np.int64)
        bad = out <= 0
    return out


def sample_chain(spec: ChainSpec) -> ChainInstance:
    """Draw one chain realization; deterministic per spec.seed."""
    rng = np.random.default_rng(spec.seed)
    ramp = spec.ramp_multipliers()
    rise = _sample_delays(rng, spec.tau_rise_ps, ramp, spec.tau_sigma_ps)
    fall = _sample_delays(rng, spec.tau_fall_ps, ramp, spec.tau_sigma_ps)
    return ChainInstance(spec, rise, fall)


@dataclass(frozen=True)
class RegisterSpec:
    clock_jitter_sigma_ps: float = 0.0
    skew_sigma_ps: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.clock_jitter_sigma_ps < 0 or self.skew_sigma_ps < 0:
            raise ChainError("register sigmas must be >= 0")


@dataclass(frozen=True, eq=False)
class RegisterBank:
    """Static per-register skews for one chain's registers."""

    spec: RegisterSpec
    skews_fs: np.ndarray

    @property
    def k(self) -> int:
        return int(self.skews_fs.size)


def sample_registers(spec: RegisterSpec, k: int) -> RegisterBank:
    rng = np.random.default_rng(spec.seed)
    if spec.skew_sigma_ps > 0:
        skews = np.round(rng.normal(0.0, spec.skew_sigma_ps * FS_PER_PS, size=k))
    else:
        skews = np.zeros(k)
    return RegisterBank(spec, skews.astype(np.int64))


@dataclass(frozen=True, eq=False)
class CaptureFrame:
    """One K-bit snapshot; bits[0] is tap 1, the most recent sample."""

    bits: np.ndarray
    capture_time_fs: int
    phase_index: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))

    @property
    def k(self) -> int:
        return int(self.bits.size)

    @property
    def capture_time_ps(self) -> float:
        return fs_to_ps(self.capture_time_fs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CaptureFrame):
            return NotImplemented
        return (
            self.k == other.k
            and bool(np.all(self.bits == other.bits))
            and self.capture_time_fs == other.capture_time_fs
            and self.phase_index == other.phase_index
        )


# ---------------------------------------------------------------------------
# capture: pair-collision propagation
# ---------------------------------------------------------------------------


def _max_catchup_fs(chain: ChainInstance) -> int:
    """Largest cumulative arrival-time gap one polarity can close on the other."""
    return int(np.max(np.abs(chain.prefix_rise_fs - chain.prefix_fall_fs)))


def _annihilation_elements(
    times_fs: np.ndarray, pols: np.ndarray, chain: ChainInstance
) -> np.ndarray:
    """First element (1-based) at which each edge is annihilated; 0 = survives.

    Adjacent edge pairs collide where the trailing edge's cumulative arrival
    time catches the leading one's; both are removed there, making their
    outer neighbors adjacent, which can collide further down.  Collisions are
    processed in order of collision element, which is consistent because a
    newly adjacent pair keeps its ordering up to the element that freed it.
    """
    n = times_fs.size
    out = np.zeros(n, dtype=np.int64)
    if n < 2:
        return out
    prev = np.arange(n) - 1
    nxt = np.arange(n) + 1
    alive = np.ones(n, dtype=bool)

    def first_crossing(i: int, j: int) -> int:
        gap = times_fs[j] - times_fs[i]
        d = chain.prefix_for(pols[j]) - chain.prefix_for(pols[i])
        g = gap + d
        hits = np.nonzero(g <= 0)[0]
        return int(hits[0]) + 1 if hits.size else 0

    heap: list[tuple[int, int, int]] = []
    for i in range(n - 1):
        c = first_crossing(i, i + 1)
        if c:
            heapq.heappush(heap, (c, i, i + 1))

    while heap:
        c, i, j = heapq.heappop(heap)
        if not (alive[i] and alive[j] and nxt[i] == j):
            continue
        out[i] = out[j] = c
        alive[i] = alive[j] = False
        p, q = prev[i], nxt[j]
        if p >= 0 and q < n:
            nxt[p], prev[q] = q, p
            c2 = first_crossing(p, q)
            if c2:
                heapq.heappush(heap, (c2, p, q))
    return out


def _window_edges(
    w: DigitalWaveform, chain: ChainInstance, sample_lo_fs: int, sample_hi_fs: int, entry_fs: int
) -> tuple[np.ndarray, np.ndarray, int]:
    """Edges that can influence any tap sample, plus the level they start from.

    Edges older than the slowest path are already past every tap at every
    sample, but they can still annihilate a younger edge mid-chain, so the
    window extends back by the maximum rise/fall catch-up.
    """
    max_delay = int(max(chain.prefix_rise_fs[-1], chain.prefix_fall_fs[-1]))
    lo = sample_lo_fs - entry_fs - max_delay
    if not w.covers_fs(lo, sample_hi_fs):
        raise LookbackError(
            f"waveform does not cover [{fs_to_ps(lo)}, {fs_to_ps(sample_hi_fs)}] ps"
        )
    times = w.edge_times_fs
    i0 = int(np.searchsorted(times, lo - _max_catchup_fs(chain), side="left"))
    base_level = w.initial_level if i0 == 0 else w.level_after(i0 - 1)
    sel = times[i0:]
    keep = sel <= sample_hi_fs
    sel = sel[keep]
    pols = np.empty(sel.size, dtype=np.int64)
    lvl = base_level
    for j in range(sel.size):
        lvl ^= 1
        pols[j] = RISING if lvl == 1 else FALLING
    return sel, pols, base_level


def capture(
    w: DigitalWaveform,
    chain: ChainInstance,
    regs: RegisterBank,
    t_ps: float,
    clock_jitter_ps: float = 0.0,
    phase_index: Optional[int] = None,
) -> CaptureFrame:
    """Register the chain state at capture time t.

    Bit k is the level of the entry-filtered waveform delayed by the entry
    gate plus the cumulative polarity-dependent element delays, sampled at
    t + clock_jitter + skew_k (post-edge convention at exact coincidence).
    """
    if regs.k != chain.k:
        raise ChainError("register bank length does not match chain")
    spec = chain.spec
    entry_fs = ps_to_fs(spec.entry_delay_ps)
    t_fs = ps_to_fs(t_ps) + ps_to_fs(clock_jitter_ps)
    samples = t_fs + regs.skews_fs  # (K,)
    s_lo, s_hi = int(samples.min()), int(samples.max())

    wf = reject_short_pulses(w, spec.entry_min_pulse_ps)
    times, pols, base_level = _window_edges(wf, chain, s_lo, s_hi, entry_fs)

    if times.size == 0:
        return CaptureFrame(np.full(chain.k, base_level, dtype=np.uint8), t_fs, phase_index)

    death = _annihilation_elements(times, pols, chain)
    k_idx = np.arange(1, chain.k + 1)

    # arrival[e, k] of edge e at tap k; edge present at taps k < death (1-based)
    arr_rise = times[:, None] + entry_fs + chain.prefix_rise_fs[None, :]
    arr_fall = times[:, None] + entry_fs + chain.prefix_fall_fs[None, :]
    arrivals = np.where((pols == RISING)[:, None], arr_rise, arr_fall)
    present = np.where(
        (death == 0)[:, None], True, k_idx[None, :] < death[:, None]
    )
    counted = present & (arrivals <= samples[None, :])
    counts = counted.sum(axis=0)
    bits = (base_level ^ (counts & 1)).astype(np.uint8)
    return CaptureFrame(bits, t_fs, phase_index)


# ---------------------------------------------------------------------------
# capture_oracle: element-by-element timeline reconstruction
# ---------------------------------------------------------------------------


def capture_oracle(
    w: DigitalWaveform,
    chain: ChainInstance,
    regs: RegisterBank,
    t_ps: float,
    clock_jitter_ps: float = 0.0,
    phase_index: Optional[int] = None,
) -> CaptureFrame:
    """Brute-force capture: walk every edge through every element in order,
    materialize each tap's local waveform, then sample it.  Shares no
    propagation code with ``capture``."""
    if regs.k != chain.k:
        raise ChainError("register bank length does not match chain")
    spec = chain.spec
    entry_fs = ps_to_fs(spec.entry_delay_ps)
    t_fs = ps_to_fs(t_ps) + ps_to_fs(clock_jitter_ps)
    samples = t_fs + regs.skews_fs
    s_lo, s_hi = int(samples.min()), int(samples.max())

    wf = reject_short_pulses(w, spec.entry_min_pulse_ps)
    max_delay = int(max(chain.prefix_rise_fs[-1], chain.prefix_fall_fs[-1]))
    window_lo = s_lo - entry_fs - max_delay
    if not wf.covers_fs(window_lo, s_hi):
        raise LookbackError("waveform does not cover the capture look-back window")
    keep_from = window_lo - _max_catchup_fs(chain)

    all_times = [int(x) for x in wf.edge_times_fs]
    i0 = 0
    while i0 < len(all_times) and all_times[i0] < keep_from:
        i0 += 1
    base_level = wf.initial_level if i0 == 0 else wf.level_after(i0 - 1)
    edges = []  # (arrival_fs, polarity)
    lvl = base_level
    for t_e in all_times[i0:]:
        lvl ^= 1
        if t_e <= s_hi:
            edges.append([t_e + entry_fs, RISING if lvl == 1 else FALLING])

    bits = np.empty(chain.k, dtype=np.uint8)
    for k in range(chain.k):
        tau_r = int(chain.tau_rise_fs[k])
        tau_f = int(chain.tau_fall_fs[k])
        for e in edges:
            e[0] += tau_r if e[1] == RISING else tau_f
        # drop colliding adjacent pairs, re-checking after each removal
        changed = True
        while changed:
            changed = False
            for i in range(len(edges) - 1):
                if edges[i + 1][0] <= edges[i][0]:
                    del edges[i : i + 2]
                    changed = True
                    break
        s_k = int(samples[k])
        level = base_level
        for arrival, pol in edges:
            if arrival <= s_k:
                level = 1 if pol == RISING else 0
            else:
                break
        bits[k] = level
    return CaptureFrame(bits, t_fs, phase_index)
