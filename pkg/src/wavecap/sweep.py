"""Phase-sweep and free-running capture orchestration.

A calibration sweep steps the source's phase by dt per frame while capturing
at a fixed clock phase; the relock dead time after each phase step advances
absolute time but not the phase bookkeeping.  Continuous runs capture every T
with no dead time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chain import (
    CaptureFrame,
    ChainInstance,
    ChainSpec,
    RegisterBank,
    RegisterSpec,
    capture,
    sample_chain,
    sample_registers,
    validate_config,
)
from .units import fs_to_ps, ps_to_fs
from .waveform import DigitalWaveform, PllOutputSpec, make_pll_output, shift_phase

__all__ = ["SweepSpec", "SweepDataset", "run_sweep", "run_continuous"]


class SweepError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    """One dynamic-phase calibration sweep."""

    source: PllOutputSpec
    t_capture_ps: float = 5_000.0
    dt_ps: float = 78.0
    n_steps: int = 512
    relock_dead_cycles: tuple[int, int] = (2, 40)
    crystal_jitter_sigma_ps: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dt_ps < 0:
            raise SweepError("phase increment must be >= 0")
        if self.n_steps < 2:
            raise SweepError("a sweep needs at least 2 steps")
        lo, hi = self.relock_dead_cycles
        if lo < 2 or hi < lo:
            raise SweepError("dead-cycle range must satisfy 2 <= min <= max")
        if self.crystal_jitter_sigma_ps < 0:
            raise SweepError("crystal jitter sigma must be >= 0")

    def min_resolvable_gap_ps(self) -> float:
        """Shortest level run of the source: the pulse-survival budget."""
        p = self.source.period_ps
        return min(self.source.duty_cycle, 1.0 - self.source.duty_cycle) * p


@dataclass(frozen=True)
class SweepDataset:
    """Ordered frames plus the specs that produced them."""

    frames: tuple[CaptureFrame, ...]
    chain_spec: ChainSpec
    reg_spec: RegisterSpec
    sweep_spec: Optional[SweepSpec] = None
    t_capture_ps: Optional[float] = None  # continuous runs: frame period

    def __post_init__(self):
        ks = {f.k for f in self.frames}
        if len(ks) > 1:
            raise SweepError("frames have inconsistent chain lengths")

    @property
    def k(self) -> int:
        return self.frames[0].k

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def bits_matrix(self) -> np.ndarray:
        return np.stack([f.bits for f in self.frames])


def run_sweep(
    spec: SweepSpec,
    chain: ChainSpec | ChainInstance,
    regs: RegisterSpec | RegisterBank,
) -> SweepDataset:
    """Capture n_steps frames, the n-th of the source shifted by n*dt."""
    chain_inst = chain if isinstance(chain, ChainInstance) else sample_chain(chain)
    chain_spec = chain_inst.spec
    reg_bank = regs if isinstance(regs, RegisterBank) else sample_registers(regs, chain_spec.k)
    reg_spec = reg_bank.spec

    report = validate_config(chain_spec, spec.t_capture_ps, spec.min_resolvable_gap_ps())
    if not report.ok:
        raise SweepError("invalid configuration: " + "; ".join(report.violations))

    # Fixed capture phase t0, far enough in that the look-back window (plus
    # the largest accumulated shift) stays inside the generated waveform.
    lookback_ps = chain_spec.k * max(chain_spec.tau_rise_ps, chain_spec.tau_fall_ps) * (
        1 + 6 * chain_spec.tau_sigma_ps / max(chain_spec.tau_rise_ps, 1e-9)
    )
    total_shift_ps = spec.dt_ps * (spec.n_steps - 1)
    margin_ps = chain_spec.entry_delay_ps + 10 * spec.crystal_jitter_sigma_ps + 1_000
    t0_ps = lookback_ps + total_shift_ps + margin_ps
    duration_ps = t0_ps + margin_ps
    base = make_pll_output(spec.source, duration_ps)

    rng = np.random.default_rng(spec.seed)
    dead_lo, dead_hi = spec.relock_dead_cycles
    t_abs_fs = ps_to_fs(t0_ps)
    t_cap_fs = ps_to_fs(spec.t_capture_ps)

    frames = []
    for n in range(spec.n_steps):
        if spec.crystal_jitter_sigma_ps > 0:
            jitter = float(rng.normal(0.0, spec.crystal_jitter_sigma_ps))
        else:
            jitter = 0.0
        dead = int(rng.integers(dead_lo, dead_hi + 1))
        w = shift_phase(base, n * spec.dt_ps)
        frame = capture(w, chain_inst, reg_bank, t0_ps, clock_jitter_ps=jitter, phase_index=n)
        # record absolute time including relock dead cycles; phase bookkeeping
        # is untouched because capture happens at a fixed clock phase
        t_abs_fs += dead * t_cap_fs
        frames.append(CaptureFrame(frame.bits, t_abs_fs, n))

    return SweepDataset(tuple(frames), chain_spec, reg_spec, spec)


def run_continuous(
    w: DigitalWaveform,
    chain: ChainSpec | ChainInstance,
    regs: RegisterSpec | RegisterBank,
    t_capture_ps: float,
    n_frames: int,
    t_start_ps: Optional[float] = None,
    crystal_jitter_sigma_ps: float = 0.0,
    seed: int = 0,
) -> SweepDataset:
    """Capture frame m at t_start + m*T with no dead time."""
    if n_frames < 1:
        raise SweepError("need at least one frame")
    chain_inst = chain if isinstance(chain, ChainInstance) else sample_chain(chain)
    reg_bank = regs if isinstance(regs, RegisterBank) else sample_registers(
        regs, chain_inst.spec.k
    )
    if t_start_ps is None:
        lo = w.domain_fs[0]
        lookback_ps = chain_inst.spec.k * chain_inst.spec.tau_rise_ps * 1.1
        t_start_ps = (0.0 if lo is None else fs_to_ps(lo)) + lookback_ps + 1_000

    rng = np.random.default_rng(seed)
    frames = []
    for m in range(n_frames):
        jitter = (
            float(rng.normal(0.0, crystal_jitter_sigma_ps))
            if crystal_jitter_sigma_ps > 0
            else 0.0
        )
        frames.append(
            capture(
                w,
                chain_inst,
                reg_bank,
                t_start_ps + m * t_capture_ps,
                clock_jitter_ps=jitter,
                phase_index=m,
            )
        )
    return SweepDataset(
        tuple(frames),
        chain_inst.spec,
        reg_bank.spec,
        None,
        t_capture_ps=t_capture_ps,
    )
