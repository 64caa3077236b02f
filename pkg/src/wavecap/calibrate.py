"""Recover chain timing from phase-sweep datasets.

The pipeline: smooth each frame, extract edge positions, track one edge
trajectory per polarity through the sweep (unwrapping source-period wraps),
pool positions per phase step across channels, and fit edge index against
unwrapped phase.  The reciprocal slope is the per-element delay; transposing
the same data gives the carry-index-to-time transfer function and its
uncertainty, whose RMS is the single-shot precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .chain import CaptureFrame
from .sweep import SweepDataset

__all__ = [
    "EdgeObservation",
    "TransferFunction",
    "CarryTimeFit",
    "CalibrationResult",
    "ShrinkResult",
    "smooth_bits",
    "extract_edges",
    "fit_carry_times",
    "build_transfer_function",
    "single_shot_precision",
    "shrink_analysis",
    "calibrate",
]

RISING, FALLING = "rising", "falling"

# One-sample index quantization floor (uniform distribution over one carry).
QUANT_FLOOR_CARRIES = 1.0 / math.sqrt(12.0)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeObservation:
    phase_shift_ps: float
    edge_index: int  # 1-based carry index
    polarity: str


def smooth_bits(bits: np.ndarray, min_run: int) -> np.ndarray:
    """Run-length smoothing: merge runs shorter than min_run into their
    surroundings, shortest first."""
    if min_run <= 1:
        return np.asarray(bits, dtype=np.uint8)
    runs: list[list[int]] = []  # [level, length]
    for b in np.asarray(bits, dtype=np.uint8):
        if runs and runs[-1][0] == b:
            runs[-1][1] += 1
        else:
            runs.append([int(b), 1])
    while len(runs) > 1:
        lengths = [r[1] for r in runs]
        shortest = min(lengths)
        if shortest >= min_run:
            break
        i = lengths.index(shortest)
        if 0 < i < len(runs) - 1:
            runs[i - 1][1] += runs[i][1] + runs[i + 1][1]
            del runs[i : i + 2]
        else:
            j = 1 if i == 0 else len(runs) - 2
            runs[j][1] += runs[i][1]
            del runs[i]
    out = np.empty(sum(r[1] for r in runs), dtype=np.uint8)
    pos = 0
    for level, length in runs:
        out[pos : pos + length] = level
        pos += length
    return out


def extract_edges(
    frame: CaptureFrame | np.ndarray,
    min_run: int = 1,
    phase_shift_ps: float = float("nan"),
) -> list[EdgeObservation]:
    """Edges of a smoothed frame.

    Index 1 is the most recent sample, so a rising edge (0 -> 1 in signal
    time) sits at k with bit_k = 1 and bit_{k+1} = 0.
    """
    if min_run < 1:
        raise CalibrationError("min_run must be >= 1")
    bits = frame.bits if isinstance(frame, CaptureFrame) else np.asarray(frame)
    b = smooth_bits(bits, min_run).astype(np.int8)
    d = b[:-1] - b[1:]  # +1 at rising (1 then 0), -1 at falling
    out = []
    for k in np.flatnonzero(d != 0):
        pol = RISING if d[k] > 0 else FALLING
        out.append(EdgeObservation(phase_shift_ps, int(k) + 1, pol))
    return out


# ---------------------------------------------------------------------------
# trajectory tracking and unwrapping
# ---------------------------------------------------------------------------


def _frame_edges(dataset: SweepDataset, min_run: int) -> list[tuple[int, float, list]]:
    if dataset.sweep_spec is None:
        raise CalibrationError("dataset has no sweep provenance (continuous run?)")
    dt = dataset.sweep_spec.dt_ps
    rows = []
    for f in dataset.frames:
        phi = f.phase_index * dt
        rows.append((f.phase_index, phi, extract_edges(f, min_run, phi)))
    return rows


def _estimate_step_carries(rows, polarity: str) -> float:
    """Median per-step index drop, from nearest-below matching of consecutive
    nonempty frames."""
    drops = []
    prev = None
    for _, _, edges in rows:
        idx = [e.edge_index for e in edges if e.polarity == polarity]
        if prev and idx:
            for x in prev:
                below = [x - y for y in idx if 0 < x - y]
                if below:
                    drops.append(min(below))
        prev = idx or prev
    if not drops:
        raise CalibrationError(f"not enough {polarity} edges to track")
    return float(np.median(drops))


def _track(
    rows, polarity: str, period_ps: float, dt_ps: float
) -> dict[int, tuple[int, int]]:
    """Follow one edge trajectory; returns {step: (edge_index, wrap_count)}.

    The tracked pulse is the one nearest the previous step's position; an
    upward jump close to a multiple of the per-period carry span is a
    source-period wrap and bumps the wrap counter.
    """
    step = _estimate_step_carries(rows, polarity)
    tau0 = dt_ps / step if step > 0 else float("nan")
    period_carries = period_ps / tau0
    tol = max(period_carries / 4.0, 3 * step)

    out: dict[int, tuple[int, int]] = {}
    predicted = None
    m = 0
    for n, phi, edges in rows:
        idx = [e.edge_index for e in edges if e.polarity == polarity]
        if not idx:
            if predicted is not None:
                predicted -= step
            continue
        if predicted is None:
            x = max(idx)
            out[n] = (x, m)
            predicted = x - step
            continue
        best = min(idx, key=lambda v: abs(v - predicted))
        jump = best - predicted
        if abs(jump) <= tol:
            out[n] = (best, m)
            predicted = best - step
        else:
            wraps = round(jump / period_carries)
            if wraps > 0 and abs(jump - wraps * period_carries) <= tol:
                m += wraps
                out[n] = (best, m)
                predicted = best - step
            else:
                predicted -= step  # unmatched; keep coasting
    return out


@dataclass(frozen=True)
class _PooledTrajectory:
    steps: np.ndarray  # phase-step indices
    u_ps: np.ndarray  # unwrapped phase, phi - m*period
    x_mean: np.ndarray
    x_std: np.ndarray  # nan where a step has a single observation
    counts: np.ndarray


def _pool(datasets: Sequence[SweepDataset], polarity: str, min_run: int) -> _PooledTrajectory:
    spec = datasets[0].sweep_spec
    if spec is None:
        raise CalibrationError("datasets lack sweep provenance")
    period = spec.source.period_ps
    dt = spec.dt_ps
    per_step: dict[int, list[tuple[int, int]]] = {}
    for ds in datasets:
        s = ds.sweep_spec
        if s is None or s.dt_ps != dt or s.source.frequency_hz != spec.source.frequency_hz:
            raise CalibrationError("datasets must share the sweep grid to be pooled")
        rows = _frame_edges(ds, min_run)
        for n, (x, m) in _track(rows, polarity, period, dt).items():
            per_step.setdefault(n, []).append((x, m))

    steps, u, mean, std, counts = [], [], [], [], []
    for n in sorted(per_step):
        entries = per_step[n]
        ms = [m for _, m in entries]
        m_star = max(set(ms), key=ms.count)
        xs = np.array([x for x, m in entries if m == m_star], dtype=float)
        # steps not seen by every channel are censored (the edge sits within
        # jitter reach of a chain end, so only favorably-jittered channels
        # report it); keeping them tilts the fitted slope
        if xs.size < len(datasets):
            continue
        steps.append(n)
        u.append(n * dt - m_star * period)
        mean.append(xs.mean())
        std.append(xs.std(ddof=1) if xs.size > 1 else float("nan"))
        counts.append(xs.size)
    if len(steps) < 2:
        raise CalibrationError(f"fewer than two phase steps with {polarity} edges")
    return _PooledTrajectory(
        np.array(steps), np.array(u), np.array(mean), np.array(std), np.array(counts)
    )


# ---------------------------------------------------------------------------
# weighted straight-line fit
# ---------------------------------------------------------------------------


def _wls_line(x: np.ndarray, y: np.ndarray, sigma: np.ndarray):
    """Weighted least squares y = a + b x; returns a, b, var_a, var_b, chi2red, r2."""
    w = 1.0 / sigma**2
    sw = w.sum()
    xbar = (w * x).sum() / sw
    ybar = (w * y).sum() / sw
    sxx = (w * (x - xbar) ** 2).sum()
    b = (w * (x - xbar) * (y - ybar)).sum() / sxx
    a = ybar - b * xbar
    resid = y - (a + b * x)
    dof = max(x.size - 2, 1)
    chi2red = float((w * resid**2).sum() / dof)
    var_b = 1.0 / sxx
    var_a = 1.0 / sw + xbar**2 / sxx
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - float((resid**2).sum() / ss_tot) if ss_tot > 0 else 1.0
    return a, b, var_a, var_b, chi2red, r2


@dataclass(frozen=True)
class CarryTimeFit:
    tau_ps: float
    tau_err_ps: float
    slope_carries_per_ps: float
    intercept_carries: float
    r2: float
    chi2red: float
    n_points: int
    residual_rms_carries: float
    segment_taus_ps: tuple[float, ...] = ()


def _fit_polarity(datasets, polarity, min_run) -> CarryTimeFit:
    tr = _pool(datasets, polarity, min_run)
    sigma = np.where(np.isnan(tr.x_std), np.nan, tr.x_std)
    if np.all(np.isnan(sigma)):
        sigma = np.full_like(tr.u_ps, 1.0)  # unweighted
    else:
        med = np.nanmedian(sigma)
        sigma = np.where(np.isnan(sigma), med, sigma)
    sigma = np.maximum(sigma, QUANT_FLOOR_CARRIES)

    a, b, var_a, var_b, chi2red, r2 = _wls_line(tr.u_ps, tr.x_mean, sigma)
    if b == 0 or not np.isfinite(b):
        raise CalibrationError("degenerate trajectory: zero slope")
    tau = 1.0 / abs(b)
    se_b = math.sqrt(var_b * max(chi2red, 1.0))
    se_tau = se_b / b**2
    resid = tr.x_mean - (a + b * tr.u_ps)

    # per-wrap-segment slopes capture systematic wiggle the pointwise errors
    # miss; the reported error is the larger of the two estimates
    seg_taus = []
    wrap_id = np.round((tr.steps * datasets[0].sweep_spec.dt_ps - tr.u_ps)).astype(np.int64)
    for wid in np.unique(wrap_id):
        sel = wrap_id == wid
        if sel.sum() >= 8:
            _, bs, *_ = _wls_line(tr.u_ps[sel], tr.x_mean[sel], sigma[sel])
            if bs != 0 and np.isfinite(bs):
                seg_taus.append(1.0 / abs(bs))
    if len(seg_taus) >= 2:
        se_seg = float(np.std(seg_taus, ddof=1) / math.sqrt(len(seg_taus)))
        se_tau = max(se_tau, se_seg)

    return CarryTimeFit(
        tau_ps=tau,
        tau_err_ps=se_tau,
        slope_carries_per_ps=b,
        intercept_carries=a,
        r2=r2,
        chi2red=chi2red,
        n_points=int(tr.u_ps.size),
        residual_rms_carries=float(np.sqrt(np.mean(resid**2))),
        segment_taus_ps=tuple(seg_taus),
    )


def fit_carry_times(
    datasets: Sequence[SweepDataset], min_run: int = 15
) -> dict[str, CarryTimeFit]:
    """Per-polarity carry times from pooled sweep data."""
    if not datasets:
        raise CalibrationError("no datasets")
    return {pol: _fit_polarity(datasets, pol, min_run) for pol in (RISING, FALLING)}


# ---------------------------------------------------------------------------
# transfer function
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Monotone map from carry index to time before capture, with
    per-index uncertainty."""

    polarity: str
    index: np.ndarray  # contiguous 1-based carry indices
    t_ps: np.ndarray  # strictly increasing
    dt_ps: np.ndarray  # local uncertainty
    populated: np.ndarray  # bool: index observed directly (vs interpolated)

    def time_of(self, x) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.index, self.t_ps)


def _isotonic_increasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators, then break exact ties with an epsilon ramp."""
    y = y.astype(float).copy()
    n = y.size
    vals, wts, spans = [], [], []
    for i in range(n):
        vals.append(y[i])
        wts.append(1.0)
        spans.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            v = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / (wts[-2] + wts[-1])
            w = wts[-2] + wts[-1]
            s = spans[-2] + spans[-1]
            vals = vals[:-2] + [v]
            wts = wts[:-2] + [w]
            spans = spans[:-2] + [s]
    out = np.empty(n)
    pos = 0
    for v, s in zip(vals, spans):
        out[pos : pos + s] = v
        pos += s
    eps = 1e-9
    for i in range(1, n):
        if out[i] <= out[i - 1]:
            out[i] = out[i - 1] + eps
    return out


def build_transfer_function(
    datasets: Sequence[SweepDataset],
    min_run: int = 15,
    polarity: str = RISING,
) -> TransferFunction:
    """Transpose the edge trajectory into t(x) with dt(x) = t'(x) * dx."""
    tr = _pool(datasets, polarity, min_run)

    # every channel-level observation, placed at the negated unwrapped phase:
    # larger carry index = earlier signal time = more time before the capture
    spec = datasets[0].sweep_spec
    period, dt = spec.source.period_ps, spec.dt_ps
    step_u = dict(zip(tr.steps.tolist(), tr.u_ps.tolist()))
    by_index: dict[int, list[float]] = {}
    for ds in datasets:
        rows = _frame_edges(ds, min_run)
        for n, (x, _m) in _track(rows, polarity, period, dt).items():
            if n in step_u:
                by_index.setdefault(x, []).append(-step_u[n])

    if len(by_index) < 2:
        raise CalibrationError("fewer than two populated carry indices")

    xs = np.array(sorted(by_index))
    t_raw = np.array([float(np.mean(by_index[x])) for x in xs])
    t_raw -= t_raw[0]
    t_mono = _isotonic_increasing(t_raw)

    grid = np.arange(xs[0], xs[-1] + 1)
    populated = np.isin(grid, xs)
    t_grid = np.interp(grid, xs, t_mono)

    # per-phase index scatter transposed onto the index axis
    has_std = ~np.isnan(tr.x_std)
    if has_std.any():
        order = np.argsort(tr.x_mean[has_std])
        sx = tr.x_mean[has_std][order]
        sdx = np.maximum(tr.x_std[has_std][order], QUANT_FLOOR_CARRIES)
        dx_grid = np.interp(grid, sx, sdx)
    else:
        dx_grid = np.full(grid.size, QUANT_FLOOR_CARRIES)
    # windowed secant slope: per-index means are too noisy for a pointwise
    # derivative, and the uncertainty only needs the local scale of t'(x)
    half = max(min(12, (grid.size - 1) // 2), 1)
    lo = np.clip(np.arange(grid.size) - half, 0, grid.size - 1)
    hi = np.clip(np.arange(grid.size) + half, 0, grid.size - 1)
    slope = (t_grid[hi] - t_grid[lo]) / np.maximum(hi - lo, 1)
    slope = np.maximum(slope, 0.0)
    dt_grid = slope * dx_grid

    return TransferFunction(polarity, grid, t_grid, dt_grid, populated)


def single_shot_precision(tf: TransferFunction) -> float:
    """RMS timing uncertainty over the populated dynamic range."""
    vals = tf.dt_ps[tf.populated]
    return float(np.sqrt(np.mean(vals**2)))


# ---------------------------------------------------------------------------
# pulse-shrink analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShrinkResult:
    rate: float  # carries lost per carry of falling-edge travel
    slope: float  # signed fit slope
    intercept: float
    bin_centers: np.ndarray
    bin_mean_width: np.ndarray
    bin_std_width: np.ndarray
    bin_counts: np.ndarray
    samples: tuple[tuple[int, int], ...]  # (falling-edge index, width)


def shrink_analysis(
    dataset: SweepDataset, min_run: int = 15, bin_width: int = 25
) -> ShrinkResult:
    """Pulse width versus falling-edge position, binned and fit to a line."""
    samples = []
    for f in dataset.frames:
        b = smooth_bits(f.bits, min_run).astype(np.int8)
        padded = np.concatenate([[0], b, [0]])
        d = np.diff(padded)
        starts = np.flatnonzero(d == 1)  # 0-based start of 1-run
        ends = np.flatnonzero(d == -1)  # one past 0-based end
        for s, e in zip(starts, ends):
            width = int(e - s)
            if width < min_run:
                continue
            if s == 0 or e == b.size:  # truncated at a chain boundary
                continue
            fall_index = int(s)  # 1-based index of the 0 just below the run
            samples.append((fall_index, width))
    if len(samples) < 2:
        raise CalibrationError("not enough pulses for a shrink fit")

    pos = np.array([s for s, _ in samples], dtype=float)
    wid = np.array([w for _, w in samples], dtype=float)
    bins = (pos // bin_width).astype(int)
    centers, means, stds, counts = [], [], [], []
    for bval in np.unique(bins):
        sel = bins == bval
        centers.append((bval + 0.5) * bin_width)
        means.append(wid[sel].mean())
        stds.append(wid[sel].std(ddof=1) if sel.sum() > 1 else 0.0)
        counts.append(int(sel.sum()))
    if len(centers) < 2:
        raise CalibrationError("fewer than two populated bins")
    centers = np.array(centers)
    means = np.array(means)
    a, b, *_ = _wls_line(centers, means, np.ones_like(centers))
    return ShrinkResult(
        rate=abs(b),
        slope=b,
        intercept=a,
        bin_centers=centers,
        bin_mean_width=means,
        bin_std_width=np.array(stds),
        bin_counts=np.array(counts),
        samples=tuple(samples),
    )


# ---------------------------------------------------------------------------
# full calibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    tau_rise_ps: float
    tau_rise_err_ps: float
    tau_fall_ps: float
    tau_fall_err_ps: float
    t_of_x: TransferFunction
    t_of_x_fall: TransferFunction
    single_shot_rise_ps: float
    single_shot_fall_ps: float
    fits: dict[str, CarryTimeFit]
    min_run: int

    def summary(self) -> dict:
        return {
            "tau_rise_ps": self.tau_rise_ps,
            "tau_rise_err_ps": self.tau_rise_err_ps,
            "tau_fall_ps": self.tau_fall_ps,
            "tau_fall_err_ps": self.tau_fall_err_ps,
            "single_shot_rise_ps": self.single_shot_rise_ps,
            "single_shot_fall_ps": self.single_shot_fall_ps,
            "r2_rise": self.fits[RISING].r2,
            "r2_fall": self.fits[FALLING].r2,
            "n_points_rise": self.fits[RISING].n_points,
            "n_points_fall": self.fits[FALLING].n_points,
            "min_run": self.min_run,
        }


def calibrate(datasets: Sequence[SweepDataset], min_run: int = 15) -> CalibrationResult:
    fits = fit_carry_times(datasets, min_run)
    tf_rise = build_transfer_function(datasets, min_run, RISING)
    tf_fall = build_transfer_function(datasets, min_run, FALLING)
    return CalibrationResult(
        tau_rise_ps=fits[RISING].tau_ps,
        tau_rise_err_ps=fits[RISING].tau_err_ps,
        tau_fall_ps=fits[FALLING].tau_ps,
        tau_fall_err_ps=fits[FALLING].tau_err_ps,
        t_of_x=tf_rise,
        t_of_x_fall=tf_fall,
        single_shot_rise_ps=single_shot_precision(tf_rise),
        single_shot_fall_ps=single_shot_precision(tf_fall),
        fits=fits,
        min_run=min_run,
    )
