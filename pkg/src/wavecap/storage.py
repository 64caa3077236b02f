"""Dataset persistence with provenance.

A dataset directory holds:

    spec.config   flat ``key = value`` description of every generating spec
    frames.csv    header ``phase_index,bit_1,...,bit_K``, one row per frame
    times.csv     per-frame capture instants, femtosecond integers
    frames.pgm    P5 raster, one row per frame, bit 1 rendered white
    manifest.json sha256 of each payload file plus format version

Times are integers end to end, so identical specs reproduce byte-identical
files, and the manifest hashes make silent edits loud.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .chain import CaptureFrame, ChainSpec, RegisterSpec
from .sweep import SweepDataset, SweepSpec
from .waveform import PllOutputSpec

__all__ = [
    "StorageError",
    "CorruptFileError",
    "HashMismatchError",
    "VersionSkewError",
    "RunManifest",
    "spec_to_config",
    "config_to_specs",
    "chain_from_config",
    "regs_from_config",
    "sweep_from_config",
    "check_format_version",
    "parse_config_text",
    "save_dataset",
    "load_dataset",
    "write_report",
    "write_pgm",
]

FORMAT_VERSION = 1


class StorageError(Exception):
    pass


class CorruptFileError(StorageError):
    pass


class HashMismatchError(StorageError):
    pass


class VersionSkewError(StorageError):
    pass


# ---------------------------------------------------------------------------
# flat key = value config
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def spec_to_config(
    chain: ChainSpec,
    regs: RegisterSpec,
    sweep: Optional[SweepSpec] = None,
    t_capture_ps: Optional[float] = None,
) -> str:
    """Serialize generating specs as flat key = value text."""
    pairs = [("format_version", FORMAT_VERSION)]
    pairs += [
        ("chain.k", chain.k),
        ("chain.tau_rise_ps", chain.tau_rise_ps),
        ("chain.tau_fall_ps", chain.tau_fall_ps),
        ("chain.tau_sigma_ps", chain.tau_sigma_ps),
        ("chain.entry_delay_ps", chain.entry_delay_ps),
        ("chain.entry_min_pulse_ps", chain.entry_min_pulse_ps),
        ("chain.dnl_ramp", chain.dnl_ramp),
        ("chain.seed", chain.seed),
        ("chain.allow_inverted", chain.allow_inverted),
        ("regs.clock_jitter_sigma_ps", regs.clock_jitter_sigma_ps),
        ("regs.skew_sigma_ps", regs.skew_sigma_ps),
        ("regs.seed", regs.seed),
    ]
    if sweep is not None:
        pairs += [
            ("kind", "sweep"),
            ("source.frequency_hz", sweep.source.frequency_hz),
            ("source.duty_cycle", sweep.source.duty_cycle),
            ("source.phase_offset_ps", sweep.source.phase_offset_ps),
            ("source.period_jitter_sigma_ps", sweep.source.period_jitter_sigma_ps),
            ("source.seed", sweep.source.seed),
            ("sweep.t_capture_ps", sweep.t_capture_ps),
            ("sweep.dt_ps", sweep.dt_ps),
            ("sweep.n_steps", sweep.n_steps),
            ("sweep.relock_dead_cycles", sweep.relock_dead_cycles),
            ("sweep.crystal_jitter_sigma_ps", sweep.crystal_jitter_sigma_ps),
            ("sweep.seed", sweep.seed),
        ]
    else:
        pairs += [("kind", "continuous"), ("continuous.t_capture_ps", t_capture_ps)]
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in pairs)


def parse_config_text(text: str) -> dict[str, str]:
    """Flat key = value lines into a dict; blank lines and # comments skipped."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorruptFileError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise CorruptFileError(f"line {ln}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _take(kv: dict[str, str], key: str, conv):
    if key not in kv:
        raise CorruptFileError(f"missing config key {key!r}")
    return conv(kv.pop(key))


def _as_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise CorruptFileError(f"expected true/false, got {s!r}")
    return s == "true"


def _as_float_tuple(s: str):
    if s == "none":
        return None
    return tuple(float(v) for v in s.split(","))


def _as_int_pair(s: str) -> tuple[int, int]:
    parts = s.split(",")
    if len(parts) != 2:
        raise CorruptFileError(f"expected two integers, got {s!r}")
    return (int(parts[0]), int(parts[1]))


def chain_from_config(kv: dict[str, str]) -> ChainSpec:
    """Consume chain.* keys from an already-parsed config dict."""
    return ChainSpec(
        k=_take(kv, "chain.k", int),
        tau_rise_ps=_take(kv, "chain.tau_rise_ps", float),
        tau_fall_ps=_take(kv, "chain.tau_fall_ps", float),
        tau_sigma_ps=_take(kv, "chain.tau_sigma_ps", float),
        entry_delay_ps=_take(kv, "chain.entry_delay_ps", float),
        entry_min_pulse_ps=_take(kv, "chain.entry_min_pulse_ps", float),
        dnl_ramp=_take(kv, "chain.dnl_ramp", _as_float_tuple),
        seed=_take(kv, "chain.seed", int),
        allow_inverted=_take(kv, "chain.allow_inverted", _as_bool),
    )


def regs_from_config(kv: dict[str, str]) -> RegisterSpec:
    return RegisterSpec(
        clock_jitter_sigma_ps=_take(kv, "regs.clock_jitter_sigma_ps", float),
        skew_sigma_ps=_take(kv, "regs.skew_sigma_ps", float),
        seed=_take(kv, "regs.seed", int),
    )


def sweep_from_config(kv: dict[str, str]) -> SweepSpec:
    source = PllOutputSpec(
        frequency_hz=_take(kv, "source.frequency_hz", float),
        duty_cycle=_take(kv, "source.duty_cycle", float),
        phase_offset_ps=_take(kv, "source.phase_offset_ps", float),
        period_jitter_sigma_ps=_take(kv, "source.period_jitter_sigma_ps", float),
        seed=_take(kv, "source.seed", int),
    )
    return SweepSpec(
        source=source,
        t_capture_ps=_take(kv, "sweep.t_capture_ps", float),
        dt_ps=_take(kv, "sweep.dt_ps", float),
        n_steps=_take(kv, "sweep.n_steps", int),
        relock_dead_cycles=_take(kv, "sweep.relock_dead_cycles", _as_int_pair),
        crystal_jitter_sigma_ps=_take(kv, "sweep.crystal_jitter_sigma_ps", float),
        seed=_take(kv, "sweep.seed", int),
    )


def check_format_version(kv: dict[str, str]) -> None:
    version = _take(kv, "format_version", int)
    if version != FORMAT_VERSION:
        raise VersionSkewError(
            f"config format {version} not supported (expected {FORMAT_VERSION})"
        )


def config_to_specs(
    kv: dict[str, str],
) -> tuple[ChainSpec, RegisterSpec, Optional[SweepSpec], Optional[float]]:
    """Rebuild specs from parsed config; unknown keys are an error."""
    kv = dict(kv)
    check_format_version(kv)
    chain = chain_from_config(kv)
    regs = regs_from_config(kv)
    kind = _take(kv, "kind", str)
    sweep = None
    t_capture = None
    if kind == "sweep":
        sweep = sweep_from_config(kv)
    elif kind == "continuous":
        t_capture = _take(kv, "continuous.t_capture_ps", float)
    else:
        raise CorruptFileError(f"unknown dataset kind {kind!r}")
    if kv:
        raise CorruptFileError(f"unknown config keys: {sorted(kv)}")
    return chain, regs, sweep, t_capture


# ---------------------------------------------------------------------------
# payload files
# ---------------------------------------------------------------------------


def _frames_csv(dataset: SweepDataset) -> bytes:
    k = dataset.k
    header = "phase_index," + ",".join(f"bit_{i}" for i in range(1, k + 1))
    rows = [header]
    for f in dataset.frames:
        idx = "" if f.phase_index is None else str(f.phase_index)
        rows.append(idx + "," + ",".join(str(int(b)) for b in f.bits))
    return ("\n".join(rows) + "\n").encode()


def _times_csv(dataset: SweepDataset) -> bytes:
    rows = ["phase_index,capture_time_fs"]
    for f in dataset.frames:
        idx = "" if f.phase_index is None else str(f.phase_index)
        rows.append(f"{idx},{int(f.capture_time_fs)}")
    return ("\n".join(rows) + "\n").encode()


def write_pgm(bits_matrix: np.ndarray, path: Union[str, Path]) -> None:
    """Binary PGM raster: one row per frame, bit 1 rendered white."""
    m = np.asarray(bits_matrix, dtype=np.uint8)
    if m.ndim != 2:
        raise ValueError("expected a frames x taps matrix")
    header = f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + (m * 255).tobytes())


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    format_version: int
    tool_version: str
    created_utc: str
    hashes: dict[str, str]

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": self.format_version,
                "tool_version": self.tool_version,
                "created_utc": self.created_utc,
                "hashes": self.hashes,
            },
            indent=2,
            sort_keys=True,
        )


def save_dataset(dataset: SweepDataset, directory: Union[str, Path]) -> RunManifest:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    payloads = {
        "spec.config": spec_to_config(
            dataset.chain_spec,
            dataset.reg_spec,
            dataset.sweep_spec,
            dataset.t_capture_ps,
        ).encode(),
        "frames.csv": _frames_csv(dataset),
        "times.csv": _times_csv(dataset),
    }
    for name, data in payloads.items():
        (d / name).write_bytes(data)
    write_pgm(dataset.bits_matrix(), d / "frames.pgm")
    payloads["frames.pgm"] = (d / "frames.pgm").read_bytes()
    manifest = RunManifest(
        format_version=FORMAT_VERSION,
        tool_version=__version__,
        created_utc=datetime.now(timezone.utc).isoformat(),
        hashes={name: _sha256(data) for name, data in sorted(payloads.items())},
    )
    (d / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


def _load_manifest(d: Path) -> RunManifest:
    path = d / "manifest.json"
    if not path.exists():
        raise CorruptFileError(f"{path} is missing")
    try:
        raw = json.loads(path.read_text())
        return RunManifest(
            format_version=int(raw["format_version"]),
            tool_version=str(raw["tool_version"]),
            created_utc=str(raw["created_utc"]),
            hashes=dict(raw["hashes"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"{path} is not a valid manifest: {exc}") from exc


def _parse_frames_csv(data: bytes, k: int) -> list[tuple[Optional[int], np.ndarray]]:
    lines = data.decode().splitlines()
    if not lines:
        raise CorruptFileError("frames.csv is empty")
    expected_header = "phase_index," + ",".join(f"bit_{i}" for i in range(1, k + 1))
    if lines[0] != expected_header:
        raise CorruptFileError("frames.csv header does not match the chain length")
    out = []
    for row_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != k + 1:
            raise CorruptFileError(
                f"frames.csv row {row_no}: expected {k + 1} cells, got {len(cells)}"
            )
        idx = None if cells[0] == "" else int(cells[0])
        try:
            bits = np.array([int(c) for c in cells[1:]], dtype=np.uint8)
        except ValueError as exc:
            raise CorruptFileError(f"frames.csv row {row_no}: {exc}") from exc
        if np.any(bits > 1):
            raise CorruptFileError(f"frames.csv row {row_no}: bits must be 0 or 1")
        out.append((idx, bits))
    return out


def load_dataset(directory: Union[str, Path]) -> SweepDataset:
    d = Path(directory)
    manifest = _load_manifest(d)
    if manifest.format_version != FORMAT_VERSION:
        raise VersionSkewError(
            f"dataset format {manifest.format_version} "
            f"not supported (expected {FORMAT_VERSION})"
        )
    blobs = {}
    for name, want in manifest.hashes.items():
        path = d / name
        if not path.exists():
            raise CorruptFileError(f"{path} is missing")
        blobs[name] = path.read_bytes()
        got = _sha256(blobs[name])
        if got != want:
            raise HashMismatchError(f"{name}: sha256 {got} != manifest {want}")
    chain, regs, sweep, t_capture = config_to_specs(
        parse_config_text(blobs["spec.config"].decode())
    )
    rows = _parse_frames_csv(blobs["frames.csv"], chain.k)
    time_lines = blobs["times.csv"].decode().splitlines()
    if len(time_lines) - 1 != len(rows):
        raise CorruptFileError("times.csv row count does not match frames.csv")
    frames = []
    for (idx, bits), line in zip(rows, time_lines[1:]):
        cells = line.split(",")
        if len(cells) != 2:
            raise CorruptFileError(f"times.csv: malformed row {line!r}")
        frames.append(CaptureFrame(bits, int(cells[1]), idx))
    return SweepDataset(tuple(frames), chain, regs, sweep, t_capture_ps=t_capture)


def write_report(report: dict, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
