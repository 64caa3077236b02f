"""Time units.

All times are kept internally as signed 64-bit integer femtoseconds so that
edge ordering and register sampling never hinge on float comparisons.  The
public API speaks picoseconds (floats are fine; they are rounded to the
nearest femtosecond on entry).
"""

from __future__ import annotations

from fractions import Fraction

FS_PER_PS = 1000


def ps_to_fs(t_ps: float) -> int:
    """Round a picosecond quantity to integer femtoseconds."""
    if isinstance(t_ps, Fraction):
        return int(round(t_ps * FS_PER_PS))
    return int(round(t_ps * FS_PER_PS))


def fs_to_ps(t_fs: int) -> float:
    return t_fs / FS_PER_PS


def format_fs_as_ps(t_fs: int) -> str:
    """Fixed three-decimal picosecond string, exact (no float formatting)."""
    sign = "-" if t_fs < 0 else ""
    q, r = divmod(abs(int(t_fs)), FS_PER_PS)
    return f"{sign}{q}.{r:03d}"
