"""Calendar months as integers (``year * 12 + month - 1``).

Integer months make gap checks and offsets plain arithmetic and keep the
panel arrays compact.
"""
from __future__ import annotations

import re

_ISO = re.compile(r"^(\d{4})-?(\d{1,2})(?:-\d{1,2})?$")
_US = re.compile(r"^(\d{1,2})/\d{1,2}/(\d{4})$")


def month_index(year: int, month: int) -> int:
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    return year * 12 + month - 1


def parse_month(text: str) -> int:
    """Parse ``YYYY-MM``, ``YYYYMM``, ``YYYY-MM-DD`` or ``M/D/YYYY``."""
    s = str(text).strip()
    m = _ISO.match(s)
    if m:
        return month_index(int(m.group(1)), int(m.group(2)))
    m = _US.match(s)
    if m:
        return month_index(int(m.group(2)), int(m.group(1)))
    raise ValueError(f"unrecognised month: {text!r}")


def format_month(m: int) -> str:
    year, mon = divmod(int(m), 12)
    return f"{year:04d}-{mon + 1:02d}"


def month_of_year(m):
    """1..12; works on ints and integer arrays."""
    return m % 12 + 1


def quarter_start(m):
    return m - m % 3
