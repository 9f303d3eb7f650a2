"""Plain-text formats: flat ``key = value`` files and CSV grids."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest round-trip form, always float-looking
    if value is None:
        return "none"
    return str(value)


def format_kv(items, header=None) -> str:
    lines = [f"# {line}" for line in (header or "").splitlines() if line]
    lines += [f"{key} = {_fmt(value)}" for key, value in items.items()]
    return "\n".join(lines) + "\n"


def write_kv(path, items, header=None):
    Path(path).write_text(format_kv(items, header), encoding="utf-8")


def parse_value(text):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low == "none":
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_kv(text, path=None, raw=False) -> dict:
    """``key = value`` lines; values are typed unless ``raw`` is set."""
    out = {}
    for lineno, src in enumerate(text.splitlines(), start=1):
        line = src.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {src!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", lineno, path)
        out[key] = value if raw else parse_value(value)
    return out


def read_kv(path, raw=False) -> dict:
    return parse_kv(Path(path).read_text(encoding="utf-8"), path=str(path), raw=raw)


def write_grid(path, values, header=None, fmt="%.17g"):
    """Row-major CSV grid, first row = lowest y."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        np.savetxt(fh, np.atleast_2d(values), delimiter=",", fmt=fmt)


def read_grid(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
